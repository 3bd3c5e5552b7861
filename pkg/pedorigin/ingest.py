"""
Covers everything related to trajectory files: parsing experiment data,
normalizing units, labeling origins, writing normalized files with their
metadata sidecar, and fetching the public experiment archive.
"""

import functools
import io
import logging
import os
import zipfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Literal, TextIO

import numpy as np
import requests
import yaml

from pedorigin._config import DATA_URL_VAR, Decorators
from pedorigin._helpers import _fetch_file, _fmt, _require_positive
from pedorigin.exceptions import FetchError, TrajectoryParseError, ValidationError
from pedorigin.scenario import Scenario

logger = logging.getLogger(__name__)

DEFAULT_EXPERIMENT_FPS = 16.0
EPSILON_X = 0.1


class Origin(str, Enum):
    LEFT = "Left"
    RIGHT = "Right"
    UNKNOWN = "Unknown"


class Source(str, Enum):
    SIMULATED = "Simulated"
    EXPERIMENTAL = "Experimental"


@dataclass(frozen=True, eq=False)
class Pedestrian:
    origin: Origin
    frames: np.ndarray
    positions: np.ndarray

    def with_origin(self, origin: Origin) -> "Pedestrian":
        return Pedestrian(origin, self.frames, self.positions)


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    fps: float
    pedestrians: dict[int, Pedestrian]
    source: Source = Source.EXPERIMENTAL
    name: str = ""
    metadata: dict = field(default_factory=dict)
    unfinished: int = 0

    def frame_range(self) -> tuple[int, int] | None:
        if not self.pedestrians:
            return None
        first = min(int(p.frames[0]) for p in self.pedestrians.values() if len(p.frames))
        last = max(int(p.frames[-1]) for p in self.pedestrians.values() if len(p.frames))
        return first, last

    @functools.cached_property
    def frame_table(self) -> dict[int, tuple[np.ndarray, np.ndarray, tuple[Origin, ...]]]:
        """
        frame -> (ids, positions (n, 2), origins) of every pedestrian recorded
        at that frame, ids ascending.
        """
        buckets: dict[int, list] = {}
        for pid in sorted(self.pedestrians):
            ped = self.pedestrians[pid]
            for frame, position in zip(ped.frames.tolist(), ped.positions):
                buckets.setdefault(frame, []).append((pid, position, ped.origin))
        table = {}
        for frame in sorted(buckets):
            rows = buckets[frame]
            table[frame] = (
                np.array([r[0] for r in rows], dtype=int),
                np.array([r[1] for r in rows], dtype=float).reshape(-1, 2),
                tuple(r[2] for r in rows),
            )
        return table

    def position_of(self, pid: int, frame: int) -> np.ndarray | None:
        ped = self.pedestrians.get(pid)
        if ped is None:
            return None
        k = np.searchsorted(ped.frames, frame)
        if k < len(ped.frames) and ped.frames[k] == frame:
            return ped.positions[k]
        return None

    def replace(self, **changes) -> "TrajectorySet":
        values = {
            "fps": self.fps,
            "pedestrians": self.pedestrians,
            "source": self.source,
            "name": self.name,
            "metadata": self.metadata,
            "unfinished": self.unfinished,
        }
        values.update(changes)
        return TrajectorySet(**values)

    def equals(self, other: "TrajectorySet") -> bool:
        """
        Content equality: fps, names, origins, frames and positions.
        """
        if (
            self.fps != other.fps
            or self.name != other.name
            or self.source != other.source
            or sorted(self.pedestrians) != sorted(other.pedestrians)
        ):
            return False
        for pid, ped in self.pedestrians.items():
            theirs = other.pedestrians[pid]
            if ped.origin != theirs.origin:
                return False
            if not np.array_equal(ped.frames, theirs.frames):
                return False
            if not np.array_equal(ped.positions, theirs.positions):
                return False
        return True


def _number(token: str, line_number: int, source: str, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise TrajectoryParseError(f"non-numeric {what} '{token}'", line_number, source)
    if not np.isfinite(value):
        raise TrajectoryParseError(f"non-finite {what} '{token}'", line_number, source)
    return value


def _integer(token: str, line_number: int, source: str, what: str) -> int:
    value = _number(token, line_number, source, what)
    if value != int(value):
        raise TrajectoryParseError(f"{what} must be an integer, found '{token}'", line_number, source)
    return int(value)


def parse_trajectories(
    stream: TextIO | Iterable[str],
    units: Literal["cm", "m"] = "m",
    fps: float = DEFAULT_EXPERIMENT_FPS,
    name: str = "",
    source: Source = Source.EXPERIMENTAL,
    source_name: str = "<stream>",
) -> TrajectorySet:
    """
    Parses whitespace-separated "id frame x y [z]" lines. Lines starting with
    '#' are comments, z is ignored and cm values are converted to meters.
    Every pedestrian starts with origin Unknown.
    """
    if units not in ("cm", "m"):
        raise ValidationError("units must be 'cm' or 'm'", field="units")
    _require_positive(fps, "fps")
    scale = 0.01 if units == "cm" else 1.0

    rows: dict[int, list[tuple[int, float, float]]] = {}
    for line_number, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) < 4:
            raise TrajectoryParseError(
                f"expected at least 4 columns, found {len(tokens)}", line_number, source_name
            )
        pid = _integer(tokens[0], line_number, source_name, "id")
        frame = _integer(tokens[1], line_number, source_name, "frame")
        x = _number(tokens[2], line_number, source_name, "x")
        y = _number(tokens[3], line_number, source_name, "y")

        samples = rows.setdefault(pid, [])
        if samples and frame <= samples[-1][0]:
            raise TrajectoryParseError(
                f"frames of pedestrian {pid} are not strictly increasing", line_number, source_name
            )
        samples.append((frame, x * scale, y * scale))

    pedestrians = {
        pid: Pedestrian(
            Origin.UNKNOWN,
            np.array([s[0] for s in samples], dtype=int),
            np.array([[s[1], s[2]] for s in samples], dtype=float),
        )
        for pid, samples in rows.items()
    }
    return TrajectorySet(fps=float(fps), pedestrians=pedestrians, source=source, name=name)


def serialize_trajectories(trajset: TrajectorySet) -> str:
    """
    Normalized text form (meters), sorted by id then frame.
    """
    lines = ["# id frame x y"]
    for pid in sorted(trajset.pedestrians):
        ped = trajset.pedestrians[pid]
        for frame, (x, y) in zip(ped.frames.tolist(), ped.positions.tolist()):
            lines.append(f"{pid} {frame} {_fmt(x)} {_fmt(y)}")
    return "\n".join(lines) + "\n"


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.yaml")


def trajectory_metadata(trajset: TrajectorySet) -> dict:
    return {
        "name": trajset.name,
        "fps": trajset.fps,
        "source": trajset.source.value,
        "units": "m",
        "unfinished": trajset.unfinished,
        "origins": {pid: trajset.pedestrians[pid].origin.value for pid in sorted(trajset.pedestrians)},
        **trajset.metadata,
    }


def write_trajectories(trajset: TrajectorySet, path: str | Path) -> Path:
    """
    Writes the normalized trajectory file plus its YAML metadata sidecar.
    Returns the sidecar path.
    """
    path = Path(path)
    path.write_text(serialize_trajectories(trajset))
    meta = sidecar_path(path)
    with open(meta, "w") as f:
        yaml.safe_dump(trajectory_metadata(trajset), f, sort_keys=False)
    return meta


def read_trajectories(
    path: str | Path,
    units: Literal["cm", "m"] = "m",
    fps: float | None = None,
) -> TrajectorySet:
    """
    Reads a trajectory file. When a sidecar exists, fps, name, source, origin
    labels and the remaining metadata come from it.
    """
    path = Path(path)
    meta_path = sidecar_path(path)
    meta = {}
    if meta_path.exists():
        with open(meta_path) as f:
            meta = yaml.safe_load(f) or {}

    rate = fps if fps is not None else meta.get("fps", DEFAULT_EXPERIMENT_FPS)
    source = Source(meta.get("source", Source.EXPERIMENTAL.value))
    with open(path) as f:
        trajset = parse_trajectories(
            f, units=units, fps=rate, name=meta.get("name", path.stem), source=source, source_name=str(path)
        )

    origins = {int(k): Origin(v) for k, v in (meta.get("origins") or {}).items()}
    pedestrians = {
        pid: ped.with_origin(origins.get(pid, Origin.UNKNOWN)) for pid, ped in trajset.pedestrians.items()
    }
    reserved = {"name", "fps", "source", "units", "unfinished", "origins"}
    extra = {k: v for k, v in meta.items() if k not in reserved}
    return trajset.replace(pedestrians=pedestrians, metadata=extra, unfinished=int(meta.get("unfinished", 0)))


def assign_origins(
    trajset: TrajectorySet,
    scenario: Scenario | None = None,
    epsilon_x: float = EPSILON_X,
) -> TrajectorySet:
    """
    Left if the earliest recorded x lies left of the junction centerline,
    Right if right of it, Unknown within epsilon_x of it.
    Positions and frames are left untouched.
    """
    center_x = 0.0
    if scenario is not None:
        center_x = 0.5 * (scenario.target.start[0] + scenario.target.end[0])

    pedestrians = {}
    unknown = 0
    for pid, ped in trajset.pedestrians.items():
        offset = ped.positions[0, 0] - center_x if len(ped.frames) else 0.0
        if abs(offset) < epsilon_x:
            origin = Origin.UNKNOWN
            unknown += 1
        elif offset < 0:
            origin = Origin.LEFT
        else:
            origin = Origin.RIGHT
        pedestrians[pid] = ped.with_origin(origin)

    if unknown:
        logger.warning(
            "%s: %d pedestrians start within %.2f m of the centerline and stay Unknown",
            trajset.name or "trajectories",
            unknown,
            epsilon_x,
        )
    return trajset.replace(pedestrians=pedestrians)


def translate(trajset: TrajectorySet, dx: float, dy: float) -> TrajectorySet:
    shift = np.array([dx, dy])
    pedestrians = {
        pid: Pedestrian(ped.origin, ped.frames, ped.positions + shift) for pid, ped in trajset.pedestrians.items()
    }
    return trajset.replace(pedestrians=pedestrians)


def concat_trajsets(first: TrajectorySet, second: TrajectorySet, name: str | None = None) -> TrajectorySet:
    """
    Appends second after first in time. Ids and frames of the second set are
    shifted past those of the first.
    """
    if first.fps != second.fps:
        raise ValidationError("cannot concatenate trajectories with different fps", field="fps")
    first_range = first.frame_range()
    second_range = second.frame_range()
    frame_shift = 0
    if first_range is not None and second_range is not None:
        frame_shift = first_range[1] + 1 - second_range[0]
    id_shift = max(first.pedestrians, default=-1) + 1 - min(second.pedestrians, default=0)

    pedestrians = dict(first.pedestrians)
    for pid, ped in second.pedestrians.items():
        pedestrians[pid + id_shift] = Pedestrian(ped.origin, ped.frames + frame_shift, ped.positions)
    return first.replace(
        pedestrians=pedestrians,
        name=name or f"{first.name}+{second.name}",
        unfinished=first.unfinished + second.unfinished,
    )


def fetch_archive(url: str, dest: str | Path) -> list[Path]:
    """
    Downloads a trajectory file or a zip of trajectory files into dest.
    Returns the paths of the trajectory files written.
    """
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)

    try:
        content = _fetch_file(url)
    except requests.exceptions.HTTPError as e:
        raise FetchError(
            f"Error, could not fetch archive: {e.response.status_code} - {e.response.reason}"
        )
    except requests.exceptions.RequestException as e:
        raise FetchError(f"Error, could not fetch archive: {e}")

    written = []
    buffer = io.BytesIO(content)
    if zipfile.is_zipfile(buffer):
        with zipfile.ZipFile(buffer) as archive:
            for member in archive.namelist():
                if member.endswith("/") or not member.lower().endswith((".txt", ".dat")):
                    continue
                target = dest / Path(member).name
                target.write_bytes(archive.read(member))
                written.append(target)
    else:
        target = dest / (Path(url.split("?")[0]).name or "trajectories.txt")
        target.write_bytes(content)
        written.append(target)

    logger.info("fetched %d trajectory files into %s", len(written), dest)
    return sorted(written)


@Decorators.check_env_vars
def fetch_default_archive(dest: str | Path) -> list[Path]:
    """
    Fetches the archive named by the PEDORIGIN_DATA_URL environment variable.
    """
    return fetch_archive(os.environ[DATA_URL_VAR], dest)
