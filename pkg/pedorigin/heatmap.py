"""
Gaussian density heatmaps over the observation area, origin-fraction labels,
and curation of the resulting dataset.
"""

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from pedorigin._helpers import _fmt, _require_positive
from pedorigin.exceptions import DatasetFormatError, GridMismatchError, ValidationError
from pedorigin.ingest import Origin, Source, TrajectorySet
from pedorigin.scenario import Rect

logger = logging.getLogger(__name__)

DEFAULT_SIGMA = 0.7
DEFAULT_CELL = 0.1
DUPLICATE_TOLERANCE = 1e-12
DATASET_HEADER = "# heatmap-dataset v1"


@dataclass(frozen=True)
class GridSpec:
    """
    Heatmap grid shared by every sample of a dataset. The area is given in
    the target-relative frame: x centered on the corridor, y = 0 at the
    target line.
    """

    nx: int
    ny: int
    h: float
    area: Rect
    sigma: float = DEFAULT_SIGMA

    @property
    def n_features(self) -> int:
        return self.nx * self.ny

    def matches(self, other: "GridSpec", tol: float = 1e-9) -> bool:
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and abs(self.h - other.h) <= tol
            and abs(self.sigma - other.sigma) <= tol
            and all(abs(a - b) <= tol for a, b in zip(self.area.as_tuple(), other.area.as_tuple()))
        )


@dataclass(frozen=True, eq=False)
class HeatmapSample:
    values: np.ndarray
    n_left: int
    n_right: int
    frame: int
    source: Source
    run_name: str

    @property
    def label(self) -> tuple[Fraction, Fraction]:
        total = self.n_left + self.n_right
        return Fraction(self.n_left, total), Fraction(self.n_right, total)

    @property
    def is_equal_split(self) -> bool:
        return self.n_left == self.n_right


@dataclass(eq=False)
class Dataset:
    grid: GridSpec
    samples: list[HeatmapSample]

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, indices) -> "Dataset":
        return Dataset(self.grid, [self.samples[i] for i in indices])


def grid_for_area(area: Rect, h_g: float) -> tuple[int, int]:
    _require_positive(h_g, "h_g")
    return max(1, int(round(area.w / h_g))), max(1, int(round(area.h / h_g)))


def frame_positions(trajset: TrajectorySet, frame: int) -> list[tuple[np.ndarray, Origin]]:
    """
    Positions (as recorded) and origins of every pedestrian with a sample at
    frame.
    """
    entry = trajset.frame_table.get(frame)
    if entry is None:
        return []
    _, positions, origins = entry
    return [(positions[k], origins[k]) for k in range(len(origins))]


def _as_points(positions) -> np.ndarray:
    if len(positions) and isinstance(positions[0], tuple) and isinstance(positions[0][-1], Origin):
        positions = [p for p, _ in positions]
    return np.asarray(positions, dtype=float).reshape(-1, 2)


def gaussian_heatmap(positions, area: Rect, h_g: float = DEFAULT_CELL, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """
    Sum of 2D Gaussian kernels (std sigma, truncated at 3 sigma) evaluated at
    the cell centers of the area grid, shape (ny, nx).
    """
    _require_positive(sigma, "sigma")
    nx, ny = grid_for_area(area, h_g)
    grid = np.zeros((ny, nx))
    points = _as_points(positions)
    cutoff = 3.0 * sigma
    if len(points):
        points = points[area.contains(points, tol=cutoff)]
    if not len(points):
        return grid

    xs = area.x0 + (np.arange(nx) + 0.5) * h_g
    ys = area.y0 + (np.arange(ny) + 0.5) * h_g
    dx = xs[None, None, :] - points[:, 0, None, None]
    dy = ys[None, :, None] - points[:, 1, None, None]
    d2 = dx * dx + dy * dy
    kernel = np.exp(-d2 / (2 * sigma * sigma)) / (2 * math.pi * sigma * sigma)
    kernel[d2 > cutoff * cutoff] = 0.0
    return kernel.sum(axis=0)


def count_origins(entries, area: Rect) -> tuple[int, int]:
    """
    Left and Right pedestrians whose position lies inside area; Unknown
    pedestrians are not counted.
    """
    n_left = n_right = 0
    for position, origin in entries:
        if not area.contains(position)[0]:
            continue
        if origin == Origin.LEFT:
            n_left += 1
        elif origin == Origin.RIGHT:
            n_right += 1
    return n_left, n_right


def label_frame(entries, area: Rect) -> tuple[Fraction, Fraction] | None:
    n_left, n_right = count_origins(entries, area)
    total = n_left + n_right
    if total == 0:
        return None
    return Fraction(n_left, total), Fraction(n_right, total)


def target_relative_area(area: Rect) -> Rect:
    return Rect(-area.w / 2, -area.h, area.w, area.h)


def build_dataset(
    trajsets: Sequence[TrajectorySet],
    area: Rect | Sequence[Rect],
    h_g: float = DEFAULT_CELL,
    sigma: float = DEFAULT_SIGMA,
    frame_stride: int = 1,
) -> Dataset:
    """
    One sample per frame_stride-th frame with a defined label, trajectory sets
    in the given order and frames ascending. area is either shared or given
    per trajectory set; all areas must have the same size.
    """
    _require_positive(h_g, "h_g")
    _require_positive(sigma, "sigma")
    if frame_stride < 1:
        raise ValidationError("frame_stride must be at least 1", field="frame_stride")

    areas = [area] * len(trajsets) if isinstance(area, Rect) else list(area)
    if len(areas) != len(trajsets):
        raise ValidationError("one observation area per trajectory set is required", field="area")

    reference = areas[0] if areas else (area if isinstance(area, Rect) else None)
    if reference is None:
        raise ValidationError("an observation area is required", field="area")
    for other in areas:
        if abs(other.w - reference.w) > 1e-9 or abs(other.h - reference.h) > 1e-9:
            raise ValidationError(
                f"inconsistent area geometry: {other.w}x{other.h} vs {reference.w}x{reference.h}",
                field="area",
            )

    nx, ny = grid_for_area(reference, h_g)
    spec = GridSpec(nx, ny, h_g, target_relative_area(reference), sigma)
    samples = []
    for trajset, window in zip(trajsets, areas):
        span = trajset.frame_range()
        if span is None:
            continue
        first, last = span
        for frame in range(first, last + 1, frame_stride):
            entries = frame_positions(trajset, frame)
            n_left, n_right = count_origins(entries, window)
            if n_left + n_right == 0:
                continue
            values = gaussian_heatmap(entries, window, h_g, sigma)
            samples.append(HeatmapSample(values, n_left, n_right, frame, trajset.source, trajset.name))
        logger.debug("%s: %d samples so far", trajset.name, len(samples))

    logger.info("built dataset with %d samples on a %dx%d grid", len(samples), nx, ny)
    return Dataset(spec, samples)


def dedup_consecutive(dataset: Dataset) -> Dataset:
    """
    Drops a sample whose grid equals (L-inf <= 1e-12) the previous retained
    sample of the same run.
    """
    kept = []
    last: dict[str, np.ndarray] = {}
    for sample in dataset.samples:
        previous = last.get(sample.run_name)
        if previous is not None and np.max(np.abs(sample.values - previous)) <= DUPLICATE_TOLERANCE:
            continue
        kept.append(sample)
        last[sample.run_name] = sample.values
    logger.info("dedup kept %d of %d samples", len(kept), len(dataset))
    return Dataset(dataset.grid, kept)


def default_equal_cap(dataset: Dataset) -> int:
    """
    Count of the second most frequent label.
    """
    counts = Counter(sample.label for sample in dataset.samples).most_common()
    if not counts:
        return 0
    if len(counts) == 1:
        return counts[0][1]
    return counts[1][1]


def rebalance_equal(dataset: Dataset, cap: int | None = None) -> Dataset:
    """
    Thins the 50/50-labeled samples to at most cap, evenly spaced over their
    original order; other samples are untouched.
    """
    if cap is None:
        cap = default_equal_cap(dataset)
    if cap < 0:
        raise ValidationError("cap must be non-negative", field="cap")

    equal_positions = [k for k, s in enumerate(dataset.samples) if s.is_equal_split]
    n_equal = len(equal_positions)
    if n_equal <= cap:
        return Dataset(dataset.grid, list(dataset.samples))

    keep_rank = {(i * n_equal) // cap for i in range(cap)}
    dropped = {pos for rank, pos in enumerate(equal_positions) if rank not in keep_rank}
    samples = [s for k, s in enumerate(dataset.samples) if k not in dropped]
    logger.info("rebalance kept %d of %d equal-split samples", cap, n_equal)
    return Dataset(dataset.grid, samples)


def distribution_report(dataset: Dataset) -> list[tuple[Fraction, Fraction, int]]:
    counts = Counter(sample.label for sample in dataset.samples)
    return [(left, right, counts[(left, right)]) for left, right in sorted(counts)]


def format_distribution_table(rows: list[tuple[Fraction, Fraction, int]]) -> str:
    lines = [f"{'Left':>10} {'Right':>10} {'# Heatmaps':>12}"]
    for left, right, count in rows:
        lines.append(f"{float(left):>10.6f} {float(right):>10.6f} {count:>12d}")
    lines.append(f"{'':>10} {'total':>10} {sum(r[2] for r in rows):>12d}")
    return "\n".join(lines)


def feature_matrix(dataset: Dataset) -> np.ndarray:
    if not dataset.samples:
        return np.empty((0, dataset.grid.n_features))
    return np.stack([s.values.ravel() for s in dataset.samples])


def label_matrix(dataset: Dataset) -> np.ndarray:
    """
    (n, 2) array of percentages (100 * frac_left, 100 * frac_right).
    """
    rows = [(100.0 * float(s.label[0]), 100.0 * float(s.label[1])) for s in dataset.samples]
    return np.array(rows, dtype=float).reshape(-1, 2)


def check_compatible(expected: GridSpec, found: GridSpec) -> None:
    if not expected.matches(found):
        raise GridMismatchError(_describe(expected), _describe(found))


def _describe(grid: GridSpec) -> str:
    a = grid.area
    return f"nx={grid.nx} ny={grid.ny} h={_fmt(grid.h)} sigma={_fmt(grid.sigma)} area={_fmt(a.x0)},{_fmt(a.y0)},{_fmt(a.w)},{_fmt(a.h)}"


def serialize_dataset(dataset: Dataset) -> str:
    lines = [f"{DATASET_HEADER} {_describe(dataset.grid)}"]
    for s in dataset.samples:
        if "," in s.run_name:
            raise ValidationError(f"run name '{s.run_name}' must not contain commas", field="run_name")
        cells = ",".join(_fmt(v) for v in s.values.ravel())
        lines.append(f"{s.run_name},{s.frame},{s.source.value},{s.n_left},{s.n_right},{cells}")
    return "\n".join(lines) + "\n"


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_text(serialize_dataset(dataset))


_HEADER_RE = re.compile(
    r"^# heatmap-dataset v1 nx=(\d+) ny=(\d+) h=(\S+)(?: sigma=(\S+))? area=(\S+),(\S+),(\S+),(\S+)$"
)


def read_dataset(path: str | Path) -> Dataset:
    source = str(path)
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise DatasetFormatError("empty dataset file", 1, source)
    match = _HEADER_RE.match(lines[0])
    if match is None:
        raise DatasetFormatError(f"header must start with '{DATASET_HEADER}'", 1, source)
    nx, ny = int(match.group(1)), int(match.group(2))
    h, ax, ay, aw, ah = (float(match.group(k)) for k in (3, 5, 6, 7, 8))
    sigma = float(match.group(4)) if match.group(4) else DEFAULT_SIGMA
    grid = GridSpec(nx, ny, h, Rect(ax, ay, aw, ah), sigma)

    samples = []
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 5 + nx * ny:
            raise DatasetFormatError(f"expected {5 + nx * ny} fields, found {len(fields)}", number, source)
        try:
            frame, n_left, n_right = int(fields[1]), int(fields[3]), int(fields[4])
            source_kind = Source(fields[2])
            values = np.array([float(v) for v in fields[5:]]).reshape(ny, nx)
        except ValueError as e:
            raise DatasetFormatError(f"malformed sample row: {e}", number, source)
        if n_left < 0 or n_right < 0 or n_left + n_right == 0:
            raise DatasetFormatError("origin counts must be non-negative with a positive sum", number, source)
        samples.append(HeatmapSample(values, n_left, n_right, frame, source_kind, fields[0]))
    return Dataset(grid, samples)
