"""
Voronoi density, mean speed and fundamental diagrams for comparing simulated
and experimental flows.

Voronoi cells are discretized: every cell of a fine grid over the region is
owned by its nearest pedestrian, and a pedestrian's cell area is the number of
grid cells it owns times h_v squared. Grid cells outside the walkable space are
not assigned.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import spearmanr

from pedorigin._helpers import _fmt, _require_positive
from pedorigin.exceptions import UndefinedDensity
from pedorigin.floorfield import GridField
from pedorigin.ingest import TrajectorySet
from pedorigin.scenario import Rect, Scenario

logger = logging.getLogger(__name__)

DEFAULT_H_V = 0.05


@dataclass(frozen=True)
class DensitySpeedPoint:
    frame: int
    density: float
    speed: float
    area_id: int


@dataclass(frozen=True, eq=False)
class VoronoiMap:
    field: GridField
    n_frames: int


def _region_grid(region: Rect, h_v: float, walkable: Scenario | None):
    _require_positive(h_v, "h_v")
    nx = max(1, int(round(region.w / h_v)))
    ny = max(1, int(round(region.h / h_v)))
    xs = region.x0 + (np.arange(nx) + 0.5) * h_v
    ys = region.y0 + (np.arange(ny) + 0.5) * h_v
    cx, cy = np.meshgrid(xs, ys)
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    usable = walkable.is_walkable(centers) if walkable is not None else np.ones(len(centers), dtype=bool)
    return nx, ny, centers, usable


def _owners(points: np.ndarray, centers: np.ndarray, usable: np.ndarray, h_v: float):
    """
    Owner index per usable cell and Voronoi cell area per pedestrian.
    """
    owner = np.full(len(centers), -1)
    if usable.any():
        _, nearest = cKDTree(points).query(centers[usable])
        owner[usable] = nearest
    counts = np.bincount(owner[owner >= 0], minlength=len(points))
    return owner, counts * h_v * h_v


def voronoi_density(
    positions,
    measurement_area: Rect,
    h_v: float = DEFAULT_H_V,
    region: Rect | None = None,
    walkable: Scenario | None = None,
) -> float:
    """
    (1/|A|) * sum over cells of A of h_v^2 / |V_owner|, pedestrians/m^2.
    region defaults to the measurement area itself.
    """
    points = np.asarray(positions, dtype=float).reshape(-1, 2)
    if not len(points):
        raise UndefinedDensity()
    region = region or measurement_area
    _, _, centers, usable = _region_grid(region, h_v, walkable)
    owner, cell_area = _owners(points, centers, usable, h_v)

    in_area = measurement_area.contains(centers) & (owner >= 0)
    share = h_v * h_v / cell_area[owner[in_area]]
    return float(share.sum() / measurement_area.area)


def mean_speed(trajset: TrajectorySet, frame: int, area: Rect) -> float | None:
    """
    Average central-difference speed of the pedestrians inside area at frame;
    one-sided at the ends of a trajectory. None when nobody is inside.
    """
    entry = trajset.frame_table.get(frame)
    if entry is None:
        return None
    ids, positions, _ = entry
    inside = area.contains(positions)
    speeds = []
    for pid in ids[inside]:
        before = trajset.position_of(int(pid), frame - 1)
        after = trajset.position_of(int(pid), frame + 1)
        here = trajset.position_of(int(pid), frame)
        if before is not None and after is not None:
            speeds.append(np.hypot(*(after - before)) * trajset.fps / 2)
        elif after is not None:
            speeds.append(np.hypot(*(after - here)) * trajset.fps)
        elif before is not None:
            speeds.append(np.hypot(*(here - before)) * trajset.fps)
    if not speeds:
        return None
    return float(np.mean(speeds))


def fundamental_diagram(
    trajset: TrajectorySet,
    area: Rect,
    area_id: int,
    h_v: float = DEFAULT_H_V,
    region: Rect | None = None,
    walkable: Scenario | None = None,
) -> list[DensitySpeedPoint]:
    """
    One density-speed point per frame in which both are defined.
    """
    points = []
    for frame, (_, positions, _) in trajset.frame_table.items():
        speed = mean_speed(trajset, frame, area)
        if speed is None:
            continue
        density = voronoi_density(positions, area, h_v, region, walkable)
        points.append(DensitySpeedPoint(frame, density, speed, area_id))
    return points


def spearman(points: list[DensitySpeedPoint]) -> float:
    """
    Spearman rank correlation between density and speed.
    """
    if len(points) < 3:
        return float("nan")
    result = spearmanr([p.density for p in points], [p.speed for p in points])
    return float(result[0])


def average_voronoi_map(
    trajset: TrajectorySet,
    region: Rect,
    h_v: float = DEFAULT_H_V,
    walkable: Scenario | None = None,
) -> VoronoiMap:
    """
    Per-frame Voronoi density field (1/|V_owner| on each cell) averaged over
    every frame with at least one pedestrian.
    """
    nx, ny, centers, usable = _region_grid(region, h_v, walkable)
    total = np.zeros(len(centers))
    n_frames = 0
    for _, positions, _ in trajset.frame_table.values():
        if not len(positions):
            continue
        owner, cell_area = _owners(positions, centers, usable, h_v)
        assigned = owner >= 0
        total[assigned] += 1.0 / cell_area[owner[assigned]]
        n_frames += 1

    if n_frames == 0:
        logger.warning("%s: no frame with pedestrians, Voronoi map is empty", trajset.name or "trajectories")
    else:
        total /= n_frames
    field = GridField((region.x0, region.y0), h_v, nx, ny, total.reshape(ny, nx))
    return VoronoiMap(field, n_frames)


def write_fd_csv(points: list[DensitySpeedPoint], path: str | Path) -> None:
    lines = ["frame,area_id,density,speed"]
    for p in points:
        lines.append(f"{p.frame},{p.area_id},{_fmt(p.density)},{_fmt(p.speed)}")
    Path(path).write_text("\n".join(lines) + "\n")
