"""
Navigation (travel-time) fields on a regular grid.

Values are stored row-major with shape (ny, nx): row j holds the cells whose
centers lie at y = y0 + (j + 0.5) h, column i those at x = x0 + (i + 0.5) h.
"""

import heapq
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from pedorigin._helpers import _fmt, _require_positive
from pedorigin.exceptions import DatasetFormatError, NoWalkableTarget, ValidationError
from pedorigin.scenario import Scenario

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FieldParams:
    h: float = 0.1
    sigma_obs: float = 0.5
    w_obs: float = 0.3
    w_obs_scale: float = 1.0

    def validate(self) -> None:
        _require_positive(self.h, "h")
        _require_positive(self.sigma_obs, "sigma_obs")
        if self.w_obs < 0:
            raise ValidationError("w_obs must be non-negative", field="w_obs")
        if self.w_obs_scale < 0:
            raise ValidationError("w_obs_scale must be non-negative", field="w_obs_scale")


@dataclass(frozen=True, eq=False)
class GridField:
    origin_offset: tuple[float, float]
    h: float
    nx: int
    ny: int
    values: np.ndarray

    @property
    def x0(self) -> float:
        return self.origin_offset[0]

    @property
    def y0(self) -> float:
        return self.origin_offset[1]

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """
        Cell-center coordinates as two (ny, nx) arrays.
        """
        xs = self.x0 + (np.arange(self.nx) + 0.5) * self.h
        ys = self.y0 + (np.arange(self.ny) + 0.5) * self.h
        return np.meshgrid(xs, ys)

    def center(self, j: int, i: int) -> tuple[float, float]:
        return (self.x0 + (i + 0.5) * self.h, self.y0 + (j + 0.5) * self.h)

    def with_values(self, values: np.ndarray) -> "GridField":
        return GridField(self.origin_offset, self.h, self.nx, self.ny, values)


def _empty_grid(scenario: Scenario, h: float) -> GridField:
    _require_positive(h, "h")
    b = scenario.bounds
    nx = max(1, int(round(b.w / h)))
    ny = max(1, int(round(b.h / h)))
    return GridField((b.x0, b.y0), h, nx, ny, np.zeros((ny, nx)))


def walkable_mask(scenario: Scenario, h: float) -> np.ndarray:
    grid = _empty_grid(scenario, h)
    cx, cy = grid.centers()
    points = np.column_stack([cx.ravel(), cy.ravel()])
    return scenario.is_walkable(points).reshape(grid.ny, grid.nx)


def target_mask(scenario: Scenario, grid: GridField) -> np.ndarray:
    """
    Walkable cells that count as reached: cells whose center lies within h/2
    of the target segment, plus every cell of the sink behind it.
    """
    cx, cy = grid.centers()
    points = np.column_stack([cx.ravel(), cy.ravel()])
    (tx0, ty), (tx1, _) = scenario.target.start, scenario.target.end
    on_segment = (
        (np.abs(points[:, 1] - ty) <= grid.h / 2 + 1e-12)
        & (points[:, 0] >= min(tx0, tx1))
        & (points[:, 0] <= max(tx0, tx1))
    )
    in_sink = scenario.sink.contains(points)
    walkable = scenario.is_walkable(points)
    return (walkable & (on_segment | in_sink)).reshape(grid.ny, grid.nx)


def wall_distance(scenario: Scenario, h: float) -> GridField:
    """
    Distance from each walkable cell center to the nearest obstacle; 0 on
    obstacle cells.
    """
    grid = _empty_grid(scenario, h)
    cx, cy = grid.centers()
    points = np.column_stack([cx.ravel(), cy.ravel()])
    walkable = scenario.is_walkable(points)
    distance = np.zeros(len(points))
    distance[walkable] = scenario.wall_distance(points[walkable])
    return grid.with_values(distance.reshape(grid.ny, grid.nx))


def obstacle_density(scenario: Scenario, h: float, sigma_obs: float) -> GridField:
    """
    Gaussian blur (std sigma_obs, cut off at 3 sigma_obs) of the obstacle
    indicator, sampled at cell centers. Space outside the bounds counts as
    obstacle.
    """
    _require_positive(sigma_obs, "sigma_obs")
    grid = _empty_grid(scenario, h)
    indicator = (~walkable_mask(scenario, h)).astype(float)
    blurred = ndimage.gaussian_filter(
        indicator, sigma=sigma_obs / h, truncate=3.0, mode="constant", cval=1.0
    )
    return grid.with_values(np.clip(blurred, 0.0, 1.0))


def cost_field(scenario: Scenario, w_obs: float, h: float, sigma_obs: float = 0.5, w_obs_scale: float = 1.0) -> np.ndarray:
    """
    Local cost per meter, 1 + w_obs_scale * w_obs * obstacle density.
    """
    if w_obs < 0:
        raise ValidationError("w_obs must be non-negative", field="w_obs")
    if w_obs == 0:
        grid = _empty_grid(scenario, h)
        return np.ones((grid.ny, grid.nx))
    rho = obstacle_density(scenario, h, sigma_obs).values
    return 1.0 + w_obs_scale * w_obs * rho


def _prepare(scenario: Scenario, h: float):
    grid = _empty_grid(scenario, h)
    walkable = walkable_mask(scenario, h)
    targets = target_mask(scenario, grid)
    if not targets.any():
        raise NoWalkableTarget()
    return grid, walkable, targets


def travel_time_field(
    scenario: Scenario,
    w_obs: float,
    h: float,
    sigma_obs: float = 0.5,
    w_obs_scale: float = 1.0,
) -> GridField:
    """
    First-order fast marching solution of |grad T| = c(x) with T = 0 on the
    target cells. Obstacle cells and unreachable cells stay +inf.
    """
    started = time.perf_counter()
    grid, walkable, targets = _prepare(scenario, h)
    cost = cost_field(scenario, w_obs, h, sigma_obs, w_obs_scale)
    nx, ny = grid.nx, grid.ny

    inf = math.inf
    t = [inf] * (nx * ny)
    known = [False] * (nx * ny)
    free = walkable.ravel().tolist()
    step = (cost * h).ravel().tolist()

    heap = []
    for k in np.flatnonzero(targets.ravel()):
        t[k] = 0.0
        heap.append((0.0, int(k)))
    heapq.heapify(heap)

    def solve(k: int) -> float:
        j, i = divmod(k, nx)
        a = min(
            t[k - 1] if i > 0 and known[k - 1] else inf,
            t[k + 1] if i < nx - 1 and known[k + 1] else inf,
        )
        b = min(
            t[k - nx] if j > 0 and known[k - nx] else inf,
            t[k + nx] if j < ny - 1 and known[k + nx] else inf,
        )
        if a > b:
            a, b = b, a
        f = step[k]
        if b == inf or b - a >= f:
            return a + f
        return 0.5 * (a + b + math.sqrt(2.0 * f * f - (a - b) ** 2))

    while heap:
        value, k = heapq.heappop(heap)
        if known[k]:
            continue
        known[k] = True
        j, i = divmod(k, nx)
        for nb, ok in (
            (k - 1, i > 0),
            (k + 1, i < nx - 1),
            (k - nx, j > 0),
            (k + nx, j < ny - 1),
        ):
            if not ok or known[nb] or not free[nb]:
                continue
            candidate = solve(nb)
            if candidate < t[nb]:
                t[nb] = candidate
                heapq.heappush(heap, (candidate, nb))

    logger.debug(
        "fast marching on %dx%d grid took %.2fs", nx, ny, time.perf_counter() - started
    )
    return grid.with_values(np.array(t).reshape(ny, nx))


def dijkstra_oracle(
    scenario: Scenario,
    w_obs: float,
    h: float,
    sigma_obs: float = 0.5,
    w_obs_scale: float = 1.0,
) -> GridField:
    """
    8-neighbor shortest paths with edge weight = step length times the mean of
    the endpoint costs. Same boundary conditions as travel_time_field.
    """
    grid, walkable, targets = _prepare(scenario, h)
    cost = cost_field(scenario, w_obs, h, sigma_obs, w_obs_scale)
    ny, nx = walkable.shape
    index = np.arange(nx * ny).reshape(ny, nx)

    rows, cols, weights = [], [], []
    for dj, di in ((0, 1), (1, 0), (1, 1), (1, -1)):
        j0, j1 = 0, ny - dj
        i0, i1 = max(0, -di), nx - max(0, di)
        a = (slice(j0, j1), slice(i0, i1))
        b = (slice(j0 + dj, j1 + dj), slice(i0 + di, i1 + di))
        both = walkable[a] & walkable[b]
        length = h * math.hypot(di, dj)
        rows.append(index[a][both])
        cols.append(index[b][both])
        weights.append(length * 0.5 * (cost[a][both] + cost[b][both]))

    graph = coo_matrix(
        (np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nx * ny, nx * ny),
    ).tocsr()
    sources = np.flatnonzero(targets.ravel())
    dist = dijkstra(graph, directed=False, indices=sources, min_only=True)
    dist[sources] = 0.0
    dist[~walkable.ravel()] = np.inf
    return grid.with_values(dist.reshape(ny, nx))


def _continuous_index(field: GridField, points: np.ndarray):
    u = (points[:, 0] - field.x0) / field.h - 0.5
    v = (points[:, 1] - field.y0) / field.h - 0.5
    i0 = np.clip(np.floor(u).astype(int), 0, max(field.nx - 2, 0))
    j0 = np.clip(np.floor(v).astype(int), 0, max(field.ny - 2, 0))
    fx = np.clip(u - i0, 0.0, 1.0) if field.nx > 1 else np.zeros(len(u))
    fy = np.clip(v - j0, 0.0, 1.0) if field.ny > 1 else np.zeros(len(v))
    return i0, j0, fx, fy


def bilinear_sample_many(field: GridField, points) -> np.ndarray:
    """
    Bilinear interpolation at each point of an (n, 2) array. A point whose
    surrounding cells include +inf samples as +inf.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    tol = 1e-9
    outside = (
        (p[:, 0] < field.x0 - tol)
        | (p[:, 0] > field.x0 + field.nx * field.h + tol)
        | (p[:, 1] < field.y0 - tol)
        | (p[:, 1] > field.y0 + field.ny * field.h + tol)
    )
    if outside.any():
        bad = p[np.argmax(outside)]
        raise ValidationError(f"point ({bad[0]}, {bad[1]}) lies outside the field bounds", field="p")

    i0, j0, fx, fy = _continuous_index(field, p)
    i1 = np.minimum(i0 + 1, field.nx - 1)
    j1 = np.minimum(j0 + 1, field.ny - 1)
    v = field.values
    corners = np.stack([v[j0, i0], v[j0, i1], v[j1, i0], v[j1, i1]], axis=1)
    blocked = np.isinf(corners).any(axis=1)
    safe = np.where(np.isinf(corners), 0.0, corners)
    result = (
        (1 - fx) * (1 - fy) * safe[:, 0]
        + fx * (1 - fy) * safe[:, 1]
        + (1 - fx) * fy * safe[:, 2]
        + fx * fy * safe[:, 3]
    )
    result[blocked] = np.inf
    return result


def bilinear_sample(field: GridField, p) -> float:
    return float(bilinear_sample_many(field, [p])[0])


def write_grid_csv(field: GridField, path: str | Path, comment: str | None = None) -> None:
    """
    Header line "# nx ny h x0 y0", then one comma-separated row per grid row,
    lowest y first.
    """
    lines = [f"# {field.nx} {field.ny} {_fmt(field.h)} {_fmt(field.x0)} {_fmt(field.y0)}"]
    if comment:
        lines.append(f"# {comment}")
    for row in field.values:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid_csv(path: str | Path) -> GridField:
    source = str(path)
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DatasetFormatError("missing grid header", 1, source)
    try:
        nx_s, ny_s, h_s, x0_s, y0_s = lines[0][1:].split()
        nx, ny, h, x0, y0 = int(nx_s), int(ny_s), float(h_s), float(x0_s), float(y0_s)
    except ValueError:
        raise DatasetFormatError("grid header must read '# nx ny h x0 y0'", 1, source)

    rows = []
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            row = [float(v) for v in line.split(",")]
        except ValueError:
            raise DatasetFormatError("non-numeric grid value", number, source)
        if len(row) != nx:
            raise DatasetFormatError(f"expected {nx} values, found {len(row)}", number, source)
        rows.append(row)
    if len(rows) != ny:
        raise DatasetFormatError(f"expected {ny} rows, found {len(rows)}", None, source)
    return GridField((x0, y0), h, nx, ny, np.array(rows))
