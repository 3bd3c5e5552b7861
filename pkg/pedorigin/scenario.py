"""
Parameterized T-junction geometry.

Frame: the junction is centered on x = 0. Both arm corridors run along the x
axis at y in [0, b_cor], the exit corridor runs along +y above the junction and
ends at the target line. Waiting areas sit at the outer ends of the arms and are
joined to them through an entrance opening of width b_entrance.
"""

import dataclasses
import functools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import shapely
import yaml
from shapely.geometry import box
from shapely.ops import unary_union

from pedorigin._helpers import _require_positive
from pedorigin.exceptions import ValidationError

logger = logging.getLogger(__name__)

# Grid lines of the bounds snap to this spacing so that default grids align
# with every wall of the presets.
_BOUNDS_SNAP = 0.1
_BOUNDS_MARGIN = 0.5

PRESET_MIDDLE_CM = (50, 60, 80, 100, 120, 150, 240)
OBSERVATION_AREA_DEPTHS = {1: 1.0, 2: 2.0}


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, lower-left corner plus width and height (m)."""

    x0: float
    y0: float
    w: float
    h: float

    @property
    def x1(self) -> float:
        return self.x0 + self.w

    @property
    def y1(self) -> float:
        return self.y0 + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        """
        Vectorized closed containment test for an (n, 2) array of points.
        """
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        return (
            (p[:, 0] >= self.x0 - tol)
            & (p[:, 0] <= self.x1 + tol)
            & (p[:, 1] >= self.y0 - tol)
            & (p[:, 1] <= self.y1 + tol)
        )

    def contains_rect(self, other: "Rect", tol: float = 1e-9) -> bool:
        return (
            other.x0 >= self.x0 - tol
            and other.y0 >= self.y0 - tol
            and other.x1 <= self.x1 + tol
            and other.y1 <= self.y1 + tol
        )

    def translated(self, dx: float, dy: float) -> "Rect":
        return Rect(self.x0 + dx, self.y0 + dy, self.w, self.h)

    def polygon(self):
        return box(self.x0, self.y0, self.x1, self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.w, self.h)


@dataclass(frozen=True)
class Segment:
    start: tuple[float, float]
    end: tuple[float, float]

    @property
    def length(self) -> float:
        return math.dist(self.start, self.end)


@dataclass(frozen=True)
class ScenarioConfig:
    """
    Dimensions (m) and population of one T-junction run.

    The preset tuple "240-50-240" reads as b_entrance-b_cor-b_exit in cm.
    """

    name: str = "custom"
    b_entrance: float = 2.4
    b_cor: float = 2.4
    b_exit: float = 2.4
    arm_length: float = 4.5
    exit_length: float = 3.0
    waiting_depth: float = 4.0
    waiting_width: float = 24.0
    obs_area_depth: float = 1.0
    measurement_length: float = 2.0
    door_thickness: float = 0.2
    sink_depth: float = 1.0
    agent_count: int = 300
    split_left: float = 0.5
    seed: int = 0

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


def validate_config(config: ScenarioConfig) -> None:
    """
    Raises ValidationError naming the first offending field.
    """
    for name in (
        "b_entrance",
        "b_cor",
        "b_exit",
        "arm_length",
        "exit_length",
        "waiting_depth",
        "waiting_width",
        "obs_area_depth",
        "measurement_length",
        "door_thickness",
        "sink_depth",
    ):
        _require_positive(getattr(config, name), name)

    if config.obs_area_depth > config.exit_length:
        raise ValidationError(
            "obs_area_depth must not exceed exit_length", field="obs_area_depth"
        )
    if config.door_thickness >= config.arm_length:
        raise ValidationError(
            "door_thickness must be smaller than arm_length", field="door_thickness"
        )
    if config.measurement_length > config.arm_length - config.door_thickness:
        raise ValidationError(
            "measurement_length must fit into the arm corridor",
            field="measurement_length",
        )
    if config.measurement_length > config.exit_length:
        raise ValidationError(
            "measurement_length must fit into the exit corridor",
            field="measurement_length",
        )
    if not 0.0 <= config.split_left <= 1.0:
        raise ValidationError("split_left must lie in [0, 1]", field="split_left")
    if int(config.agent_count) != config.agent_count or config.agent_count < 0:
        raise ValidationError(
            "agent_count must be a non-negative integer", field="agent_count"
        )


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    walkable: tuple[Rect, ...]
    obstacles: tuple[tuple[tuple[float, float], ...], ...]
    origin_left: Rect
    origin_right: Rect
    target: Segment
    sink: Rect
    measurement_areas: tuple[Rect, Rect, Rect]
    observation_area: Rect
    bounds: Rect

    @functools.cached_property
    def obstacle_geometry(self):
        geometry = unary_union([shapely.Polygon(p) for p in self.obstacles])
        shapely.prepare(geometry)
        return geometry

    @functools.cached_property
    def walkable_geometry(self):
        return unary_union([r.polygon() for r in self.walkable])

    @property
    def exit_corridor(self) -> Rect:
        c = self.config
        return Rect(-c.b_exit / 2, c.b_cor, c.b_exit, c.exit_length)

    @property
    def target_y(self) -> float:
        return self.target.start[1]

    def is_walkable(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        inside = np.zeros(len(p), dtype=bool)
        for rect in self.walkable:
            inside |= rect.contains(p)
        return inside

    def wall_distance(self, points) -> np.ndarray:
        """
        Euclidean distance of each point to the nearest obstacle.
        """
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        return shapely.distance(self.obstacle_geometry, shapely.points(p))


def _walkable_rects(config: ScenarioConfig) -> list[Rect]:
    c = config
    hx = c.b_exit / 2
    arm_open = c.arm_length - c.door_thickness
    door_y0 = max(0.0, c.b_cor / 2 - c.b_entrance / 2)
    door_y1 = min(c.b_cor, c.b_cor / 2 + c.b_entrance / 2)
    wait_y0 = c.b_cor / 2 - c.waiting_width / 2
    outer = hx + c.arm_length
    target_y = c.b_cor + c.exit_length

    rects = [
        Rect(-hx, 0.0, c.b_exit, c.b_cor),
        Rect(-hx, c.b_cor, c.b_exit, c.exit_length),
        Rect(-hx, target_y, c.b_exit, c.sink_depth),
    ]
    for sign in (-1.0, 1.0):
        arm = Rect(hx, 0.0, arm_open, c.b_cor)
        door = Rect(hx + arm_open, door_y0, c.door_thickness, door_y1 - door_y0)
        waiting = Rect(outer, wait_y0, c.waiting_depth, c.waiting_width)
        for rect in (arm, door, waiting):
            rects.append(rect if sign > 0 else _mirror(rect))
    return rects


def _mirror(rect: Rect) -> Rect:
    return Rect(-rect.x1, rect.y0, rect.w, rect.h)


def _snap_down(value: float) -> float:
    return round(math.floor(round(value / _BOUNDS_SNAP, 9)) * _BOUNDS_SNAP, 10)


def _snap_up(value: float) -> float:
    return round(math.ceil(round(value / _BOUNDS_SNAP, 9)) * _BOUNDS_SNAP, 10)


def _obstacle_rects(walkable: list[Rect], bounds: Rect) -> list[Rect]:
    """
    Decomposes bounds minus the walkable union into rectangles, row by row
    over the grid induced by every rectangle edge.
    """
    xs = sorted({bounds.x0, bounds.x1, *(r.x0 for r in walkable), *(r.x1 for r in walkable)})
    ys = sorted({bounds.y0, bounds.y1, *(r.y0 for r in walkable), *(r.y1 for r in walkable)})

    rects = []
    for j in range(len(ys) - 1):
        y0, y1 = ys[j], ys[j + 1]
        run_start = None
        for i in range(len(xs) - 1):
            center = ((xs[i] + xs[i + 1]) / 2, (y0 + y1) / 2)
            blocked = not any(r.contains([center])[0] for r in walkable)
            if blocked and run_start is None:
                run_start = xs[i]
            if not blocked and run_start is not None:
                rects.append(Rect(run_start, y0, xs[i] - run_start, y1 - y0))
                run_start = None
        if run_start is not None:
            rects.append(Rect(run_start, y0, xs[-1] - run_start, y1 - y0))
    return rects


def build_tjunction(config: ScenarioConfig) -> Scenario:
    """
    Builds the T-junction described by config.
    Raises ValidationError naming the field when a dimension is invalid.
    """
    validate_config(config)
    c = config
    hx = c.b_exit / 2
    target_y = c.b_cor + c.exit_length

    walkable = _walkable_rects(c)
    xs = [v for r in walkable for v in (r.x0, r.x1)]
    ys = [v for r in walkable for v in (r.y0, r.y1)]
    x0 = _snap_down(min(xs) - _BOUNDS_MARGIN)
    y0 = _snap_down(min(ys) - _BOUNDS_MARGIN)
    bounds = Rect(x0, y0, _snap_up(max(xs) + _BOUNDS_MARGIN) - x0, _snap_up(max(ys) + _BOUNDS_MARGIN) - y0)

    obstacles = tuple(
        ((r.x0, r.y0), (r.x1, r.y0), (r.x1, r.y1), (r.x0, r.y1), (r.x0, r.y0))
        for r in _obstacle_rects(walkable, bounds)
    )

    waiting_right = Rect(hx + c.arm_length, c.b_cor / 2 - c.waiting_width / 2, c.waiting_depth, c.waiting_width)
    m = c.measurement_length
    scenario = Scenario(
        config=c,
        walkable=tuple(walkable),
        obstacles=obstacles,
        origin_left=_mirror(waiting_right),
        origin_right=waiting_right,
        target=Segment((-hx, target_y), (hx, target_y)),
        sink=Rect(-hx, target_y, c.b_exit, c.sink_depth),
        measurement_areas=(
            Rect(-hx - m, 0.0, m, c.b_cor),
            Rect(hx, 0.0, m, c.b_cor),
            Rect(-hx, c.b_cor, c.b_exit, m),
        ),
        observation_area=Rect(-hx, target_y - c.obs_area_depth, c.b_exit, c.obs_area_depth),
        bounds=bounds,
    )
    logger.debug("built scenario %s with %d obstacle rectangles", c.name, len(obstacles))
    return scenario


def scenario_presets(middle: Literal["corridor", "entrance"] = "corridor") -> list[ScenarioConfig]:
    """
    The seven experiment geometries, 240-50-240 through 240-240-240.
    By default the varying middle number is the arm-corridor width b_cor;
    middle="entrance" reads it as the waiting-area entrance width instead.
    """
    if middle not in ("corridor", "entrance"):
        raise ValidationError("middle must be 'corridor' or 'entrance'", field="middle")

    presets = []
    for cm in PRESET_MIDDLE_CM:
        width = cm / 100
        name = f"240-{cm}-240"
        if middle == "corridor":
            presets.append(ScenarioConfig(name=name, b_entrance=2.4, b_cor=width, b_exit=2.4))
        else:
            presets.append(ScenarioConfig(name=name, b_entrance=width, b_cor=2.4, b_exit=2.4))
    return presets


def preset_by_name(name: str, middle: Literal["corridor", "entrance"] = "corridor") -> ScenarioConfig:
    """
    Accepts both "240-50-240" and the zero-padded "240-050-240" spelling.
    """
    parts = name.split("-")
    normalized = "-".join(str(int(p)) if p.isdigit() else p for p in parts)
    for preset in scenario_presets(middle):
        if preset.name == normalized:
            return preset
    valid = ", ".join(p.name for p in scenario_presets())
    raise ValidationError(f"unknown preset '{name}', valid presets: {valid}", field="preset")


def scenario_config_from_dict(data: dict) -> ScenarioConfig:
    valid_keys = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = sorted(set(data) - valid_keys)
    if unknown:
        raise ValidationError(
            f"unknown scenario keys {unknown}, valid keys: {sorted(valid_keys)}",
            field=unknown[0],
        )
    return ScenarioConfig(**data)


def scenario_config_to_dict(config: ScenarioConfig) -> dict:
    return dataclasses.asdict(config)


def load_scenario_config(path: str | Path) -> ScenarioConfig:
    """
    Reads a YAML mapping whose keys are ScenarioConfig field names.
    """
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: scenario config must be a mapping", field="config")
    config = scenario_config_from_dict(data)
    validate_config(config)
    return config


def export_geometry(scenario: Scenario) -> dict:
    """
    JSON-ready description of the geometry for external plotting.
    """

    def rect(r: Rect) -> dict:
        return {"x": r.x0, "y": r.y0, "width": r.w, "height": r.h}

    return {
        "name": scenario.config.name,
        "config": scenario_config_to_dict(scenario.config),
        "bounds": rect(scenario.bounds),
        "obstacles": [[list(p) for p in poly] for poly in scenario.obstacles],
        "walkable": [rect(r) for r in scenario.walkable],
        "origins": {"left": rect(scenario.origin_left), "right": rect(scenario.origin_right)},
        "target": {"start": list(scenario.target.start), "end": list(scenario.target.end)},
        "measurement_areas": [rect(r) for r in scenario.measurement_areas],
        "observation_area": rect(scenario.observation_area),
    }


def build_corridor(width: float, length: float, sink_depth: float = 1.0, name: str = "corridor") -> Scenario:
    """
    Straight obstacle-free corridor [0, width] x [0, length] whose target spans
    the full width at y = length. Origins are the lower quarter of the corridor.
    """
    _require_positive(width, "width")
    _require_positive(length, "length")
    _require_positive(sink_depth, "sink_depth")

    corridor = Rect(0.0, 0.0, width, length)
    sink = Rect(0.0, length, width, sink_depth)
    walkable = [corridor, sink]
    x0 = _snap_down(-_BOUNDS_MARGIN)
    y0 = _snap_down(-_BOUNDS_MARGIN)
    bounds = Rect(x0, y0, _snap_up(width + _BOUNDS_MARGIN) - x0, _snap_up(length + sink_depth + _BOUNDS_MARGIN) - y0)
    obstacles = tuple(
        ((r.x0, r.y0), (r.x1, r.y0), (r.x1, r.y1), (r.x0, r.y1), (r.x0, r.y0))
        for r in _obstacle_rects(walkable, bounds)
    )
    third = length / 3
    config = ScenarioConfig(
        name=name,
        b_entrance=width,
        b_cor=width,
        b_exit=width,
        arm_length=length,
        exit_length=length,
        obs_area_depth=min(1.0, length),
        measurement_length=min(2.0, third),
        sink_depth=sink_depth,
        agent_count=0,
    )
    half = Rect(0.0, 0.0, width / 2, length / 4)
    return Scenario(
        config=config,
        walkable=tuple(walkable),
        obstacles=obstacles,
        origin_left=half,
        origin_right=half.translated(width / 2, 0.0),
        target=Segment((0.0, length), (width, length)),
        sink=sink,
        measurement_areas=(
            Rect(0.0, 0.0, width, third),
            Rect(0.0, third, width, third),
            Rect(0.0, 2 * third, width, third),
        ),
        observation_area=Rect(0.0, length - config.obs_area_depth, width, config.obs_area_depth),
        bounds=bounds,
    )
