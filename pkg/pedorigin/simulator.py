"""
Optimal-steps style microscopic simulation of the T-junction merge.

Every tick, agents are stepped one after another in random order. An agent
picks, among candidate points inside its stride disk, the feasible point with
the highest utility: low travel time to the target, far from other agents and
from walls.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import truncnorm

from pedorigin._helpers import _half_up, _require_positive
from pedorigin.exceptions import PlacementError, ValidationError
from pedorigin.floorfield import FieldParams, GridField, bilinear_sample, bilinear_sample_many, travel_time_field
from pedorigin.ingest import Origin, Pedestrian, Source, TrajectorySet
from pedorigin.scenario import Rect, Scenario, ScenarioConfig, build_tjunction, scenario_config_to_dict

logger = logging.getLogger(__name__)


@dataclass
class Agent:
    id: int
    origin: Origin
    position: np.ndarray
    free_speed: float
    radius: float


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.4
    candidate_count: int = 20
    agent_radius: float = 0.195
    repulsion_strength_ped: float = 1.0
    repulsion_range_ped: float = 0.5
    repulsion_strength_obs: float = 0.6
    repulsion_range_obs: float = 0.3
    speed_mean: float = 1.34
    speed_std: float = 0.26
    speed_min: float = 0.5
    speed_max: float = 2.2
    budget_factor: float = 10.0
    placement_attempts: int = 2000
    field: FieldParams = field(default_factory=FieldParams)

    def validate(self) -> None:
        for name in (
            "dt",
            "agent_radius",
            "repulsion_range_ped",
            "repulsion_range_obs",
            "speed_std",
            "speed_min",
            "budget_factor",
        ):
            _require_positive(getattr(self, name), name)
        if self.candidate_count < 4:
            raise ValidationError("candidate_count must be at least 4", field="candidate_count")
        if not self.speed_min <= self.speed_mean <= self.speed_max:
            raise ValidationError(
                "speeds must satisfy speed_min <= speed_mean <= speed_max", field="speed_mean"
            )
        if self.repulsion_strength_ped < 0 or self.repulsion_strength_obs < 0:
            raise ValidationError("repulsion strengths must be non-negative", field="repulsion_strength_ped")
        self.field.validate()

    def replace(self, **changes) -> "SimParams":
        return dataclasses.replace(self, **changes)


def _place(rect: Rect, count: int, radius: float, rng: np.random.Generator, attempts: int, origin: str) -> np.ndarray:
    """
    Random sequential placement of non-overlapping disks inside rect.
    """
    placed = np.empty((count, 2))
    lo = np.array([rect.x0 + radius, rect.y0 + radius])
    span = np.array([rect.w - 2 * radius, rect.h - 2 * radius])
    if count and (span <= 0).any():
        raise PlacementError(origin, 0, count)

    for k in range(count):
        for _ in range(attempts):
            candidate = lo + rng.random(2) * span
            if k == 0 or np.min(np.hypot(*(placed[:k] - candidate).T)) >= 2 * radius:
                placed[k] = candidate
                break
        else:
            raise PlacementError(origin, k, count)
    return placed


def spawn_agents(
    scenario: Scenario,
    config: ScenarioConfig,
    params: SimParams,
    rng: np.random.Generator,
) -> list[Agent]:
    """
    round(agent_count * split_left) agents in the left waiting area, the rest
    in the right one, free speeds from a truncated normal distribution.
    """
    n_left = _half_up(config.agent_count * config.split_left)
    n_right = config.agent_count - n_left
    r = params.agent_radius

    left = _place(scenario.origin_left, n_left, r, rng, params.placement_attempts, "left")
    right = _place(scenario.origin_right, n_right, r, rng, params.placement_attempts, "right")

    a = (params.speed_min - params.speed_mean) / params.speed_std
    b = (params.speed_max - params.speed_mean) / params.speed_std
    speeds = truncnorm.rvs(
        a, b, loc=params.speed_mean, scale=params.speed_std, size=config.agent_count, random_state=rng
    )
    speeds = np.atleast_1d(speeds)

    agents = []
    for k, position in enumerate(np.vstack([left, right])):
        origin = Origin.LEFT if k < n_left else Origin.RIGHT
        agents.append(Agent(k, origin, position.copy(), float(speeds[k]), r))
    return agents


def _candidates(agent: Agent, travel: GridField, params: SimParams, rng: np.random.Generator) -> np.ndarray:
    stride = agent.free_speed * params.dt
    n_outer = math.ceil(2 * params.candidate_count / 3)
    n_inner = params.candidate_count - n_outer
    offset = rng.uniform(0.0, 2 * math.pi)

    outer = offset + 2 * math.pi * np.arange(n_outer) / n_outer
    inner = offset + math.pi / max(n_inner, 1) + 2 * math.pi * np.arange(n_inner) / max(n_inner, 1)
    ring = np.concatenate(
        [
            stride * np.column_stack([np.cos(outer), np.sin(outer)]),
            0.5 * stride * np.column_stack([np.cos(inner), np.sin(inner)]),
        ]
    )

    # Descent direction of T from central differences
    p = agent.position
    d = travel.h
    around = p + np.array([[d, 0.0], [-d, 0.0], [0.0, d], [0.0, -d]])
    directed = np.empty((0, 2))
    try:
        t = bilinear_sample_many(travel, around)
    except ValidationError:
        t = np.full(4, np.inf)
    if np.isfinite(t).all():
        gradient = np.array([t[0] - t[1], t[2] - t[3]])
        norm = np.hypot(*gradient)
        if norm > 0:
            direction = -gradient / norm
            directed = np.vstack([stride * direction, 0.5 * stride * direction])

    return np.vstack([p, p + ring, p + directed])


def step_agent(
    agent: Agent,
    travel: GridField,
    neighbors: np.ndarray,
    scenario: Scenario,
    params: SimParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Returns the next position of agent. The current position is always
    feasible and wins ties.
    """
    candidates = _candidates(agent, travel, params, rng)
    r = agent.radius
    neighbors = np.asarray(neighbors, dtype=float).reshape(-1, 2)

    feasible = scenario.is_walkable(candidates)
    wall = np.full(len(candidates), -np.inf)
    wall[feasible] = scenario.wall_distance(candidates[feasible])
    feasible &= wall >= r

    if len(neighbors):
        reach = agent.free_speed * params.dt + 2 * r + 5 * params.repulsion_range_ped
        near = neighbors[np.hypot(*(neighbors - agent.position).T) <= reach]
    else:
        near = neighbors
    if len(near):
        gaps = np.hypot(
            candidates[:, None, 0] - near[None, :, 0],
            candidates[:, None, 1] - near[None, :, 1],
        )
        feasible &= (gaps >= 2 * r).all(axis=1)
    feasible[0] = True

    chosen = candidates[feasible]
    utility = -bilinear_sample_many(travel, chosen)
    if len(near):
        gap = gaps[feasible] - 2 * r
        utility -= params.repulsion_strength_ped * np.exp(-gap / params.repulsion_range_ped).sum(axis=1)
    utility -= params.repulsion_strength_obs * np.exp(-wall[feasible] / params.repulsion_range_obs)
    utility[~np.isfinite(utility)] = -np.inf
    if not np.isfinite(utility).any():
        return agent.position.copy()
    return chosen[int(np.argmax(utility))].copy()


def _step_budget(agents: list[Agent], travel: GridField, params: SimParams) -> int:
    if not agents:
        return 0
    starts = np.array([a.position for a in agents])
    speeds = np.array([a.free_speed for a in agents])
    times = bilinear_sample_many(travel, starts) / speeds
    if not np.isfinite(times).all():
        raise ValidationError("an agent starts where the target is unreachable", field="scenario")
    return int(math.ceil(params.budget_factor * times.max() / params.dt))


def has_arrived(position: np.ndarray, travel: GridField, target_y: float) -> bool:
    """
    True once position is on or past the target line, or inside a target
    cell where T is 0.
    """
    return bool(position[1] >= target_y or bilinear_sample(travel, position) <= 0.0)


def advance_agents(
    agents: list[Agent],
    travel: GridField,
    scenario: Scenario,
    params: SimParams,
    rng: np.random.Generator,
    budget: int,
) -> tuple[list[list[int]], list[list[np.ndarray]], int, int]:
    """
    Ticks until every agent has arrived or budget ticks have passed.
    Returns per-agent frames and positions (recorded while the agent is still
    walking), the number of ticks and the number of agents left.
    """
    target_y = scenario.target_y
    positions = np.array([a.position for a in agents]).reshape(-1, 2)
    active = np.ones(len(agents), dtype=bool)
    frames: list[list[int]] = [[0] for _ in agents]
    tracks: list[list[np.ndarray]] = [[a.position.copy()] for a in agents]

    tick = 0
    while tick < budget and active.any():
        tick += 1
        for idx in rng.permutation(np.flatnonzero(active)):
            others = active.copy()
            others[idx] = False
            agent = agents[idx]
            agent.position = step_agent(agent, travel, positions[others], scenario, params, rng)
            positions[idx] = agent.position
            if has_arrived(agent.position, travel, target_y):
                active[idx] = False
        for idx in np.flatnonzero(active):
            frames[idx].append(tick)
            tracks[idx].append(positions[idx].copy())
    return frames, tracks, tick, int(active.sum())


def run_simulation(config: ScenarioConfig, params: SimParams | None = None) -> TrajectorySet:
    """
    Simulates one run. Positions are recorded every tick (frame rate 1/dt)
    until each agent reaches the target; the whole run is determined by
    config.seed.
    """
    params = params or SimParams()
    params.validate()
    scenario = build_tjunction(config)
    fps = 1.0 / params.dt
    metadata = {
        "seed": int(config.seed),
        "config_name": config.name,
        "split_left": float(config.split_left),
        "scenario": scenario_config_to_dict(config),
        "sim_params": {k: v for k, v in dataclasses.asdict(params).items() if k != "field"},
        "field_params": dataclasses.asdict(params.field),
    }
    name = f"{config.name}_seed{config.seed}"

    rng = np.random.default_rng(config.seed)
    agents = spawn_agents(scenario, config, params, rng)
    if not agents:
        logger.warning("%s: no agents to simulate", name)
        return TrajectorySet(fps=fps, pedestrians={}, source=Source.SIMULATED, name=name, metadata=metadata)

    f = params.field
    travel = travel_time_field(scenario, f.w_obs, f.h, f.sigma_obs, f.w_obs_scale)
    budget = _step_budget(agents, travel, params)
    frames, tracks, tick, unfinished = advance_agents(agents, travel, scenario, params, rng, budget)

    if unfinished:
        logger.warning("%s: step budget of %d ticks exhausted with %d agents left", name, budget, unfinished)
    logger.info("%s: simulated %d agents over %d ticks", name, len(agents), tick)

    pedestrians = {
        agent.id: Pedestrian(agent.origin, np.array(frames[k], dtype=int), np.array(tracks[k]))
        for k, agent in enumerate(agents)
    }
    return TrajectorySet(
        fps=fps,
        pedestrians=pedestrians,
        source=Source.SIMULATED,
        name=name,
        metadata=metadata,
        unfinished=unfinished,
    )
