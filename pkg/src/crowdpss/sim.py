"""Episode engine: kinematics, pedestrian control, collisions and termination."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import peds
from .peds import OrcaParams, SfmParams
from .world import (
    STREAM_RESPAWN,
    ArenaConfig,
    Controller,
    WorldState,
    derive_seed,
    make_rng,
    sample_episode,
    sample_goal,
)


class EpisodeFinished(RuntimeError):
    """``step`` was called on an episode that already terminated."""


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.1
    v_max: float = 1.0
    ped_v_max: float = 1.0
    goal_tolerance: float = 0.2
    freeze_speed: float = 0.05


@dataclass(frozen=True)
class StepEvents:
    collisions: tuple[int, ...]
    ego_reached_goal: bool
    ego_frozen: bool


class OutcomeKind(str, enum.Enum):
    SAFE_SUCCESS = "safe_success"
    UNSAFE_SUCCESS = "unsafe_success"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    total_collision_steps: int
    steps_taken: int

    @property
    def reached_goal(self) -> bool:
        return self.kind is not OutcomeKind.TIMEOUT


def clip_action(command: np.ndarray, v_max: float) -> np.ndarray:
    cmd = np.asarray(command, dtype=np.float64).reshape(2)
    if not np.all(np.isfinite(cmd)):
        raise ValueError(f"non-finite action {cmd.tolist()}")
    return peds.cap_speed(cmd, v_max)


def detect_collisions(world: WorldState) -> list[int]:
    """Indices of pedestrians whose disk strictly overlaps the ego's."""
    d = world.ped_distances()
    return np.flatnonzero(d < world.ego_radius + world.ped_radius).tolist()


def goal_distance(world: WorldState) -> float:
    return float(np.hypot(*(world.ego_goal - world.ego_pos)))


def _respawn_goals(world: WorldState, tolerance: float) -> np.ndarray:
    """Pedestrian goals with a fresh random target for anyone who has arrived.

    The respawn stream is keyed by (episode seed, step, pedestrian) so the
    result depends only on the world itself.
    """
    if world.n_peds == 0:
        return world.ped_goal
    arrived = np.flatnonzero(np.hypot(*(world.ped_goal - world.ped_pos).T) < tolerance)
    if arrived.size == 0:
        return world.ped_goal
    goals = world.ped_goal.copy()
    for i in arrived:
        rng = make_rng(world.context.seed, STREAM_RESPAWN, world.step_index, int(i))
        goals[i] = sample_goal(rng, world.arena, world.ped_pos[i], world.ped_radius)
    return goals


def pedestrian_update(world: WorldState, params: SimParams = SimParams()) -> tuple[np.ndarray, np.ndarray]:
    """Commanded pedestrian velocities and (possibly respawned) goals, shape (N, 2) each."""
    n = world.n_peds
    if n == 0:
        return np.zeros((0, 2)), world.ped_goal
    goals = _respawn_goals(world, params.goal_tolerance)
    view = world.replace(ped_goal=goals)
    ctx = world.context
    if ctx.pedestrian_controller is Controller.ORCA:
        orca = ctx.controller_params if isinstance(ctx.controller_params, OrcaParams) else OrcaParams(max_speed=params.ped_v_max)
        vels = np.array([peds.orca_velocity(i + 1, view, orca, params.dt) for i in range(n)])
    else:
        sfm = ctx.controller_params if isinstance(ctx.controller_params, SfmParams) else SfmParams()
        all_v = peds.sfm_all_velocities(
            view.all_positions(), view.all_velocities(), view.all_goals(), view.all_radii(),
            sfm, params.dt, params.ped_v_max,
        )
        vels = all_v[1:]
    return peds.cap_speed(vels, params.ped_v_max), goals


def run_pedestrians(world: WorldState, params: SimParams = SimParams()) -> list[np.ndarray]:
    vels, _ = pedestrian_update(world, params)
    return list(vels)


def step(world: WorldState, action: np.ndarray, params: SimParams = SimParams()) -> tuple[WorldState, StepEvents]:
    """Advance one tick of ``params.dt``.

    Pedestrian velocities come from their controller evaluated on the
    pre-step world; every position then integrates explicitly and is
    clamped inside the arena. Contact is not resolved, only recorded.
    """
    if world.step_index >= world.context.horizon:
        raise EpisodeFinished(f"step {world.step_index} is at the horizon")
    ego_vel = clip_action(action, params.v_max)
    ped_vel, ped_goal = pedestrian_update(world, params)

    ego_pos = world.arena.clamp(world.ego_pos + ego_vel * params.dt, world.ego_radius)
    ped_pos = world.arena.clamp(world.ped_pos + ped_vel * params.dt, world.ped_radius) if world.n_peds else world.ped_pos
    nxt = world.replace(
        ego_pos=ego_pos,
        ego_vel=ego_vel,
        ped_pos=ped_pos,
        ped_vel=ped_vel,
        ped_goal=ped_goal,
        step_index=world.step_index + 1,
    )
    events = StepEvents(
        collisions=tuple(detect_collisions(nxt)),
        ego_reached_goal=goal_distance(nxt) < params.goal_tolerance,
        ego_frozen=float(np.hypot(*ego_vel)) < params.freeze_speed,
    )
    return nxt, events


def check_termination(world: WorldState, collision_steps: int, params: SimParams = SimParams()) -> Outcome | None:
    """Outcome if the episode is over, ``None`` to continue.

    Collisions never end an episode; they only decide between safe and
    unsafe success.
    """
    if goal_distance(world) < params.goal_tolerance:
        kind = OutcomeKind.SAFE_SUCCESS if collision_steps == 0 else OutcomeKind.UNSAFE_SUCCESS
        return Outcome(kind, collision_steps, world.step_index)
    if world.step_index >= world.context.horizon:
        return Outcome(OutcomeKind.TIMEOUT, collision_steps, world.step_index)
    return None


@dataclass
class Episode:
    """Mutable wrapper that tracks cumulative events for one rollout."""

    world: WorldState
    params: SimParams = field(default_factory=SimParams)
    collision_steps: int = 0
    collision_count: int = 0
    frozen_steps: int = 0
    outcome: Outcome | None = None

    def step(self, action: np.ndarray) -> tuple[WorldState, StepEvents, Outcome | None]:
        if self.outcome is not None:
            raise EpisodeFinished("episode already terminated")
        self.world, events = step(self.world, action, self.params)
        if events.collisions:
            self.collision_steps += 1
            self.collision_count += len(events.collisions)
        self.frozen_steps += int(events.ego_frozen)
        self.outcome = check_termination(self.world, self.collision_steps, self.params)
        return self.world, events, self.outcome


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to draw training/evaluation episodes."""

    arena: ArenaConfig = field(default_factory=ArenaConfig)
    n_range: tuple[int, int] = (11, 16)
    horizon: int = 100
    pedestrian_controller: Controller = Controller.SFM
    controller_params: Any = None

    def sample(self, seed: int, n_range: tuple[int, int] | None = None) -> WorldState:
        return sample_episode(
            self.arena,
            n_range or self.n_range,
            seed,
            self.pedestrian_controller,
            self.controller_params,
            self.horizon,
        )


class NavEnv:
    """Auto-indexing episode source; the k-th reset uses seed ``derive_seed(seed, k)``."""

    def __init__(self, scenario: ScenarioConfig, seed: int, params: SimParams = SimParams()):
        self.scenario = scenario
        self.seed = int(seed)
        self.params = params
        self.episode_index = 0
        self.episode: Episode | None = None

    @property
    def world(self) -> WorldState:
        assert self.episode is not None, "call reset() first"
        return self.episode.world

    def reset(self) -> WorldState:
        world = self.scenario.sample(derive_seed(self.seed, self.episode_index))
        self.episode_index += 1
        self.episode = Episode(world, self.params)
        return world

    def step(self, action: np.ndarray) -> tuple[WorldState, StepEvents, Outcome | None]:
        assert self.episode is not None, "call reset() first"
        return self.episode.step(action)
