"""Arena geometry, world state containers and seeded scenario generation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

Vec2 = np.ndarray  # shape (2,), float64

EGO_RADIUS = 0.15
PED_RADIUS = 0.15
PLACEMENT_CLEARANCE = 0.05
MIN_GOAL_DISTANCE = 1.0
MAX_PLACEMENT_ATTEMPTS = 10_000

# stream tags mixed into the per-episode seed so independent draws never share a stream
STREAM_SAMPLE = 0
STREAM_RESPAWN = 1
STREAM_EGO_RANDOM = 2


class PlacementFailure(RuntimeError):
    """Rejection sampling could not place every agent (arena over-packed)."""


class Controller(str, enum.Enum):
    ORCA = "orca"
    SFM = "sfm"


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """PCG64 generator keyed by ``SeedSequence([seed, *keys])``.

    SeedSequence hashes its entropy words, so distinct key tuples give
    statistically independent streams on every platform.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def derive_seed(seed: int, *keys: int) -> int:
    """Hash ``(seed, *keys)`` to a fresh 64-bit seed."""
    words = np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


def _frozen(a: Any) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ArenaConfig:
    width: float = 3.0
    height: float = 3.0

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"arena dimensions must be positive, got {self.width}x{self.height}")

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    def clamp(self, positions: np.ndarray, radius: float) -> np.ndarray:
        """Clamp disk centres so each disk of ``radius`` stays inside the arena."""
        lo = np.array([radius, radius])
        hi = np.array([self.width - radius, self.height - radius])
        return np.clip(positions, lo, hi)


@dataclass(frozen=True)
class AgentState:
    position: Vec2
    velocity: Vec2
    radius: float
    goal: Vec2


@dataclass(frozen=True)
class EpisodeContext:
    pedestrian_count: int
    horizon: int = 100
    seed: int = 0
    pedestrian_controller: Controller = Controller.SFM
    controller_params: Any = None

    def __post_init__(self) -> None:
        if self.pedestrian_count < 0:
            raise ValueError("pedestrian_count must be >= 0")
        if self.horizon <= 0:
            raise ValueError("horizon must be > 0")


@dataclass(frozen=True, eq=False)
class WorldState:
    """Full simulator state.

    Pedestrians are stored column-wise (``ped_pos[i]`` etc.) for vectorised
    controllers; ``pedestrians`` gives the per-agent view. All arrays are
    read-only.
    """

    ego_pos: np.ndarray
    ego_vel: np.ndarray
    ego_goal: np.ndarray
    ped_pos: np.ndarray
    ped_vel: np.ndarray
    ped_goal: np.ndarray
    context: EpisodeContext
    arena: ArenaConfig = field(default_factory=ArenaConfig)
    step_index: int = 0
    ego_radius: float = EGO_RADIUS
    ped_radius: float = PED_RADIUS

    def __post_init__(self) -> None:
        for name in ("ego_pos", "ego_vel", "ego_goal"):
            arr = _frozen(getattr(self, name))
            if arr.shape != (2,):
                raise ValueError(f"{name} must have shape (2,), got {arr.shape}")
            object.__setattr__(self, name, arr)
        n = self.context.pedestrian_count
        for name in ("ped_pos", "ped_vel", "ped_goal"):
            arr = _frozen(getattr(self, name)).reshape(-1, 2)
            if arr.shape[0] != n:
                raise ValueError(f"{name} has {arr.shape[0]} rows, context says {n}")
            object.__setattr__(self, name, arr)
        if self.step_index > self.context.horizon:
            raise ValueError("step_index exceeds horizon")

    @property
    def n_peds(self) -> int:
        return self.context.pedestrian_count

    @property
    def ego(self) -> AgentState:
        return AgentState(self.ego_pos, self.ego_vel, self.ego_radius, self.ego_goal)

    @property
    def pedestrians(self) -> tuple[AgentState, ...]:
        return tuple(
            AgentState(self.ped_pos[i], self.ped_vel[i], self.ped_radius, self.ped_goal[i])
            for i in range(self.n_peds)
        )

    def all_positions(self) -> np.ndarray:
        """Stacked ``[ego; pedestrians]`` positions, shape (N+1, 2)."""
        return np.vstack([self.ego_pos[None], self.ped_pos])

    def all_velocities(self) -> np.ndarray:
        return np.vstack([self.ego_vel[None], self.ped_vel])

    def all_goals(self) -> np.ndarray:
        return np.vstack([self.ego_goal[None], self.ped_goal])

    def all_radii(self) -> np.ndarray:
        return np.concatenate([[self.ego_radius], np.full(self.n_peds, self.ped_radius)])

    def ped_distances(self) -> np.ndarray:
        """Distances ``d_i = |p_i - p_0|`` from the ego to every pedestrian."""
        return np.hypot(*(self.ped_pos - self.ego_pos).T) if self.n_peds else np.zeros(0)

    def replace(self, **changes: Any) -> "WorldState":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return WorldState(**kw)

    def permuted(self, order: Sequence[int]) -> "WorldState":
        """Same world with the pedestrian list reordered."""
        idx = np.asarray(order, dtype=int)
        return self.replace(ped_pos=self.ped_pos[idx], ped_vel=self.ped_vel[idx], ped_goal=self.ped_goal[idx])

    def _key(self) -> tuple:
        arrays = (self.ego_pos, self.ego_vel, self.ego_goal, self.ped_pos, self.ped_vel, self.ped_goal)
        return (
            tuple(a.tobytes() for a in arrays),
            self.step_index,
            self.context,
            self.arena,
            self.ego_radius,
            self.ped_radius,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WorldState):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key()[0])


def density(n: int, arena: ArenaConfig) -> float:
    """Episode-level crowd density in pedestrians per square metre."""
    if n < 0:
        raise ValueError("pedestrian count must be non-negative")
    return n / arena.area


def local_count(world: WorldState, r: float) -> int:
    """Number of pedestrians within the closed ball of radius ``r`` around the ego."""
    if r <= 0:
        raise ValueError("radius must be positive")
    return int(np.count_nonzero(world.ped_distances() <= r))


def sample_goal(
    rng: np.random.Generator,
    arena: ArenaConfig,
    start: np.ndarray,
    radius: float,
    min_distance: float = MIN_GOAL_DISTANCE,
) -> np.ndarray:
    lo = np.array([radius, radius])
    hi = np.array([arena.width - radius, arena.height - radius])
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        g = rng.uniform(lo, hi)
        if np.hypot(*(g - start)) >= min_distance:
            return g
    raise PlacementFailure(f"no goal at least {min_distance} m from {start.tolist()}")


def sample_episode(
    arena: ArenaConfig,
    n_range: tuple[int, int],
    seed: int,
    controller: Controller | str = Controller.SFM,
    controller_params: Any = None,
    horizon: int = 100,
    ego_radius: float = EGO_RADIUS,
    ped_radius: float = PED_RADIUS,
    clearance: float = PLACEMENT_CLEARANCE,
) -> WorldState:
    """Draw a fresh scenario.

    N is uniform over the inclusive range ``n_range``; the ego and every
    pedestrian are placed by rejection sampling with pairwise gaps above
    ``clearance``, and each receives a uniform goal at least
    ``MIN_GOAL_DISTANCE`` from its start. The result is a pure function of
    the arguments.
    """
    lo_n, hi_n = int(n_range[0]), int(n_range[1])
    if lo_n < 0 or hi_n < lo_n:
        raise ValueError(f"invalid pedestrian range {n_range}")
    controller = Controller(controller)
    rng = make_rng(seed, STREAM_SAMPLE)
    n = int(rng.integers(lo_n, hi_n + 1))

    radii = np.concatenate([[ego_radius], np.full(n, ped_radius)])
    r_max = float(radii.max())
    lo = np.array([r_max, r_max])
    hi = np.array([arena.width - r_max, arena.height - r_max])
    if np.any(hi < lo):
        raise PlacementFailure("arena too small for a single agent")

    placed = np.empty((n + 1, 2))
    attempts = 0
    for k in range(n + 1):
        while True:
            attempts += 1
            if attempts > MAX_PLACEMENT_ATTEMPTS:
                raise PlacementFailure(
                    f"could not place {n + 1} agents in {arena.width}x{arena.height} m "
                    f"after {MAX_PLACEMENT_ATTEMPTS} attempts"
                )
            p = rng.uniform(lo, hi)
            if k == 0:
                break
            gaps = np.hypot(*(placed[:k] - p).T) - (radii[:k] + radii[k])
            if np.all(gaps > clearance):
                break
        placed[k] = p

    goals = np.array([sample_goal(rng, arena, placed[k], radii[k]) for k in range(n + 1)]).reshape(-1, 2)
    ctx = EpisodeContext(
        pedestrian_count=n,
        horizon=horizon,
        seed=int(seed),
        pedestrian_controller=controller,
        controller_params=controller_params,
    )
    return WorldState(
        ego_pos=placed[0],
        ego_vel=np.zeros(2),
        ego_goal=goals[0],
        ped_pos=placed[1:],
        ped_vel=np.zeros((n, 2)),
        ped_goal=goals[1:],
        context=ctx,
        arena=arena,
        step_index=0,
        ego_radius=ego_radius,
        ped_radius=ped_radius,
    )
