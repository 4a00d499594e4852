"""Fixed-dimension observation encoding and running observation normalisation.

Layout: ``[ego (7) | K_max distance-sorted neighbour slots (4 each) | crowd summary]``.
The length does not depend on the number of pedestrians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .world import WorldState

EGO_DIM = 7
SLOT_DIM = 4


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    k_max: int = 16
    k_cap: int = 10
    pos_clip: float = 3.0
    vel_clip: float = 2.0
    pad_sentinel: tuple[float, float, float, float] | None = None  # None -> (pos_clip, pos_clip, 0, 0)
    j_nearest: int = 3
    occupancy_radii: tuple[float, ...] = (0.45, 1.2, 2.0)
    velocity_radius: float = 1.2
    social_eps: float = 0.01
    pressure_sigma: float = 0.8
    pressure_clip: float = 5.0
    inv_dist_clip: float = 20.0
    fraction_clip: float = 2.0
    use_cap: bool = True
    sort: bool = True

    def __post_init__(self) -> None:
        if not 1 <= self.k_cap <= self.k_max:
            raise ValueError(f"need 1 <= k_cap <= k_max, got {self.k_cap}, {self.k_max}")
        if self.pos_clip <= 0 or self.vel_clip <= 0:
            raise ValueError("clip bounds must be positive")
        radii = np.asarray(self.occupancy_radii, dtype=float)
        if np.any(np.diff(radii) <= 0):
            raise ValueError("occupancy_radii must be strictly increasing")
        object.__setattr__(self, "occupancy_radii", tuple(float(r) for r in radii))
        if self.pad_sentinel is not None:
            object.__setattr__(self, "pad_sentinel", tuple(float(x) for x in self.pad_sentinel))

    @property
    def pad(self) -> np.ndarray:
        if self.pad_sentinel is None:
            return np.array([self.pos_clip, self.pos_clip, 0.0, 0.0])
        return np.array(self.pad_sentinel, dtype=float)

    @property
    def active_slots_limit(self) -> int:
        return self.k_cap if self.use_cap else self.k_max

    @property
    def summary_dim(self) -> int:
        return 5 + self.j_nearest + len(self.occupancy_radii)

    @property
    def obs_dim(self) -> int:
        return EGO_DIM + SLOT_DIM * self.k_max + self.summary_dim

    def summary_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Declared per-component (low, high) range of the summary block."""
        j, l = self.j_nearest, len(self.occupancy_radii)
        lo = np.concatenate([[0.0, -1.0], np.zeros(j), np.zeros(l), [0.0], [-self.vel_clip] * 2])
        hi = np.concatenate(
            [[self.pressure_clip, 1.0], np.full(j, self.inv_dist_clip), np.full(l, self.fraction_clip),
             [self.fraction_clip], [self.vel_clip] * 2]
        )
        return lo, hi


def split_observation(obs: np.ndarray, cfg: EncoderConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Views of the (ego, knn, summary) blocks."""
    k_end = EGO_DIM + SLOT_DIM * cfg.k_max
    return obs[:EGO_DIM], obs[EGO_DIM:k_end], obs[k_end:]


def encode_ego(world: WorldState, cfg: EncoderConfig) -> np.ndarray:
    delta = world.ego_goal - world.ego_pos
    d_g = float(np.hypot(*delta))
    return np.concatenate([world.ego_vel, world.ego_pos, delta / max(d_g, cfg.social_eps), [d_g]])


def sort_neighbors(world: WorldState) -> np.ndarray:
    """Pedestrian indices by increasing ego distance, ties kept in list order."""
    return np.argsort(world.ped_distances(), kind="stable")


def _canonical_order(world: WorldState) -> np.ndarray:
    # fixed summation order so sums do not depend on how the pedestrian list is ordered
    return np.lexsort((world.ped_pos[:, 1], world.ped_pos[:, 0], world.ped_distances()))


def encode_knn(world: WorldState, cfg: EncoderConfig) -> np.ndarray:
    slots = np.tile(cfg.pad, (cfg.k_max, 1))
    k_t = min(world.n_peds, cfg.active_slots_limit)
    if k_t:
        order = sort_neighbors(world) if cfg.sort else np.arange(world.n_peds)
        idx = order[:k_t]
        slots[:k_t, :2] = np.clip(world.ped_pos[idx] - world.ego_pos, -cfg.pos_clip, cfg.pos_clip)
        slots[:k_t, 2:] = np.clip(world.ped_vel[idx] - world.ego_vel, -cfg.vel_clip, cfg.vel_clip)
    return slots.reshape(-1)


def crowd_pressure(world: WorldState, cfg: EncoderConfig) -> tuple[float, float]:
    """Log-scaled magnitude of the summed repulsion and its cosine with the ego velocity."""
    if world.n_peds == 0:
        return 0.0, 0.0
    order = _canonical_order(world)
    rel = (world.ped_pos - world.ego_pos)[order]
    d = world.ped_distances()[order]
    weights = np.exp(-d / cfg.pressure_sigma) / np.maximum(d, cfg.social_eps)
    force = -(weights[:, None] * rel).sum(axis=0)
    f_norm = float(np.hypot(*force))
    pressure = min(float(np.log1p(f_norm)), cfg.pressure_clip)
    v_norm = float(np.hypot(*world.ego_vel))
    if f_norm < 1e-9 or v_norm < 1e-9:
        return pressure, 0.0
    align = float(force @ world.ego_vel) / (f_norm * v_norm)
    return pressure, float(np.clip(align, -1.0, 1.0))


def encode_summary(world: WorldState, cfg: EncoderConfig) -> np.ndarray:
    pressure, align = crowd_pressure(world, cfg)
    d = np.sort(world.ped_distances())
    inv = np.zeros(cfg.j_nearest)
    m = min(cfg.j_nearest, d.size)
    inv[:m] = 1.0 / (d[:m] + cfg.social_eps)
    occupancy = np.array([np.count_nonzero(d <= r) for r in cfg.occupancy_radii], dtype=float) / cfg.k_max
    active = world.n_peds / cfg.k_max
    order = _canonical_order(world)
    near = order[world.ped_distances()[order] <= cfg.velocity_radius]
    if near.size:
        mean_dv = (world.ped_vel[near] - world.ego_vel).sum(axis=0) / near.size
    else:
        mean_dv = np.zeros(2)
    out = np.concatenate([[pressure, align], inv, occupancy, [active], mean_dv])
    lo, hi = cfg.summary_bounds()
    return np.clip(out, lo, hi)


def encode(world: WorldState, cfg: EncoderConfig) -> np.ndarray:
    return np.concatenate([encode_ego(world, cfg), encode_knn(world, cfg), encode_summary(world, cfg)])


@dataclass
class RunningNormalizer:
    """Streaming per-component mean/variance (Welford), mergeable across workers."""

    mean: np.ndarray
    m2: np.ndarray
    count: float = 0.0
    clip_bound: float = 10.0
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, dim: int, clip_bound: float = 10.0, epsilon: float = 1e-8) -> "RunningNormalizer":
        return cls(np.zeros(dim), np.zeros(dim), 0.0, clip_bound, epsilon)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def variance(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros_like(self.mean)
        return self.m2 / self.count

    def _check(self, x: np.ndarray) -> None:
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"expected length {self.dim}, got {x.shape[-1]}")

    def update(self, obs: np.ndarray) -> "RunningNormalizer":
        x = np.asarray(obs, dtype=np.float64)
        self._check(x)
        self.count += 1.0
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)
        return self

    def update_batch(self, batch: np.ndarray) -> "RunningNormalizer":
        x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        self._check(x)
        if x.shape[0] == 0:
            return self
        mean = x.mean(axis=0)
        other = RunningNormalizer(mean, ((x - mean) ** 2).sum(axis=0), float(x.shape[0]))
        merged = self.merge(other)
        self.mean, self.m2, self.count = merged.mean, merged.m2, merged.count
        return self

    def merge(self, other: "RunningNormalizer") -> "RunningNormalizer":
        """Combine two partial statistics with the parallel-variance formula."""
        if other.dim != self.dim:
            raise DimensionMismatch(f"cannot merge dims {self.dim} and {other.dim}")
        n = self.count + other.count
        if n == 0:
            return RunningNormalizer(self.mean.copy(), self.m2.copy(), 0.0, self.clip_bound, self.epsilon)
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / n)
        return RunningNormalizer(mean, m2, n, self.clip_bound, self.epsilon)

    def normalize(self, obs: np.ndarray, frozen: bool = True) -> np.ndarray:
        """Standardise and clip; when ``frozen`` is False the statistics are updated first."""
        x = np.asarray(obs, dtype=np.float64)
        if not frozen:
            self.update_batch(x) if x.ndim == 2 else self.update(x)
        elif self.count < 1:
            raise ValueError("frozen normalisation needs at least one observation")
        z = (x - self.mean) / np.sqrt(self.variance + self.epsilon)
        return np.clip(z, -self.clip_bound, self.clip_bound)

    def state_dict(self) -> dict:
        return {
            "count": float(self.count),
            "mean": self.mean.tolist(),
            "m2": self.m2.tolist(),
            "clip_bound": float(self.clip_bound),
            "epsilon": float(self.epsilon),
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "RunningNormalizer":
        return cls(
            np.asarray(state["mean"], dtype=np.float64),
            np.asarray(state["m2"], dtype=np.float64),
            float(state["count"]),
            float(state["clip_bound"]),
            float(state["epsilon"]),
        )
