"""Extrinsic navigation reward and potential-based proxemic shaping."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .sim import StepEvents, goal_distance
from .world import ArenaConfig, WorldState, local_count


class DomainError(ValueError):
    pass


class ShapingMode(str, enum.Enum):
    NONE = "none"  # extrinsic reward only
    PSS_ONLY = "pss_only"  # proxemic shaping, no density scaling
    PSS_SOCIAL = "pss_social"  # shaping with density-adaptive scaling


@dataclass(frozen=True)
class ShapingConfig:
    d_I: float = 0.45
    d_P: float = 1.2
    k_rep: float = 1.0
    sigma_I: float = 0.15
    clip_c: float = 10.0
    kappa_P: float = 0.5
    w_g: float = 1.0
    w_I: float = 1.0
    w_P: float = 0.5
    r_s: float = 1.2
    gamma: float = 0.99
    beta_0: float = 1.0
    beta_T: float = 0.2
    anneal_steps: int = -1  # -1: half of the run's total training steps
    mode: ShapingMode = ShapingMode.PSS_SOCIAL

    def __post_init__(self) -> None:
        if not 0 < self.d_I < self.d_P:
            raise ValueError(f"need 0 < d_I < d_P, got {self.d_I}, {self.d_P}")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        consts = (self.k_rep, self.sigma_I, self.clip_c, self.kappa_P, self.r_s)
        if min(consts) <= 0 or min(self.w_g, self.w_I, self.w_P, self.beta_0, self.beta_T) < 0:
            raise ValueError("shaping constants must be positive")
        if self.anneal_steps < -1:
            raise ValueError("anneal_steps must be >= 0, or -1 for half the training run")
        object.__setattr__(self, "mode", ShapingMode(self.mode))


@dataclass(frozen=True)
class ExtrinsicConfig:
    goal_reward: float = 10.0
    collision_penalty: float = -5.0
    step_penalty: float = -0.01
    progress_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.goal_reward <= 0 or self.collision_penalty >= 0 or self.step_penalty > 0:
            raise ValueError(f"invalid extrinsic reward constants: {self}")


def phi_I(d: float, cfg: ShapingConfig) -> float:
    """Intimate-zone cost, exponential in the intrusion depth with a clipped exponent."""
    if not 0 <= d < cfg.d_I:
        raise DomainError(f"intimate cost needs 0 <= d < {cfg.d_I}, got {d}")
    return cfg.k_rep * math.exp(min(max((cfg.d_I - d) / cfg.sigma_I, -cfg.clip_c), cfg.clip_c))


def phi_P(d: float, cfg: ShapingConfig) -> float:
    """Personal-zone cost, linear in the distance to the outer boundary."""
    if not cfg.d_I <= d < cfg.d_P:
        raise DomainError(f"personal cost needs {cfg.d_I} <= d < {cfg.d_P}, got {d}")
    return cfg.kappa_P * (cfg.d_P - d)


def zone_costs_from_distances(d: np.ndarray, cfg: ShapingConfig) -> tuple[float, float]:
    d = np.asarray(d, dtype=np.float64)
    inner = d < cfg.d_I
    personal = (d >= cfg.d_I) & (d < cfg.d_P)
    expo = np.clip((cfg.d_I - d[inner]) / cfg.sigma_I, -cfg.clip_c, cfg.clip_c)
    c_i = float(np.sum(cfg.k_rep * np.exp(expo)))
    c_p = float(np.sum(cfg.kappa_P * (cfg.d_P - d[personal])))
    return c_i, c_p


def zone_costs(world: WorldState, cfg: ShapingConfig) -> tuple[float, float]:
    return zone_costs_from_distances(world.ped_distances(), cfg)


def eta(n: int, cfg: ShapingConfig | None = None) -> float:
    """Density scale ``1 / sqrt(max(1, n))``; identically 1 when scaling is disabled."""
    if n < 0:
        raise ValueError("neighbour count must be >= 0")
    if cfg is not None and cfg.mode is ShapingMode.PSS_ONLY:
        return 1.0
    return 1.0 / math.sqrt(max(1, n))


def potential(world: WorldState, cfg: ShapingConfig) -> float:
    c_i, c_p = zone_costs(world, cfg)
    scale = eta(local_count(world, cfg.r_s), cfg)
    return -cfg.w_g * goal_distance(world) - scale * (cfg.w_I * c_i + cfg.w_P * c_p)


def pss_reward(phi_prev: float, phi_next: float, gamma: float) -> float:
    return gamma * phi_next - phi_prev


def extrinsic_reward(prev: WorldState, nxt: WorldState, events: StepEvents, cfg: ExtrinsicConfig) -> float:
    r = cfg.step_penalty + cfg.collision_penalty * len(events.collisions)
    if events.ego_reached_goal:
        r += cfg.goal_reward
    r += cfg.progress_weight * (goal_distance(prev) - goal_distance(nxt))
    return r


def resolve_anneal(cfg: ShapingConfig, total_steps: int) -> ShapingConfig:
    """Fix an automatic anneal horizon to half of ``total_steps``."""
    if cfg.anneal_steps >= 0:
        return cfg
    return replace(cfg, anneal_steps=total_steps // 2)


def beta_at(step: int, cfg: ShapingConfig) -> float:
    """Linearly annealed shaping weight; zero when shaping is disabled."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if cfg.mode is ShapingMode.NONE:
        return 0.0
    if cfg.anneal_steps < 0:
        raise ValueError("anneal horizon unresolved; call resolve_anneal with the run length first")
    if cfg.anneal_steps == 0 or step >= cfg.anneal_steps:
        return cfg.beta_T
    frac = step / cfg.anneal_steps
    return cfg.beta_0 + (cfg.beta_T - cfg.beta_0) * frac


def total_reward(ext: float, pss: float, beta: float) -> float:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    return ext + beta * pss


def shaping_bound(cfg: ShapingConfig, arena: ArenaConfig, max_peds: int, beta: float) -> float:
    """Upper bound on ``beta * |r_pss|`` for any transition in ``arena``."""
    phi_max = (
        cfg.w_g * arena.diagonal
        + cfg.w_I * cfg.k_rep * math.exp(cfg.clip_c) * max_peds
        + cfg.w_P * cfg.kappa_P * cfg.d_P * max_peds
    )
    return beta * (cfg.gamma + 1.0) * phi_max


class PotentialTracker:
    """Holds ``Phi_prev`` for one environment stream and emits shaping rewards."""

    def __init__(self, cfg: ShapingConfig):
        self.cfg = cfg
        self.phi_prev = 0.0

    def reset(self, world: WorldState) -> float:
        self.phi_prev = potential(world, self.cfg)
        return self.phi_prev

    def step(self, world: WorldState) -> float:
        phi_next = potential(world, self.cfg)
        r = pss_reward(self.phi_prev, phi_next, self.cfg.gamma)
        self.phi_prev = phi_next
        return r
