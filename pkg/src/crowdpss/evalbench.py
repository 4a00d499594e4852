"""Episode runner, outcome metrics and the density-sweep harness."""

from __future__ import annotations

import csv
import io
import math
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from . import peds
from .encoder import EncoderConfig, RunningNormalizer, encode
from .learn.policy import PolicyParams, forward
from .peds import OrcaParams, SfmParams
from .shaping import ExtrinsicConfig, extrinsic_reward
from .sim import Episode, OutcomeKind, ScenarioConfig, SimParams, goal_distance
from .world import STREAM_EGO_RANDOM, WorldState, derive_seed, make_rng

SWEEP_DENSITIES = (11, 13, 15, 17, 19, 21)

RAW_COLUMNS = (
    "method", "N", "seed", "episode", "outcome", "collision_steps",
    "freeze_fraction", "steps_taken", "final_goal_distance",
)
SUMMARY_COLUMNS = (
    "method", "N", "safe_success_mean", "safe_success_std", "collisions_per_ep_mean",
    "freezing_rate_mean", "timeout_rate", "n_episodes",
)


class EmptyInput(ValueError):
    pass


class EgoPolicy(Protocol):
    name: str

    def reset(self, world: WorldState) -> None: ...

    def act(self, world: WorldState) -> np.ndarray: ...


class OrcaEgo:
    name = "orca"

    def __init__(self, params: OrcaParams = OrcaParams(), dt: float = 0.1):
        self.params, self.dt = params, dt

    def reset(self, world: WorldState) -> None:
        pass

    def act(self, world: WorldState) -> np.ndarray:
        return peds.orca_velocity(0, world, self.params, self.dt)


class SfmEgo:
    name = "sfm"

    def __init__(self, params: SfmParams = SfmParams(), dt: float = 0.1, max_speed: float = 1.0):
        self.params, self.dt, self.max_speed = params, dt, max_speed

    def reset(self, world: WorldState) -> None:
        pass

    def act(self, world: WorldState) -> np.ndarray:
        return peds.sfm_velocity(0, world, self.params, self.dt, self.max_speed)


class RandomEgo:
    """Uniform velocity commands in the speed box, seeded from the episode."""

    name = "random"

    def __init__(self, v_max: float = 1.0):
        self.v_max = v_max
        self.rng = make_rng(0, STREAM_EGO_RANDOM)

    def reset(self, world: WorldState) -> None:
        self.rng = make_rng(world.context.seed, STREAM_EGO_RANDOM)

    def act(self, world: WorldState) -> np.ndarray:
        return self.rng.uniform(-self.v_max, self.v_max, size=2)


class LearnedEgo:
    """Deterministic (mean) action of a trained policy under frozen normalisation."""

    def __init__(self, params: PolicyParams, normalizer: RunningNormalizer, enc_cfg: EncoderConfig, name: str = "learned"):
        self.params, self.normalizer, self.enc_cfg, self.name = params, normalizer, enc_cfg, name

    def reset(self, world: WorldState) -> None:
        pass

    def act(self, world: WorldState) -> np.ndarray:
        obs = self.normalizer.normalize(encode(world, self.enc_cfg), frozen=True)
        mean, _, _ = forward(self.params, obs)
        return mean


@dataclass
class EpisodeRecord:
    method: str
    n: int
    seed: int
    episode: int
    outcome: OutcomeKind
    collision_steps: int
    freeze_fraction: float
    steps_taken: int
    final_goal_distance: float
    pedestrian_controller: str = "sfm"
    trace: list = field(default_factory=list, repr=False)

    @property
    def category(self) -> str:
        """Three-way split: safe success / any collision / collision-free timeout."""
        if self.outcome is OutcomeKind.SAFE_SUCCESS:
            return "safe"
        if self.collision_steps > 0:
            return "collision"
        return "timeout"

    def row(self) -> dict:
        return {
            "method": self.method,
            "N": self.n,
            "seed": self.seed,
            "episode": self.episode,
            "outcome": self.outcome.value,
            "collision_steps": self.collision_steps,
            "freeze_fraction": self.freeze_fraction,
            "steps_taken": self.steps_taken,
            "final_goal_distance": self.final_goal_distance,
        }


def run_episode(
    policy: EgoPolicy,
    world0: WorldState,
    sim_params: SimParams = SimParams(),
    seed: int | None = None,
    episode: int = 0,
    keep_trace: bool = False,
) -> EpisodeRecord:
    policy.reset(world0)
    ep = Episode(world0, sim_params)
    trace = []
    while ep.outcome is None:
        action = np.asarray(policy.act(ep.world), dtype=np.float64)
        world, events, _ = ep.step(action)
        if keep_trace:
            trace.append((action, world, events))
    out = ep.outcome
    return EpisodeRecord(
        method=policy.name,
        n=world0.n_peds,
        seed=world0.context.seed if seed is None else seed,
        episode=episode,
        outcome=out.kind,
        collision_steps=out.total_collision_steps,
        freeze_fraction=ep.frozen_steps / out.steps_taken,
        steps_taken=out.steps_taken,
        final_goal_distance=goal_distance(ep.world),
        pedestrian_controller=world0.context.pedestrian_controller.value,
        trace=trace,
    )


def extrinsic_return(
    policy: EgoPolicy,
    world0: WorldState,
    sim_params: SimParams = SimParams(),
    ext_cfg: ExtrinsicConfig = ExtrinsicConfig(),
) -> tuple[float, bool]:
    """Undiscounted extrinsic return of one episode and whether the goal was reached."""
    policy.reset(world0)
    ep = Episode(world0, sim_params)
    total = 0.0
    while ep.outcome is None:
        prev = ep.world
        nxt, events, _ = ep.step(np.asarray(policy.act(prev), dtype=np.float64))
        total += extrinsic_reward(prev, nxt, events, ext_cfg)
    return total, ep.outcome.reached_goal


@dataclass(frozen=True)
class ConditionMetrics:
    method: str
    n: int
    safe_success_rate: float
    safe_success_std: float
    unsafe_success_rate: float
    timeout_rate: float
    collisions_per_episode: float
    freezing_rate: float
    n_episodes: int
    per_seed_safe: tuple[float, ...]
    category_rates: tuple[tuple[str, float], ...]

    @property
    def goal_reach_rate(self) -> float:
        return self.safe_success_rate + self.unsafe_success_rate

    def row(self) -> dict:
        return {
            "method": self.method,
            "N": self.n,
            "safe_success_mean": self.safe_success_rate,
            "safe_success_std": self.safe_success_std,
            "collisions_per_ep_mean": self.collisions_per_episode,
            "freezing_rate_mean": self.freezing_rate,
            "timeout_rate": self.timeout_rate,
            "n_episodes": self.n_episodes,
        }


MetricsSummary = dict  # (method, N) -> ConditionMetrics


def compute_metrics(records: Sequence[EpisodeRecord]) -> MetricsSummary:
    """Aggregate per (method, N, seed), then mean and std across seeds."""
    if not records:
        raise EmptyInput("no episode records")
    groups: dict[tuple[str, int], dict[int, list[EpisodeRecord]]] = defaultdict(lambda: defaultdict(list))
    for r in records:
        groups[(r.method, r.n)][r.seed].append(r)

    out = {}
    for key in sorted(groups):
        by_seed = groups[key]

        def seed_means(fn) -> np.ndarray:
            return np.array([np.mean([fn(r) for r in by_seed[s]]) for s in sorted(by_seed)])

        safe = seed_means(lambda r: r.outcome is OutcomeKind.SAFE_SUCCESS)
        unsafe = seed_means(lambda r: r.outcome is OutcomeKind.UNSAFE_SUCCESS)
        timeout = seed_means(lambda r: r.outcome is OutcomeKind.TIMEOUT)
        cats = {c: float(seed_means(lambda r, c=c: r.category == c).mean()) for c in ("safe", "collision", "timeout")}
        out[key] = ConditionMetrics(
            method=key[0],
            n=key[1],
            safe_success_rate=float(safe.mean()),
            safe_success_std=float(safe.std(ddof=1)) if safe.size > 1 else 0.0,
            unsafe_success_rate=float(unsafe.mean()),
            timeout_rate=float(timeout.mean()),
            collisions_per_episode=float(seed_means(lambda r: r.collision_steps).mean()),
            freezing_rate=float(seed_means(lambda r: r.freeze_fraction).mean()),
            n_episodes=sum(len(v) for v in by_seed.values()),
            per_seed_safe=tuple(float(x) for x in safe),
            category_rates=tuple(cats.items()),
        )
    return out


def episode_seed(seed: int, n: int, episode: int) -> int:
    return derive_seed(seed, n, episode)


@dataclass(frozen=True)
class SweepTask:
    n: int
    seed: int
    episode: int


def _run_task(args) -> EpisodeRecord:
    policy, scenario, sim_params, task = args
    world0 = scenario.sample(episode_seed(task.seed, task.n, task.episode), (task.n, task.n))
    return run_episode(policy, world0, sim_params, seed=task.seed, episode=task.episode)


def sweep_tasks(ns: Iterable[int], seeds: Iterable[int], episodes_per_seed: int) -> list[SweepTask]:
    return [SweepTask(n, s, e) for n in ns for s in seeds for e in range(episodes_per_seed)]


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, requested)
    env = os.environ.get("CROWDNAV_THREADS")
    return max(1, int(env)) if env else 1


def density_sweep(
    policy: EgoPolicy,
    ns: Sequence[int] = SWEEP_DENSITIES,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    episodes_per_seed: int = 100,
    scenario: ScenarioConfig = ScenarioConfig(),
    sim_params: SimParams = SimParams(),
    workers: int | None = None,
) -> list[EpisodeRecord]:
    """Run every (N, seed, episode) condition; records come back sorted regardless of scheduling."""
    tasks = sweep_tasks(ns, seeds, episodes_per_seed)
    jobs = [(policy, scenario, sim_params, t) for t in tasks]
    n_workers = worker_count(workers)
    if n_workers == 1:
        records = [_run_task(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            records = list(pool.map(_run_task, jobs, chunksize=max(1, len(jobs) // (4 * n_workers))))
    records.sort(key=lambda r: (r.method, r.n, r.seed, r.episode))
    return records


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def raw_csv(records: Sequence[EpisodeRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RAW_COLUMNS)
    for r in sorted(records, key=lambda r: (r.method, r.n, r.seed, r.episode)):
        row = r.row()
        w.writerow([_fmt(row[c]) for c in RAW_COLUMNS])
    return buf.getvalue()


def summary_csv(summary: MetricsSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for key in sorted(summary):
        row = summary[key].row()
        w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def parse_raw_csv(text: str) -> list[EpisodeRecord]:
    rows = csv.DictReader(io.StringIO(text))
    if tuple(rows.fieldnames or ()) != RAW_COLUMNS:
        raise ValueError(f"unexpected raw CSV header {rows.fieldnames}")
    return [
        EpisodeRecord(
            method=r["method"],
            n=int(r["N"]),
            seed=int(r["seed"]),
            episode=int(r["episode"]),
            outcome=OutcomeKind(r["outcome"]),
            collision_steps=int(r["collision_steps"]),
            freeze_fraction=float(r["freeze_fraction"]),
            steps_taken=int(r["steps_taken"]),
            final_goal_distance=float(r["final_goal_distance"]),
        )
        for r in rows
    ]
