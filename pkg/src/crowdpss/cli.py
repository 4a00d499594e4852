"""Command-line entry point: run, train, sweep, replay.

Exit codes: 0 success, 1 runtime failure (including replay divergence),
2 configuration or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import evalbench
from .config import ConfigError, RunConfig
from .files import (
    TRACE_FORMAT,
    TRACE_VERSION,
    CheckpointError,
    TraceFormatError,
    atomic_write,
    csv_text,
    dump_line,
    load_checkpoint,
    read_trace,
    save_checkpoint,
    state_record,
    step_record,
)
from .learn.trainer import LOG_COLUMNS, train
from .sim import Episode
from .world import WorldState

log = logging.getLogger("crowdpss")

EGO_CHOICES = ("orca", "sfm", "random", "checkpoint")

# config keys allowed to differ when resuming: the run may be extended or redirected
RESUME_MUTABLE = ("train.total_steps", "output.dir", "checkpoint.checkpoint_interval")


class InputError(Exception):
    """Bad user input that is not a config-file problem (exit 2)."""


# -- helpers ------------------------------------------------------------------


def _load_config(args) -> RunConfig:
    cfg = config_mod.load(args.config, args.set)
    if getattr(args, "out", None):
        cfg = config_mod.apply_overrides(cfg, [f'output.dir="{args.out}"'])
    return cfg


def _file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def make_ego(name: str, cfg: RunConfig, checkpoint: str | None):
    if name == "orca":
        return evalbench.OrcaEgo(cfg.orca, cfg.sim.dt)
    if name == "sfm":
        return evalbench.SfmEgo(cfg.sfm, cfg.sim.dt, cfg.sim.v_max)
    if name == "random":
        return evalbench.RandomEgo(cfg.sim.v_max)
    if not checkpoint:
        raise InputError("--ego checkpoint requires --checkpoint PATH")
    if not Path(checkpoint).is_file():
        raise InputError(f"checkpoint not found: {checkpoint}")
    try:
        state, _ = load_checkpoint(checkpoint, cfg.ppo)
    except CheckpointError as exc:
        raise InputError(str(exc)) from None
    if state.params.obs_dim != cfg.encoder.obs_dim:
        raise InputError(f"checkpoint expects observations of length {state.params.obs_dim}, config gives {cfg.encoder.obs_dim}")
    return evalbench.LearnedEgo(state.params, state.normalizer, cfg.encoder, name="checkpoint")


def _initial_world(cfg: RunConfig, seed: int, n: int | None) -> WorldState:
    return cfg.scenario().sample(seed, None if n is None else (n, n))


# -- run / replay -------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = _load_config(args)
    seed = cfg.episode.seed if args.seed is None else args.seed
    ego = make_ego(args.ego, cfg, args.checkpoint)
    world0 = _initial_world(cfg, seed, args.n)
    n = world0.n_peds
    path = Path(args.trace) if args.trace else Path(cfg.output.dir) / f"trace_{args.ego}_n{n}_seed{seed}.jsonl"

    header = {
        "format": TRACE_FORMAT,
        "version": TRACE_VERSION,
        "ego": args.ego,
        "seed": seed,
        "n": n,
        "config_digest": cfg.digest(),
        "config": cfg.flat(),
        "checkpoint_digest": _file_digest(args.checkpoint) if args.ego == "checkpoint" else None,
        "initial": state_record(world0),
    }
    lines = [dump_line(header)]
    ego.reset(world0)
    ep = Episode(world0, cfg.sim)
    while ep.outcome is None:
        action = np.asarray(ego.act(ep.world), dtype=np.float64)
        world, events, _ = ep.step(action)
        lines.append(dump_line(step_record(action, world, events)))
    out = ep.outcome
    summary = {
        "outcome": out.kind.value,
        "steps_taken": out.steps_taken,
        "collision_steps": out.total_collision_steps,
        "reached_goal": out.reached_goal,
    }
    lines.append(dump_line({"summary": summary}))
    atomic_write(path, "".join(lines))
    print(
        f"outcome={out.kind.value} steps={out.steps_taken} collision_steps={out.total_collision_steps} "
        f"reached_goal={str(out.reached_goal).lower()} ego={args.ego} n={n} seed={seed} trace={path}"
    )
    return 0


def _compare(step: int, recorded: dict, world: WorldState) -> str | None:
    expected = state_record(world)
    for key in ("ego_pos", "ego_vel", "ego_goal", "ped_pos", "ped_vel", "ped_goal"):
        got = np.asarray(recorded.get(key), dtype=np.float64)
        want = np.asarray(expected[key], dtype=np.float64)
        if got.shape != want.shape or not np.array_equal(got.view(np.uint64), want.view(np.uint64)):
            return f"divergence at step {step}: field {key} recorded {recorded.get(key)} recomputed {expected[key]}"
    return None


def replay_trace(path: str | Path) -> str | None:
    """Re-simulate a trace; returns a description of the first divergence, or None."""
    header, records = read_trace(path)
    cfg = config_mod.from_flat(header["config"])
    if cfg.digest() != header["config_digest"]:
        return "config digest mismatch in trace header"
    world = _initial_world(cfg, header["seed"], header["n"])
    msg = _compare(0, header["initial"], world)
    if msg:
        return msg
    steps = [r for r in records if "summary" not in r]
    ep = Episode(world, cfg.sim)
    for rec in steps:
        if ep.outcome is not None:
            return f"divergence at step {rec['step']}: episode already ended at step {ep.world.step_index}"
        world, events, _ = ep.step(np.asarray(rec["action"], dtype=np.float64))
        if world.step_index != rec["step"]:
            return f"divergence at step {rec['step']}: recomputed step index {world.step_index}"
        msg = _compare(rec["step"], rec, world)
        if msg:
            return msg
        ev = {"collisions": list(events.collisions), "reached_goal": events.ego_reached_goal, "frozen": events.ego_frozen}
        if ev != rec["events"]:
            return f"divergence at step {rec['step']}: events recorded {rec['events']} recomputed {ev}"
    if ep.outcome is None:
        return f"trace ends at step {ep.world.step_index} before the episode terminated"
    summaries = [r["summary"] for r in records if "summary" in r]
    if summaries and summaries[-1]["outcome"] != ep.outcome.kind.value:
        return f"outcome recorded {summaries[-1]['outcome']} recomputed {ep.outcome.kind.value}"
    return None


def cmd_replay(args) -> int:
    if not Path(args.trace).is_file():
        raise InputError(f"trace not found: {args.trace}")
    msg = replay_trace(args.trace)
    if msg:
        print(f"replay FAILED: {msg}")
        return 1
    print(f"replay OK: {args.trace}")
    return 0


# -- train --------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(cfg.output.dir)
    flat = cfg.flat()
    state = None
    if args.resume:
        if not Path(args.resume).is_file():
            raise InputError(f"checkpoint not found: {args.resume}")
        try:
            state, saved = load_checkpoint(args.resume, cfg.ppo)
        except CheckpointError as exc:
            raise InputError(str(exc)) from None
        diff = sorted(k for k in set(saved) | set(flat) if k not in RESUME_MUTABLE and saved.get(k) != flat.get(k))
        if diff:
            raise ConfigError(f"config does not match checkpoint snapshot: {', '.join(diff)}")
        log.info("resuming from step %d", state.step)

    atomic_write(out_dir / "config.toml", cfg.dumps())
    interval = cfg.checkpoint.checkpoint_interval

    def write_outputs(st) -> Path:
        path = save_checkpoint(out_dir / f"ckpt_{st.step:09d}.npz", st, flat)
        atomic_write(out_dir / "train_log.csv", csv_text(LOG_COLUMNS, st.log_rows))
        return path

    def on_iteration(st, row):
        if interval > 0 and st.iteration % interval == 0:
            write_outputs(st)

    state = train(
        cfg.scenario(), cfg.sim, cfg.encoder, cfg.shaping, cfg.extrinsic, cfg.ppo, cfg.train,
        state=state, on_iteration=on_iteration,
    )
    path = write_outputs(state)
    last = state.log_rows[-1] if state.log_rows else {}
    print(
        f"trained steps={state.step} iterations={state.iteration} "
        f"mean_ext_return={last.get('mean_ext_return', float('nan')):.4f} checkpoint={path}"
    )
    return 0


# -- sweep --------------------------------------------------------------------


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    ego = make_ego(args.ego, cfg, args.checkpoint)
    ns = tuple(args.n) if args.n else cfg.sweep.densities
    seeds = tuple(args.seeds) if args.seeds else cfg.sweep.seeds
    episodes = args.episodes if args.episodes is not None else cfg.sweep.episodes_per_seed
    if args.workers is not None:
        workers = args.workers
    elif os.environ.get("CROWDNAV_THREADS"):
        workers = evalbench.worker_count()
    else:
        workers = cfg.sweep.workers
    scenario = cfg.scenario()
    records = evalbench.density_sweep(ego, ns, seeds, episodes, scenario, cfg.sim, workers)
    summary = evalbench.compute_metrics(records)
    out_dir = Path(cfg.output.dir)
    raw_path = atomic_write(out_dir / f"sweep_{args.ego}_raw.csv", evalbench.raw_csv(records))
    sum_path = atomic_write(out_dir / f"sweep_{args.ego}_summary.csv", evalbench.summary_csv(summary))
    for m in summary.values():
        print(
            f"{m.method} N={m.n} safe_success={m.safe_success_rate:.3f}±{m.safe_success_std:.3f} "
            f"collisions/ep={m.collisions_per_episode:.3f} freezing={m.freezing_rate:.3f} timeout={m.timeout_rate:.3f}"
        )
    print(f"raw={raw_path} summary={sum_path}")
    return 0


# -- entry --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crowdpss", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML file with flat section.key entries")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--out", help="output directory (overrides output.dir)")

    r = sub.add_parser("run", help="run one episode and write its trace")
    common(r)
    r.add_argument("--ego", choices=EGO_CHOICES, default="orca")
    r.add_argument("--checkpoint")
    r.add_argument("--n", type=int, help="pedestrian count (default: sampled from the episode range)")
    r.add_argument("--seed", type=int)
    r.add_argument("--trace", help="trace output path")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("train", help="train a policy with PPO")
    common(t)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="evaluate an ego policy over a density sweep")
    common(s)
    s.add_argument("--ego", choices=EGO_CHOICES, required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--n", type=int, nargs="+", help="densities (default: sweep.densities)")
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--episodes", type=int, help="episodes per seed")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_sweep)

    rp = sub.add_parser("replay", help="verify a trace by bit-exact re-simulation")
    rp.add_argument("trace")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TraceFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
