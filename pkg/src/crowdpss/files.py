"""Atomic file output, trace records and checkpoints."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoder import RunningNormalizer
from .learn.policy import PolicyParams
from .learn.ppo import Adam, PPOConfig, RewardScaler
from .learn.trainer import TrainState
from .sim import StepEvents
from .world import WorldState

TRACE_FORMAT = "crowdpss-trace"
TRACE_VERSION = 1
CHECKPOINT_FORMAT = "crowdpss-checkpoint"
CHECKPOINT_VERSION = 1


class TraceFormatError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


def atomic_write(path: str | Path, data: str | bytes) -> Path:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(columns: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(row[c]) if isinstance(row[c], float) and math.isfinite(row[c]) else row[c] for c in columns])
    return buf.getvalue()


# -- traces -------------------------------------------------------------------


def state_record(world: WorldState) -> dict:
    return {
        "step": world.step_index,
        "ego_pos": world.ego_pos.tolist(),
        "ego_vel": world.ego_vel.tolist(),
        "ego_goal": world.ego_goal.tolist(),
        "ped_pos": world.ped_pos.tolist(),
        "ped_vel": world.ped_vel.tolist(),
        "ped_goal": world.ped_goal.tolist(),
    }


def step_record(action: np.ndarray, world: WorldState, events: StepEvents) -> dict:
    rec = {"step": world.step_index, "action": np.asarray(action, dtype=float).tolist()}
    rec.update({k: v for k, v in state_record(world).items() if k != "step"})
    rec["events"] = {
        "collisions": list(events.collisions),
        "reached_goal": events.ego_reached_goal,
        "frozen": events.ego_frozen,
    }
    return rec


def dump_line(obj: dict) -> str:
    # json emits floats with repr, the shortest string that parses back exactly
    return json.dumps(obj, allow_nan=False, separators=(",", ":")) + "\n"


def read_trace(path: str | Path) -> tuple[dict, list[dict]]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise TraceFormatError("empty trace")
    try:
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:] if line.strip()]
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"malformed trace: {exc}") from None
    if header.get("format") != TRACE_FORMAT:
        raise TraceFormatError(f"not a {TRACE_FORMAT} file")
    if header.get("version") != TRACE_VERSION:
        raise TraceFormatError(f"unsupported trace version {header.get('version')!r} (expected {TRACE_VERSION})")
    return header, records


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(path: str | Path, state: TrainState, config_flat: dict) -> Path:
    """Everything needed to resume training: weights, optimizer moments, normaliser, scaler, logs."""
    params, normalizer, optimizer = state.params, state.normalizer, state.optimizer
    arrays = {f"param/{k}": v for k, v in params.items()}
    if optimizer.m is not None:
        arrays.update({f"adam_m/{k}": v for k, v in optimizer.m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in optimizer.v.items()})
    arrays["norm/mean"] = normalizer.mean
    arrays["norm/m2"] = normalizer.m2
    scaler = None
    if state.reward_scaler is not None:
        sc = state.reward_scaler
        arrays["scaler/returns"] = sc.returns
        scaler = {"gamma": sc.gamma, "eps": sc.eps, "count": sc.count, "mean": sc.mean, "m2": sc.m2}
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "iteration": state.iteration,
        "adam_t": optimizer.t,
        "norm_count": normalizer.count,
        "norm_clip": normalizer.clip_bound,
        "norm_eps": normalizer.epsilon,
        "scaler": scaler,
        "log_rows": state.log_rows,
        "config": config_flat,
    }
    buf = io.BytesIO()
    np.savez(buf, meta=np.array(json.dumps(meta)), **arrays)
    return atomic_write(path, buf.getvalue())


def load_checkpoint(path: str | Path, ppo_cfg: PPOConfig | None = None) -> tuple[TrainState, dict]:
    """Returns the restored training state and the config snapshot it was saved with."""
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            data = {k: z[k] for k in z.files if k != "meta"}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from None
    if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    names = PolicyParams.names()
    params = PolicyParams(**{n: data[f"param/{n}"] for n in names})
    normalizer = RunningNormalizer(data["norm/mean"], data["norm/m2"], meta["norm_count"], meta["norm_clip"], meta["norm_eps"])
    ppo_cfg = ppo_cfg or PPOConfig()
    optimizer = Adam(ppo_cfg.lr, ppo_cfg.adam_beta1, ppo_cfg.adam_beta2, ppo_cfg.adam_eps, t=meta["adam_t"])
    if f"adam_m/{names[0]}" in data:
        optimizer.m = PolicyParams(**{n: data[f"adam_m/{n}"] for n in names})
        optimizer.v = PolicyParams(**{n: data[f"adam_v/{n}"] for n in names})
    scaler = None
    if meta["scaler"] is not None:
        sm = meta["scaler"]
        scaler = RewardScaler(len(data["scaler/returns"]), sm["gamma"], sm["eps"])
        scaler.returns = data["scaler/returns"]
        scaler.count, scaler.mean, scaler.m2 = sm["count"], sm["mean"], sm["m2"]
    state = TrainState(params, normalizer, optimizer, meta["step"], meta["iteration"], meta["log_rows"], scaler)
    return state, meta["config"]
