"""Training loop: encode, act, shape, and update with PPO."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..encoder import EncoderConfig, RunningNormalizer, encode
from ..shaping import (
    ExtrinsicConfig,
    PotentialTracker,
    ShapingConfig,
    beta_at,
    extrinsic_reward,
    resolve_anneal,
    shaping_bound,
)
from ..sim import NavEnv, OutcomeKind, ScenarioConfig, SimParams
from ..world import derive_seed, make_rng
from .policy import PolicyParams, forward, init_params, sample_action
from .ppo import Adam, PPOConfig, RewardScaler, RolloutBatch, gae, ppo_update

log = logging.getLogger(__name__)

STREAM_ENV = 10
STREAM_POLICY = 11
STREAM_INIT = 12

LOG_COLUMNS = (
    "step",
    "iteration",
    "beta",
    "episodes",
    "mean_ext_return",
    "safe_success_rate",
    "goal_reach_rate",
    "mean_ext_reward",
    "mean_pss_reward",
    "mean_total_reward",
    "policy_loss",
    "value_loss",
    "entropy",
    "approx_kl",
)


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 200_000
    n_envs: int = 8
    rollout_len: int = 256  # per environment, so one batch holds n_envs * rollout_len transitions
    hidden: int = 64
    init_log_std: float = 0.0
    seed: int = 0
    obs_clip: float = 10.0


@dataclass
class TrainState:
    params: PolicyParams
    normalizer: RunningNormalizer
    optimizer: Adam
    step: int = 0
    iteration: int = 0
    log_rows: list[dict] = field(default_factory=list)
    reward_scaler: RewardScaler | None = None


def initial_state(enc_cfg: EncoderConfig, train_cfg: TrainConfig, ppo_cfg: PPOConfig) -> TrainState:
    rng = make_rng(train_cfg.seed, STREAM_INIT)
    params = init_params(enc_cfg.obs_dim, train_cfg.hidden, rng, train_cfg.init_log_std)
    normalizer = RunningNormalizer.zeros(enc_cfg.obs_dim, clip_bound=train_cfg.obs_clip)
    optimizer = Adam(ppo_cfg.lr, ppo_cfg.adam_beta1, ppo_cfg.adam_beta2, ppo_cfg.adam_eps)
    return TrainState(params, normalizer, optimizer)


def _mean(xs: list[float]) -> float:
    return float(np.mean(xs)) if xs else math.nan


def train(
    scenario: ScenarioConfig,
    sim_params: SimParams,
    enc_cfg: EncoderConfig,
    shaping_cfg: ShapingConfig,
    ext_cfg: ExtrinsicConfig,
    ppo_cfg: PPOConfig,
    train_cfg: TrainConfig,
    state: TrainState | None = None,
    on_iteration: Callable[[TrainState, dict], None] | None = None,
    reward_trace: list | None = None,
    obs_trace: list | None = None,
) -> TrainState:
    """Run PPO with potential-based shaping until ``train_cfg.total_steps``.

    Each environment keeps its own previous potential, re-initialised from
    the reset state whenever an episode ends, so no shaping reward spans two
    episodes. ``reward_trace`` (if given) receives per-step
    ``(ext, pss, total)`` arrays over environments; ``obs_trace`` receives
    the raw (unnormalised) observation batch of every step.
    """
    shaping_cfg = resolve_anneal(shaping_cfg, train_cfg.total_steps)
    if state is None:
        state = initial_state(enc_cfg, train_cfg, ppo_cfg)
    if state.step >= train_cfg.total_steps:
        return state

    n_envs, horizon = train_cfg.n_envs, train_cfg.rollout_len
    # keyed by the resume step so a resumed run draws fresh but reproducible streams
    envs = [NavEnv(scenario, derive_seed(train_cfg.seed, STREAM_ENV, e, state.step), sim_params) for e in range(n_envs)]
    rng = make_rng(train_cfg.seed, STREAM_POLICY, state.step)
    worlds = [env.reset() for env in envs]
    trackers = [PotentialTracker(shaping_cfg) for _ in envs]
    for tr, w in zip(trackers, worlds):
        tr.reset(w)
    ep_ext = np.zeros(n_envs)
    if ppo_cfg.scale_rewards and state.reward_scaler is None:
        state.reward_scaler = RewardScaler(n_envs, shaping_cfg.gamma)
    max_peds = max(scenario.n_range)
    obs_dim = enc_cfg.obs_dim

    while state.step < train_cfg.total_steps:
        beta = beta_at(state.step, shaping_cfg)
        bound = shaping_bound(shaping_cfg, scenario.arena, max_peds, beta)
        obs_buf = np.zeros((horizon, n_envs, obs_dim))
        act_buf = np.zeros((horizon, n_envs, 2))
        logp_buf = np.zeros((horizon, n_envs))
        val_buf = np.zeros((horizon, n_envs))
        rew_buf = np.zeros((horizon, n_envs))
        learn_rew = np.zeros((horizon, n_envs))
        done_buf = np.zeros((horizon, n_envs))
        ext_buf = np.zeros((horizon, n_envs))
        pss_buf = np.zeros((horizon, n_envs))
        finished_returns: list[float] = []
        finished_safe: list[bool] = []
        finished_goal: list[bool] = []

        for t in range(horizon):
            raw = np.stack([encode(w, enc_cfg) for w in worlds])
            if obs_trace is not None:
                obs_trace.append(raw)
            obs = state.normalizer.normalize(raw, frozen=False)
            mean, log_std, value = forward(state.params, obs)
            actions, logp = sample_action(mean, log_std, rng)
            final_obs = np.zeros((n_envs, obs_dim))
            truncated = np.zeros(n_envs, dtype=bool)
            for e, env in enumerate(envs):
                prev = worlds[e]
                nxt, events, outcome = env.step(actions[e])
                r_ext = extrinsic_reward(prev, nxt, events, ext_cfg)
                r_pss = trackers[e].step(nxt)
                if abs(beta * r_pss) > bound:
                    raise RuntimeError(f"shaping reward {beta * r_pss} exceeds bound {bound}")
                ext_buf[t, e], pss_buf[t, e] = r_ext, r_pss
                rew_buf[t, e] = r_ext + beta * r_pss
                ep_ext[e] += r_ext
                if outcome is not None:
                    done_buf[t, e] = 1.0
                    if outcome.kind is OutcomeKind.TIMEOUT and ppo_cfg.bootstrap_timeouts:
                        final_obs[e] = state.normalizer.normalize(encode(nxt, enc_cfg), frozen=True)
                        truncated[e] = True
                    finished_returns.append(float(ep_ext[e]))
                    finished_safe.append(outcome.kind is OutcomeKind.SAFE_SUCCESS)
                    finished_goal.append(outcome.reached_goal)
                    ep_ext[e] = 0.0
                    nxt = env.reset()
                    trackers[e].reset(nxt)
                worlds[e] = nxt
            obs_buf[t], act_buf[t], logp_buf[t], val_buf[t] = obs, actions, logp, value
            learn_rew[t] = state.reward_scaler(rew_buf[t], done_buf[t]) if state.reward_scaler else rew_buf[t]
            if truncated.any():
                # a timeout cuts the episode short; the state itself is not terminal
                _, _, v_final = forward(state.params, final_obs[truncated])
                learn_rew[t, truncated] += shaping_cfg.gamma * v_final
            if reward_trace is not None:
                reward_trace.append((ext_buf[t].copy(), pss_buf[t].copy(), rew_buf[t].copy()))
            state.step += n_envs

        raw = np.stack([encode(w, enc_cfg) for w in worlds])
        _, _, last_value = forward(state.params, state.normalizer.normalize(raw, frozen=True))
        adv, ret = gae(learn_rew, val_buf, done_buf, last_value, shaping_cfg.gamma, ppo_cfg.gae_lambda)

        def flat(a: np.ndarray) -> np.ndarray:
            return a.reshape(horizon * n_envs, *a.shape[2:])

        batch = RolloutBatch(
            flat(obs_buf), flat(act_buf), flat(logp_buf), flat(rew_buf), flat(val_buf), flat(done_buf),
            flat(adv), flat(ret),
        )
        state.params, stats = ppo_update(state.params, batch, ppo_cfg, state.optimizer, rng)
        state.iteration += 1

        row = {
            "step": state.step,
            "iteration": state.iteration,
            "beta": beta,
            "episodes": len(finished_returns),
            "mean_ext_return": _mean(finished_returns),
            "safe_success_rate": _mean([float(s) for s in finished_safe]),
            "goal_reach_rate": _mean([float(g) for g in finished_goal]),
            "mean_ext_reward": float(ext_buf.mean()),
            "mean_pss_reward": float(pss_buf.mean()),
            "mean_total_reward": float(rew_buf.mean()),
            "policy_loss": stats.policy_loss,
            "value_loss": stats.value_loss,
            "entropy": stats.entropy,
            "approx_kl": stats.approx_kl,
        }
        state.log_rows.append(row)
        log.info(
            "step %d  beta %.3f  ext_return %.3f  safe %.2f  goal %.2f",
            state.step, beta, row["mean_ext_return"], row["safe_success_rate"], row["goal_reach_rate"],
        )
        if on_iteration is not None:
            on_iteration(state, row)
    return state
