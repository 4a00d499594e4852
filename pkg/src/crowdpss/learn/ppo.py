"""Clipped-surrogate policy optimisation: GAE, loss gradients, Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .policy import PolicyParams, backward, forward, gaussian_entropy, gaussian_log_prob


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class PPOConfig:
    clip_eps: float = 0.2
    epochs: int = 5
    minibatch_size: int = 256
    lr: float = 3e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    gae_lambda: float = 0.95
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    scale_rewards: bool = True  # divide learner rewards by the running std of discounted returns
    bootstrap_timeouts: bool = True  # value-bootstrap episodes cut by the horizon


@dataclass
class RolloutBatch:
    """Flat transition arrays (env-major after ``flatten``)."""

    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return self.observations.shape[0]


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    last_value: float | np.ndarray,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates along axis 0 (time).

    ``dones[t]`` marks that the transition at ``t`` ended its episode, so
    neither the bootstrap nor the trace crosses it. Extra trailing axes
    (parallel environments) are carried through.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    notdone = 1.0 - np.asarray(dones, dtype=np.float64)
    adv = np.zeros_like(rewards)
    next_value = np.asarray(last_value, dtype=np.float64)
    running = np.zeros_like(rewards[0]) if rewards.ndim > 1 else 0.0
    for t in range(rewards.shape[0] - 1, -1, -1):
        delta = rewards[t] + gamma * next_value * notdone[t] - values[t]
        running = delta + gamma * lam * notdone[t] * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


class RewardScaler:
    """Divides rewards by the running std of the discounted return, per environment stream.

    Only the learner's value/advantage targets see scaled rewards; logged
    reward streams stay in environment units.
    """

    def __init__(self, n_envs: int, gamma: float, eps: float = 1e-8):
        self.gamma = gamma
        self.eps = eps
        self.returns = np.zeros(n_envs)
        self.count = 0.0
        self.mean = 0.0
        self.m2 = 0.0

    def __call__(self, rewards: np.ndarray, dones: np.ndarray) -> np.ndarray:
        self.returns = self.returns * self.gamma + rewards
        for g in self.returns:
            self.count += 1.0
            delta = g - self.mean
            self.mean += delta / self.count
            self.m2 += delta * (g - self.mean)
        self.returns = np.where(dones > 0, 0.0, self.returns)
        var = self.m2 / self.count if self.count > 1 else 1.0
        return rewards / np.sqrt(var + self.eps)


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    return (adv - adv.mean()) / (std if std > 0 else 1.0)


@dataclass
class LossInfo:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float


def ppo_loss_and_grad(
    params: PolicyParams,
    obs: np.ndarray,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    cfg: PPOConfig,
) -> tuple[LossInfo, PolicyParams]:
    """Loss ``-surrogate + c_v * MSE - c_e * entropy`` averaged over the minibatch, with its exact gradient."""
    b = obs.shape[0]
    mean, log_std, value, acts = forward(params, obs, cache=True)
    logp = gaussian_log_prob(actions, mean, log_std)
    ratio = np.exp(logp - old_log_probs)
    lo, hi = 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, lo, hi) * advantages
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
    value_loss = float(np.mean((value - returns) ** 2))
    entropy = gaussian_entropy(log_std)
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")

    # gradient flows through the unclipped branch whenever it is the active minimum
    unclipped_active = surr1 <= surr2
    inside = (ratio >= lo) & (ratio <= hi)
    d_ratio = np.where(unclipped_active | inside, -advantages / b, 0.0)
    d_logp = d_ratio * ratio

    inv_var = np.exp(-2.0 * log_std)
    diff = actions - mean
    d_mean = d_logp[:, None] * diff * inv_var
    d_log_std = (d_logp[:, None] * (diff**2 * inv_var - 1.0)).sum(axis=0) - cfg.entropy_coef
    d_value = cfg.value_coef * 2.0 * (value - returns) / b
    grads = backward(params, acts, d_mean, d_value, d_log_std)

    info = LossInfo(
        loss=float(loss),
        policy_loss=policy_loss,
        value_loss=value_loss,
        entropy=entropy,
        clip_fraction=float(np.mean(~inside)),
        approx_kl=float(np.mean(old_log_probs - logp)),
    )
    return info, grads


def ppo_loss(params, obs, actions, old_log_probs, advantages, returns, cfg) -> float:
    return ppo_loss_and_grad(params, obs, actions, old_log_probs, advantages, returns, cfg)[0].loss


def clip_grad_norm(grads: PolicyParams, max_norm: float) -> tuple[PolicyParams, float]:
    total = float(np.sqrt(sum(float(np.sum(g**2)) for _, g in grads.items())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        grads = grads.map(lambda g: g * scale)
    return grads, total


@dataclass
class Adam:
    """Adam with bias correction.

    m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
    theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    """

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: PolicyParams | None = None
    v: PolicyParams | None = None

    def step(self, params: PolicyParams, grads: PolicyParams) -> PolicyParams:
        if self.m is None:
            self.m = params.map(np.zeros_like)
            self.v = params.map(np.zeros_like)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        out = {}
        for name, p in params.items():
            g = getattr(grads, name)
            m = self.beta1 * getattr(self.m, name) + (1.0 - self.beta1) * g
            v = self.beta2 * getattr(self.v, name) + (1.0 - self.beta2) * g * g
            setattr(self.m, name, m)
            setattr(self.v, name, v)
            out[name] = p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return PolicyParams(**out)


@dataclass
class UpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    clip_fraction: float = 0.0
    approx_kl: float = 0.0
    grad_norm: float = 0.0
    n: int = field(default=0, repr=False)

    def add(self, info: LossInfo, grad_norm: float) -> None:
        self.n += 1
        k = 1.0 / self.n
        self.policy_loss += k * (info.policy_loss - self.policy_loss)
        self.value_loss += k * (info.value_loss - self.value_loss)
        self.entropy += k * (info.entropy - self.entropy)
        self.clip_fraction += k * (info.clip_fraction - self.clip_fraction)
        self.approx_kl += k * (info.approx_kl - self.approx_kl)
        self.grad_norm += k * (grad_norm - self.grad_norm)


def ppo_update(
    params: PolicyParams,
    batch: RolloutBatch,
    cfg: PPOConfig,
    optimizer: Adam,
    rng: np.random.Generator,
) -> tuple[PolicyParams, UpdateStats]:
    """Several epochs of shuffled minibatch steps on one rollout batch."""
    if batch.advantages is None or batch.returns is None:
        raise ValueError("batch advantages must be computed before the update")
    adv = normalize_advantages(batch.advantages)
    n = len(batch)
    stats = UpdateStats()
    optimizer.lr = cfg.lr
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = perm[start : start + cfg.minibatch_size]
            info, grads = ppo_loss_and_grad(
                params,
                batch.observations[idx],
                batch.actions[idx],
                batch.log_probs[idx],
                adv[idx],
                batch.returns[idx],
                cfg,
            )
            grads, norm = clip_grad_norm(grads, cfg.max_grad_norm)
            params = optimizer.step(params, grads)
            stats.add(info, norm)
    if not params.check_finite():
        raise NonFiniteLoss("parameters became non-finite")
    return params, stats
