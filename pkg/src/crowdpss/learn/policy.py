"""Tanh MLP actor-critic with a shared trunk and hand-written backprop."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

ACTION_DIM = 2
LOG_2PI = math.log(2.0 * math.pi)


class ShapeMismatch(ValueError):
    pass


@dataclass
class PolicyParams:
    """obs -> tanh(W1) -> tanh(W2) -> {mean head, value head}; log_std is state-independent."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W_mu: np.ndarray
    b_mu: np.ndarray
    W_v: np.ndarray
    b_v: np.ndarray
    log_std: np.ndarray

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def items(self):
        return ((n, getattr(self, n)) for n in self.names())

    def map(self, fn) -> "PolicyParams":
        return PolicyParams(**{n: fn(a) for n, a in self.items()})

    def copy(self) -> "PolicyParams":
        return self.map(np.copy)

    @property
    def obs_dim(self) -> int:
        return self.W1.shape[0]

    def check_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for _, a in self.items())

    def as_arrays(self) -> dict[str, np.ndarray]:
        return dict(self.items())


def init_params(
    obs_dim: int,
    hidden: int = 64,
    rng: np.random.Generator | None = None,
    init_log_std: float = 0.0,
) -> PolicyParams:
    """Orthogonal init with the usual PPO gains (sqrt 2 trunk, 0.01 policy head, 1 value head)."""
    rng = rng or np.random.default_rng(0)

    def ortho(n_in: int, n_out: int, gain: float) -> np.ndarray:
        a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
        q, r = np.linalg.qr(a)
        q *= np.sign(np.diag(r))
        w = q if n_in >= n_out else q.T
        return gain * w[:n_in, :n_out]

    g = math.sqrt(2.0)
    return PolicyParams(
        W1=ortho(obs_dim, hidden, g),
        b1=np.zeros(hidden),
        W2=ortho(hidden, hidden, g),
        b2=np.zeros(hidden),
        W_mu=ortho(hidden, ACTION_DIM, 0.01),
        b_mu=np.zeros(ACTION_DIM),
        W_v=ortho(hidden, 1, 1.0),
        b_v=np.zeros(1),
        log_std=np.full(ACTION_DIM, float(init_log_std)),
    )


def forward(params: PolicyParams, obs: np.ndarray, cache: bool = False):
    """Batched forward pass.

    Returns ``(mean (B,2), log_std (2,), value (B,))`` and, when ``cache`` is
    set, the hidden activations needed by :func:`backward`.
    """
    x = np.asarray(obs, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != params.obs_dim:
        raise ShapeMismatch(f"observation length {x.shape[1]} != network input {params.obs_dim}")
    h1 = np.tanh(x @ params.W1 + params.b1)
    h2 = np.tanh(h1 @ params.W2 + params.b2)
    mean = h2 @ params.W_mu + params.b_mu
    value = (h2 @ params.W_v + params.b_v)[:, 0]
    if single:
        mean, value = mean[0], value[0]
    if cache:
        return mean, params.log_std, value, (x, h1, h2)
    return mean, params.log_std, value


def policy_forward(params: PolicyParams, obs: np.ndarray):
    return forward(params, obs)


def backward(params: PolicyParams, acts, d_mean: np.ndarray, d_value: np.ndarray, d_log_std: np.ndarray) -> PolicyParams:
    """Gradients of a scalar loss given its partials w.r.t. the network outputs."""
    x, h1, h2 = acts
    d_h2 = d_mean @ params.W_mu.T + d_value[:, None] @ params.W_v.T
    d_z2 = d_h2 * (1.0 - h2**2)
    d_h1 = d_z2 @ params.W2.T
    d_z1 = d_h1 * (1.0 - h1**2)
    return PolicyParams(
        W1=x.T @ d_z1,
        b1=d_z1.sum(axis=0),
        W2=h1.T @ d_z2,
        b2=d_z2.sum(axis=0),
        W_mu=h2.T @ d_mean,
        b_mu=d_mean.sum(axis=0),
        W_v=h2.T @ d_value[:, None],
        b_v=np.array([d_value.sum()]),
        log_std=np.asarray(d_log_std, dtype=np.float64),
    )


def gaussian_log_prob(actions: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (actions - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z**2, axis=-1) - np.sum(log_std) - 0.5 * LOG_2PI * mean.shape[-1]


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std + 0.5 * (LOG_2PI + 1.0)))


def sample_action(mean: np.ndarray, log_std: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal Gaussian draw and its exact log-density."""
    mean = np.asarray(mean, dtype=np.float64)
    noise = rng.standard_normal(mean.shape)
    action = mean + np.exp(log_std) * noise
    return action, gaussian_log_prob(action, mean, log_std)
