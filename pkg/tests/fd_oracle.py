"""Central finite-difference gradients of the PPO loss, tensor by tensor."""

import numpy as np

from crowdpss.learn.ppo import PPOConfig, ppo_loss, ppo_loss_and_grad
from crowdpss.learn.policy import init_params


def numeric_grad(params, args, cfg, h=1e-5):
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            orig = arr[i]
            arr[i] = orig + h
            up = ppo_loss(params, *args, cfg)
            arr[i] = orig - h
            down = ppo_loss(params, *args, cfg)
            arr[i] = orig
            g[i] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def relative_error(a, b):
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def random_instance(rng, obs_dim=5, hidden=2, batch=8, margin=1e-3):
    """Small network plus a batch whose probability ratios sit away from the clip kinks."""
    cfg = PPOConfig(clip_eps=0.2, value_coef=0.5, entropy_coef=0.01)
    params = init_params(obs_dim, hidden, rng, init_log_std=rng.uniform(-0.5, 0.5))
    params = params.map(lambda a: a + 0.3 * rng.standard_normal(a.shape))
    obs = rng.standard_normal((batch, obs_dim))
    actions = rng.standard_normal((batch, 2))
    from crowdpss.learn.policy import forward, gaussian_log_prob

    mean, log_std, _ = forward(params, obs)
    logp = gaussian_log_prob(actions, mean, log_std)
    while True:
        old = logp + rng.uniform(-0.4, 0.4, batch)
        ratio = np.exp(logp - old)
        if np.all(np.abs(ratio - 0.8) > margin) and np.all(np.abs(ratio - 1.2) > margin):
            break
    adv = rng.standard_normal(batch)
    ret = rng.standard_normal(batch)
    return params, (obs, actions, old, adv, ret), cfg


def check_instance(rng):
    params, args, cfg = random_instance(rng)
    _, analytic = ppo_loss_and_grad(params, *args, cfg)
    numeric = numeric_grad(params, args, cfg)
    return {name: relative_error(getattr(analytic, name), numeric[name]) for name in numeric}
