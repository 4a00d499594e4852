"""Small actor-critic learner trained with clipped policy-gradient updates."""

from .policy import PolicyParams, forward, init_params, policy_forward, sample_action
from .ppo import Adam, PPOConfig, RolloutBatch, gae, ppo_update
from .trainer import TrainConfig, TrainState, train

__all__ = [
    "Adam",
    "PPOConfig",
    "PolicyParams",
    "RolloutBatch",
    "TrainConfig",
    "TrainState",
    "forward",
    "gae",
    "init_params",
    "policy_forward",
    "ppo_update",
    "sample_action",
    "train",
]
