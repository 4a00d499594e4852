"""Density-robust crowd navigation: simulator, encoders, shaping, learner and benchmarks."""

__version__ = "0.1.0"
