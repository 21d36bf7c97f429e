"""Continual learning for conditional image generators.

Two-cycle conditional VAE-GAN training with knowledge-distillation
retention over auxiliary data, plus the SFT/JL/MR baselines, metrics,
and a CLI for forgetting-vs-retention experiments at desk scale.
"""

__version__ = "0.1.0"
