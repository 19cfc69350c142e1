"""Blind source separation for single-channel quasi-periodic signals.

A small numpy/scipy library built around a multi-encoder convolutional
autoencoder trained self-supervised, plus the signal preprocessing, beat
detection, heart-rate scoring, classical baselines, and synthetic benchmark
scenes needed to exercise it end to end.
"""

from . import autodiff, baselines, hr, losses, model, preprocessing, synthetic, training

__all__ = [
    "autodiff",
    "baselines",
    "hr",
    "losses",
    "model",
    "preprocessing",
    "synthetic",
    "training",
]

__version__ = "0.1.0"
