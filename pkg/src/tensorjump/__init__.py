"""Tensor-network trajectories for open spin chains with time-local, possibly negative, decay rates."""

from __future__ import annotations

__version__ = "0.1.0"

from .mpo import MpOperator, build_tfi, mpo_to_dense
from .mps import AnnihilatedStateError, MpsState
from .noise import NoiseChannel, NoiseModel, RateSchedule

__all__ = [
    "AnnihilatedStateError",
    "MpOperator",
    "MpsState",
    "NoiseChannel",
    "NoiseModel",
    "RateSchedule",
    "__version__",
    "build_tfi",
    "mpo_to_dense",
]
