"""Gaussian-process q-space signal models and constrained propagator reconstruction."""

from .core import AcquisitionScheme, FormatError, GpPrediction, Hyperparameters, SignalTable
from .eap import make_grid, reconstruct_naive, reconstruct_qp, rtop
from .gp import fit, train

__version__ = "0.1.0"

__all__ = [
    "AcquisitionScheme",
    "FormatError",
    "GpPrediction",
    "Hyperparameters",
    "SignalTable",
    "fit",
    "make_grid",
    "reconstruct_naive",
    "reconstruct_qp",
    "rtop",
    "train",
]
