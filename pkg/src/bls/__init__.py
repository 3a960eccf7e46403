"""Sparse Bayesian regression with a noise-conditioned Laplace prior (BLS),
plus the fast RVM (FRVM) and fast Laplace (FLAP) baselines."""

from .core import FitConfig, FitResult, PriorRule, fit
from .errors import BLSError, DataError, NumericalDegeneracyError
from .kernels import DesignMatrix, KernelKind, KernelSpec, build_design, kernel_eval
from .predict import Prediction, predict_batch, predict_one

__all__ = [
    "BLSError", "DataError", "DesignMatrix", "FitConfig", "FitResult", "KernelKind",
    "KernelSpec", "NumericalDegeneracyError", "Prediction", "PriorRule", "build_design",
    "fit", "kernel_eval", "predict_batch", "predict_one",
]

__version__ = "0.1.0"
