"""Kernel functions and design-matrix construction.

Two regimes are supported. In the kernel regime every training input
contributes one basis column, ``Phi[i, j] = K(x_i, x_j)``. In the identity
regime the (already standardized) regressor matrix is used directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DataError, NumericalDegeneracyError


class KernelKind(str, Enum):
    LINEAR_SPLINE = "spline"
    SPLINE_SUM_CUBIC = "spline-sumcubic"
    GAUSSIAN = "gaussian"
    IDENTITY = "identity"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice. ``width`` is only meaningful for the Gaussian kernel;
    ``None`` there means "use the median pairwise distance"."""

    kind: KernelKind = KernelKind.LINEAR_SPLINE
    width: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if self.kind is KernelKind.GAUSSIAN:
            if self.width is not None and not (np.isfinite(self.width) and self.width > 0):
                raise ValueError(f"Gaussian width must be positive, got {self.width!r}")
        elif self.width is not None:
            raise ValueError(f"{self.kind.value} kernel takes no width")

    @property
    def is_identity(self) -> bool:
        return self.kind is KernelKind.IDENTITY

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        """Parse the command-line form ``spline``, ``identity``,
        ``gaussian`` or ``gaussian:<width>``."""
        name, _, arg = text.strip().partition(":")
        name = name.lower()
        if name == "spline":
            kind = KernelKind.LINEAR_SPLINE
        else:
            try:
                kind = KernelKind(name)
            except ValueError:
                raise ValueError(f"unknown kernel {text!r}") from None
        if arg:
            if kind is not KernelKind.GAUSSIAN:
                raise ValueError(f"kernel {name!r} takes no argument")
            return cls(kind, float(arg))
        return cls(kind)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "width": self.width}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(KernelKind(d["kind"]), d.get("width"))


@dataclass(frozen=True)
class DesignMatrix:
    """An N x M basis-response matrix.

    ``column_origin[j]`` is the training-sample index that centres column
    ``j`` (kernel regime) or the regressor index (identity regime).
    """

    values: np.ndarray
    column_origin: np.ndarray
    spec: KernelSpec = field(default_factory=KernelSpec)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError("design matrix must be two-dimensional")
        if not np.all(np.isfinite(values)):
            raise NumericalDegeneracyError("design matrix has non-finite entries")
        values.setflags(write=False)
        origin = np.array(self.column_origin, dtype=int)
        origin.setflags(write=False)
        if origin.shape != (values.shape[1],):
            raise DataError("column_origin must have one entry per column")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_origin", origin)

    @property
    def shape(self):
        return self.values.shape


def _spline_1d(a, b):
    """Univariate linear-spline kernel, broadcasting over ``a`` and ``b``."""
    m = np.minimum(a, b)
    ab = a * b
    return 1.0 + ab + ab * m - 0.5 * (a + b) * m**2 + m**3 / 3.0


def _spline_sum_cubic_1d(a, b):
    """Variant whose cubic term is ``(a + b) / 3 * min(a, b)**3``.

    Not positive semidefinite even on the positive half-line; kept for
    comparison with results computed from that form.
    """
    m = np.minimum(a, b)
    ab = a * b
    apb = a + b
    return 1.0 + ab + ab * m - 0.5 * apb * m**2 + apb * m**3 / 3.0


def _as_points(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim != 1:
        raise DataError(f"{name} must be a vector")
    if not np.all(np.isfinite(x)):
        raise DataError(f"{name} has non-finite entries")
    return x


def kernel_eval(spec: KernelSpec, a, b) -> float:
    """Evaluate the kernel between two input points."""
    a = _as_points(a, "a")
    b = _as_points(b, "b")
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(gram(spec, a[None, :], b[None, :])[0, 0])


def gram(spec: KernelSpec, A, B) -> np.ndarray:
    """Cross-kernel matrix ``K[i, j] = K(A[i], B[j])`` for row-wise inputs."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise DataError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if spec.kind in (KernelKind.LINEAR_SPLINE, KernelKind.SPLINE_SUM_CUBIC):
        uni = _spline_1d if spec.kind is KernelKind.LINEAR_SPLINE else _spline_sum_cubic_1d
        K = np.ones((A.shape[0], B.shape[0]))
        for d in range(A.shape[1]):
            K *= uni(A[:, d][:, None], B[:, d][None, :])
    elif spec.kind is KernelKind.GAUSSIAN:
        if spec.width is None:
            raise ValueError("Gaussian width unresolved; call resolve_width first")
        sq = (
            np.sum(A**2, axis=1)[:, None]
            + np.sum(B**2, axis=1)[None, :]
            - 2.0 * A @ B.T
        )
        K = np.exp(-np.maximum(sq, 0.0) / (2.0 * spec.width**2))
    else:
        raise ValueError("identity design has no kernel function")
    if not np.all(np.isfinite(K)):
        raise NumericalDegeneracyError("kernel evaluation produced non-finite values")
    return K


def resolve_width(spec: KernelSpec, X) -> KernelSpec:
    """Fill in the median-distance width for a Gaussian kernel without one."""
    if spec.kind is not KernelKind.GAUSSIAN or spec.width is not None:
        return spec
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 2:
        return KernelSpec(KernelKind.GAUSSIAN, 1.0)
    d = pdist(X)
    d = d[d > 0]
    width = float(np.median(d)) if d.size else 1.0
    return KernelSpec(KernelKind.GAUSSIAN, width)


def build_design(spec: KernelSpec, X) -> DesignMatrix:
    """Build the design matrix for training inputs ``X`` (N x D)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 1:
        raise DataError("need at least one training row")
    if not np.all(np.isfinite(X)):
        raise DataError("training inputs have non-finite entries")
    if spec.is_identity:
        return DesignMatrix(X, np.arange(X.shape[1]), spec)
    spec = resolve_width(spec, X)
    K = gram(spec, X, X)
    # exact symmetry; the broadcasting formula is symmetric up to rounding
    K = 0.5 * (K + K.T)
    return DesignMatrix(K, np.arange(X.shape[0]), spec)
