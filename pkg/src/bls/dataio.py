"""Tabular data loading, standardization and the repeated-split protocol."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataError

BUILTIN_PREFIX = "builtin:"


@dataclass(frozen=True)
class Dataset:
    """Regressors ``X`` (N x D) and response ``y``.

    ``x_center``/``x_scale``/``y_center`` hold the transform applied by
    :func:`standardize` (identity values for raw data), so that
    ``X_raw = X * x_scale + x_center``.
    """

    X: np.ndarray
    y: np.ndarray
    names: tuple[str, ...]
    response: str = "y"
    standardized: bool = False
    x_center: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    y_center: float = 0.0

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise DataError(f"inconsistent shapes X{X.shape} y{y.shape}")
        if len(self.names) != X.shape[1]:
            raise DataError("one name per regressor column is required")
        d = X.shape[1]
        center = np.zeros(d) if self.x_center is None else np.array(self.x_center, dtype=float)
        scale = np.ones(d) if self.x_scale is None else np.array(self.x_scale, dtype=float)
        for a in (X, y, center, scale):
            a.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "x_center", center)
        object.__setattr__(self, "x_scale", scale)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def raw_X(self) -> np.ndarray:
        return self.X * self.x_scale + self.x_center

    def raw_y(self, y=None) -> np.ndarray:
        return (self.y if y is None else np.asarray(y, dtype=float)) + self.y_center

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return replace(self, X=self.X[rows], y=self.y[rows])


def _parse_float(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"row {row}: non-numeric value {text!r} in column {col!r}") from None
    if not math.isfinite(v):
        raise DataError(f"row {row}: non-finite value in column {col!r}")
    return v


def read_table(handle, source: str = "<stream>") -> tuple[list[str], np.ndarray]:
    """Read a numeric CSV with a header row. Row numbers in errors are
    1-based file lines, so the header is line 1."""
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{source}: file is empty") from None
    except csv.Error as exc:
        raise DataError(f"{source}: {exc}") from None
    header = [h.strip() for h in header]
    if not header or any(h == "" for h in header):
        raise DataError(f"{source}: header has blank column names")
    if len(set(header)) != len(header):
        raise DataError(f"{source}: duplicate column names in header")
    rows = []
    missing = []
    try:
        for line, rec in enumerate(reader, start=2):
            if not rec or all(c.strip() == "" for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(
                    f"{source}: row {line} has {len(rec)} fields, expected {len(header)}"
                )
            if any(c.strip() == "" for c in rec):
                missing.append(line)
                continue
            rows.append([_parse_float(c, line, h) for c, h in zip(rec, header)])
    except csv.Error as exc:
        raise DataError(f"{source}: {exc}") from None
    if missing:
        shown = ", ".join(map(str, missing[:10]))
        more = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
        raise DataError(f"{source}: missing values in rows {shown}{more}")
    values = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, values


def load_csv(path, response_column: str) -> Dataset:
    """Load a CSV (header row required). ``builtin:diabetes`` names the
    bundled diabetes table."""
    path_str = str(path)
    if path_str.startswith(BUILTIN_PREFIX):
        name = path_str[len(BUILTIN_PREFIX):]
        try:
            ref = resources.files("bls.data").joinpath(f"{name}.csv")
            with ref.open("r", encoding="utf-8", newline="") as fh:
                header, values = read_table(fh, path_str)
        except FileNotFoundError:
            raise DataError(f"no bundled dataset named {name!r}") from None
    else:
        p = Path(path)
        try:
            with p.open("r", encoding="utf-8", newline="") as fh:
                header, values = read_table(fh, str(p))
        except OSError as exc:
            raise DataError(f"cannot read {p}: {exc.strerror or exc}") from None
        except UnicodeDecodeError:
            raise DataError(f"{p}: not valid UTF-8") from None
    if response_column not in header:
        raise DataError(f"response column {response_column!r} not found in {path_str}")
    if values.shape[0] == 0:
        raise DataError(f"{path_str}: empty data (header only)")
    j = header.index(response_column)
    names = [h for k, h in enumerate(header) if k != j]
    X = np.delete(values, j, axis=1)
    return Dataset(X, values[:, j], tuple(names), response=response_column)


def load_diabetes() -> Dataset:
    return load_csv(BUILTIN_PREFIX + "diabetes", "y")


def fit_transform_params(X, y, scale: str = "variance"):
    """Column means and scales, plus the response mean.

    ``scale="variance"`` divides by the sample SD (N-1), giving unit-variance
    columns. ``scale="norm"`` divides by the centred Euclidean norm, giving
    unit-length columns; the two differ by the constant sqrt(N-1).
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise DataError("standardization needs at least two rows")
    center = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    if scale == "variance":
        factor = sd
    elif scale == "norm":
        factor = sd * math.sqrt(n - 1)
    else:
        raise ValueError(f"unknown scale {scale!r}")
    return center, factor, float(np.mean(y))


def _check_scale(names, factor, center):
    tiny = 1e-12 * np.maximum(np.abs(center), 1.0)
    bad = [names[k] for k in np.flatnonzero(~(factor > tiny))]
    if bad:
        raise DataError(f"constant column(s) cannot be standardized: {', '.join(bad)}")


def apply_transform(ds: Dataset, center, factor, y_center) -> Dataset:
    X = (ds.raw_X() - center) / factor
    y = ds.raw_y() - y_center
    return Dataset(X, y, ds.names, ds.response, True, center, factor, y_center)


def standardize(ds: Dataset, scale: str = "variance") -> Dataset:
    """Centre and scale every regressor and mean-centre the response.

    Statistics are taken from the raw values, so standardizing an already
    standardized dataset is a no-op up to rounding.
    """
    center, factor, y_center = fit_transform_params(ds.raw_X(), ds.raw_y(), scale)
    _check_scale(ds.names, factor, center)
    return apply_transform(ds, center, factor, y_center)


def train_test_split(ds: Dataset, train_frac: float, seed: int, scale: str | None = "variance"):
    """Random row partition; standardization (unless ``scale`` is None) is
    estimated on the training rows only and then applied to both parts."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must lie in (0, 1), got {train_frac}")
    n_train = int(round(train_frac * ds.n))
    if n_train < 2:
        raise DataError(f"split leaves {n_train} training rows; need at least 2")
    perm = np.random.default_rng(seed).permutation(ds.n)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    raw = replace(ds, X=ds.raw_X(), y=ds.raw_y(), standardized=False,
                  x_center=None, x_scale=None, y_center=0.0)
    train, test = raw.take(tr), raw.take(te)
    if scale is None:
        return train, test
    center, factor, y_center = fit_transform_params(train.X, train.y, scale)
    _check_scale(ds.names, factor, center)
    return (apply_transform(train, center, factor, y_center),
            apply_transform(test, center, factor, y_center))
