"""Sinc simulation studies and the repeated-split selection study."""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .core import FitConfig, PriorRule, fit
from .dataio import Dataset, train_test_split
from .errors import BLSError, DataError
from .kernels import DesignMatrix, KernelSpec, build_design

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SincSpec:
    """One Sinc data-generation setting.

    1D: ``n_points`` uniform grid points on ``x_range``. 2D: a square grid
    over ``x_range`` on each axis with spacing ``grid_step``.
    """

    dim: int = 1
    sigma: float = 0.1
    n_points: int = 200
    grid_step: float = 0.3
    x_range: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError("sigma must be a nonnegative number")
        lo, hi = self.bounds
        if not lo < hi:
            raise ValueError("x_range must be a nonempty interval")
        if self.dim == 1 and self.n_points < 2:
            raise ValueError("n_points must be at least 2")
        if self.dim == 2 and not self.grid_step > 0:
            raise ValueError("grid_step must be positive")

    @property
    def bounds(self) -> tuple[float, float]:
        if self.x_range is not None:
            return tuple(map(float, self.x_range))
        return (-10.0, 10.0) if self.dim == 1 else (-5.0, 5.0)


def sinc(x):
    """sin(x)/x with the removable singularity filled in."""
    return np.sinc(np.asarray(x, dtype=float) / np.pi)


def sinc_inputs(spec: SincSpec) -> np.ndarray:
    lo, hi = spec.bounds
    if spec.dim == 1:
        return np.linspace(lo, hi, spec.n_points)[:, None]
    # endpoint kept when the step divides the range (up to rounding)
    n = int(np.floor((hi - lo) / spec.grid_step + 1e-9)) + 1
    axis = lo + spec.grid_step * np.arange(n)
    g1, g2 = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([g1.ravel(), g2.ravel()])


def gen_sinc(spec: SincSpec):
    """Return ``(X, y, f_true)`` for one seeded draw."""
    X = sinc_inputs(spec)
    f = sinc(X).sum(axis=1)
    noise = np.random.default_rng(spec.seed).standard_normal(f.size)
    y = f + spec.sigma * noise
    return X, y, f


def mse_vs_truth(y_star, f_true) -> float:
    y_star = np.asarray(y_star, dtype=float)
    f_true = np.asarray(f_true, dtype=float)
    if y_star.shape != f_true.shape:
        raise ValueError(f"length mismatch: {y_star.shape} vs {f_true.shape}")
    if y_star.size == 0:
        raise ValueError("empty input")
    return float(np.mean((y_star - f_true) ** 2))


def _mean_sd(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    sd = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return float(np.mean(v)), sd


def worker_count(n_tasks: int) -> int:
    """Worker processes allowed by ``SBL_THREADS`` (default: CPU count)."""
    raw = os.environ.get("SBL_THREADS")
    try:
        cap = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        cap = 1
    return max(1, min(cap, n_tasks))


def _run_tasks(func, tasks):
    workers = worker_count(len(tasks))
    if workers == 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks))


# ---------------------------------------------------------------------------
# Sinc study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RepRecord:
    method: str
    sigma: float
    rep: int
    nov: float
    mse: float
    sigma_hat: float
    error: str | None = None


@dataclass(frozen=True)
class CellStats:
    method: str
    sigma: float
    nov_mean: float
    nov_sd: float
    mse_mean: float
    mse_sd: float
    sigma_hat_mean: float
    sigma_hat_sd: float
    n_reps: int
    n_failed: int


def _cells(records, key_fields, value_fields):
    groups: dict[tuple, list] = {}
    for r in records:
        groups.setdefault(tuple(getattr(r, k) for k in key_fields), []).append(r)
    out = []
    for key, rs in groups.items():
        rs = sorted(rs, key=lambda r: r.rep)
        ok = [r for r in rs if r.error is None]
        stats = []
        for f in value_fields:
            stats.extend(_mean_sd([getattr(r, f) for r in ok]))
        out.append((*key, *stats, len(ok), len(rs) - len(ok)))
    return out


def _markdown(header, rows, fmt):
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for row in rows:
        lines.append("| " + " | ".join(fmt(row)) + " |")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class StudyReport:
    cells: tuple[CellStats, ...]
    records: tuple[RepRecord, ...]
    fixed_sigma2: bool = False

    def cell(self, method, sigma) -> CellStats:
        method = PriorRule(method).value
        for c in self.cells:
            if c.method == method and c.sigma == float(sigma):
                return c
        raise KeyError((method, sigma))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CellStats.__dataclass_fields__.keys())
        for c in self.cells:
            w.writerow([repr(v) if isinstance(v, float) else v for v in c.__dict__.values()])
        return buf.getvalue()

    def to_markdown(self) -> str:
        head = ["sigma", "method", "NOV (SD)", "MSE (SD)"]
        if not self.fixed_sigma2:
            head.append("sigma_hat (SD)")
        head.append("reps (failed)")

        def fmt(c):
            cols = [f"{c.sigma:g}", c.method.upper(),
                    f"{c.nov_mean:.2f} ({c.nov_sd:.2f})",
                    f"{c.mse_mean:.4g} ({c.mse_sd:.2g})"]
            if not self.fixed_sigma2:
                cols.append(f"{c.sigma_hat_mean:.3g} ({c.sigma_hat_sd:.2g})")
            cols.append(f"{c.n_reps} ({c.n_failed})")
            return cols

        return _markdown(head, self.cells, fmt)


def _sinc_task(args):
    methods, sigma, rep, template, design, cfg, fixed = args
    spec = replace(template, sigma=sigma, seed=template.seed + rep)
    _, y, f = gen_sinc(spec)
    run_cfg = cfg
    if fixed:
        run_cfg = replace(cfg, fix_sigma2=0.1 * float(np.var(y, ddof=1)))
    out = []
    for m in methods:
        try:
            res = fit(design, y, m, run_cfg)
            yhat = design.values[:, res.relevance_indices] @ res.weights
            out.append(RepRecord(m.value, sigma, rep, float(res.n_relevant),
                                 mse_vs_truth(yhat, f), float(np.sqrt(res.sigma2_hat))))
        except (BLSError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.warning("%s sigma=%g rep=%d failed: %s", m.value, sigma, rep, exc)
            nan = float("nan")
            out.append(RepRecord(m.value, sigma, rep, nan, nan, nan, str(exc)))
    return out


def run_study(methods, sigmas, reps: int, template: SincSpec | None = None,
              cfg: FitConfig | None = None, kernel: KernelSpec | None = None,
              fixed_sigma2: bool = False) -> StudyReport:
    """Repeat Sinc fits over noise levels.

    Repetition ``r`` draws its noise with seed ``template.seed + r``; every
    method sees the same draw. With ``fixed_sigma2`` the noise variance is
    held at a tenth of the sample variance of ``y``.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    methods = [PriorRule(m) for m in methods]
    if not methods:
        raise ValueError("need at least one method")
    sigmas = [float(s) for s in sigmas]
    if any(not (np.isfinite(s) and s >= 0) for s in sigmas):
        raise ValueError("sigmas must be nonnegative")
    template = template or SincSpec()
    cfg = cfg or FitConfig()
    design = build_design(kernel or KernelSpec(), sinc_inputs(template))
    tasks = [(methods, s, r, template, design, cfg, fixed_sigma2)
             for s in sigmas for r in range(reps)]
    records = [rec for batch in _run_tasks(_sinc_task, tasks) for rec in batch]
    order = {m.value: k for k, m in enumerate(methods)}
    records.sort(key=lambda r: (sigmas.index(r.sigma), order[r.method], r.rep))
    cells = [CellStats(*row) for row in
             _cells(records, ("method", "sigma"), ("nov", "mse", "sigma_hat"))]
    cells.sort(key=lambda c: (sigmas.index(c.sigma), order[c.method]))
    return StudyReport(tuple(cells), tuple(records), fixed_sigma2)


# ---------------------------------------------------------------------------
# variable-selection study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitRecord:
    method: str
    rep: int
    mse: float
    n_selected: float
    error: str | None = None


@dataclass(frozen=True)
class SelectionStats:
    method: str
    mse_mean: float
    mse_sd: float
    n_selected_mean: float
    n_selected_sd: float
    n_reps: int
    n_failed: int


@dataclass(frozen=True)
class SelectionReport:
    cells: tuple[SelectionStats, ...]
    records: tuple[SplitRecord, ...]
    n_variables: int

    def cell(self, method) -> SelectionStats:
        method = PriorRule(method).value
        for c in self.cells:
            if c.method == method:
                return c
        raise KeyError(method)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SelectionStats.__dataclass_fields__.keys())
        for c in self.cells:
            w.writerow([repr(v) if isinstance(v, float) else v for v in c.__dict__.values()])
        return buf.getvalue()

    def to_markdown(self) -> str:
        def fmt(c):
            return [c.method.upper(), f"{c.mse_mean:.2f} ({c.mse_sd:.2f})",
                    f"{c.n_selected_mean:.2f} ({c.n_selected_sd:.2f})",
                    f"{c.n_reps} ({c.n_failed})"]

        return _markdown(["method", "test MSE (SD)",
                          f"variables of {self.n_variables} (SD)", "reps (failed)"],
                         self.cells, fmt)


def _split_task(args):
    ds, methods, rep, train_frac, seed, cfg, scale = args
    train, test = train_test_split(ds, train_frac, seed + rep, scale)
    out = []
    for m in methods:
        try:
            res = fit(train.X, train.y, m, cfg)
            pred = test.X @ res.coef
            # both responses carry the same training-mean offset
            mse = float(np.mean((test.raw_y() - train.raw_y(pred)) ** 2))
            out.append(SplitRecord(m.value, rep, mse, float(res.n_relevant)))
        except (BLSError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.warning("%s split %d failed: %s", m.value, rep, exc)
            out.append(SplitRecord(m.value, rep, float("nan"), float("nan"), str(exc)))
    return out


def run_selection_study(ds: Dataset, methods, reps: int, train_frac: float = 0.8,
                        seed: int = 0, cfg: FitConfig | None = None,
                        scale: str = "variance") -> SelectionReport:
    """Repeated random splits of raw data; test MSE is on the response's
    original scale and each split is standardized with its training rows."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must lie in (0, 1), got {train_frac}")
    if ds.n < 3:
        raise DataError("need at least three rows for a split study")
    methods = [PriorRule(m) for m in methods]
    cfg = cfg or FitConfig()
    tasks = [(ds, methods, r, train_frac, seed, cfg, scale) for r in range(reps)]
    records = [rec for batch in _run_tasks(_split_task, tasks) for rec in batch]
    order = {m.value: k for k, m in enumerate(methods)}
    records.sort(key=lambda r: (order[r.method], r.rep))
    cells = [SelectionStats(*row) for row in
             _cells(records, ("method",), ("mse", "n_selected"))]
    cells.sort(key=lambda c: order[c.method])
    return SelectionReport(tuple(cells), tuple(records), ds.d)
