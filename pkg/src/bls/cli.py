"""Command-line interface: ``bls fit|predict|bench-sinc1d|bench-sinc2d|select``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import __version__
from .core import FitConfig, FitResult, PriorRule, fit
from .dataio import Dataset, load_csv, read_table, standardize
from .errors import BLSError, DataError, NumericalDegeneracyError
from .kernels import KernelSpec, build_design
from .predict import predict_arrays
from .simbench import SincSpec, run_selection_study, run_study

MODEL_FORMAT = "bls-model"
MODEL_VERSION = 1

log = logging.getLogger("bls")


class UsageError(BLSError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# model file
# ---------------------------------------------------------------------------

def _fit_to_dict(res: FitResult) -> dict:
    return {
        "rule": res.rule.value,
        "relevance_indices": res.relevance_indices.tolist(),
        "weights": res.weights.tolist(),
        "Sigma": res.Sigma.tolist(),
        "tau_hat": res.tau_hat.tolist(),
        "lambda_hat": res.lambda_hat,
        "sigma2_hat": res.sigma2_hat,
        "logml_trace": res.logml_trace.tolist(),
        "iterations": res.iterations,
        "converged": res.converged,
        "n_columns": res.n_columns,
        "stop_reason": res.stop_reason,
    }


def _fit_from_dict(d: dict) -> FitResult:
    L = len(d["weights"])
    return FitResult(
        rule=PriorRule(d["rule"]),
        relevance_indices=np.asarray(d["relevance_indices"], dtype=int),
        weights=np.asarray(d["weights"], dtype=float),
        Sigma=np.asarray(d["Sigma"], dtype=float).reshape(L, L),
        tau_hat=np.asarray(d["tau_hat"], dtype=float),
        lambda_hat=float(d["lambda_hat"]),
        sigma2_hat=float(d["sigma2_hat"]),
        logml_trace=np.asarray(d["logml_trace"], dtype=float),
        iterations=int(d["iterations"]),
        converged=bool(d["converged"]),
        n_columns=int(d["n_columns"]),
        stop_reason=d.get("stop_reason", "converged"),
    )


@dataclass(frozen=True)
class ModelFile:
    """Everything ``predict`` needs: the fit, the kernel (with any resolved
    width), training inputs for kernel models, and the input transform."""

    result: FitResult
    kernel: KernelSpec
    input_names: tuple[str, ...]
    train_X: np.ndarray | None
    x_center: np.ndarray
    x_scale: np.ndarray
    y_center: float
    config: dict
    response: str = "y"

    def transform(self, X_raw) -> np.ndarray:
        return (np.asarray(X_raw, dtype=float) - self.x_center) / self.x_scale

    def predict(self, X_raw, coverage: float = 0.95):
        """(mean, variance, lo, hi) on the response's original scale."""
        X = self.transform(X_raw)
        mean, var, lo, hi = predict_arrays(self.result, self.train_X, self.kernel, X, coverage)
        return mean + self.y_center, var, lo + self.y_center, hi + self.y_center

    def to_json(self) -> str:
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "package_version": __version__,
            "kernel": self.kernel.to_dict(),
            "response": self.response,
            "input_names": list(self.input_names),
            "train_X": None if self.train_X is None else self.train_X.tolist(),
            "transform": {
                "x_center": self.x_center.tolist(),
                "x_scale": self.x_scale.tolist(),
                "y_center": self.y_center,
            },
            "config": self.config,
            "fit": _fit_to_dict(self.result),
        }
        return json.dumps(doc, indent=1, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "ModelFile":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"model file is not valid JSON: {exc}") from None
        if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
            raise DataError("not a model file")
        if doc.get("version") != MODEL_VERSION:
            raise DataError(f"unsupported model file version {doc.get('version')!r}")
        try:
            t = doc["transform"]
            tx = doc["train_X"]
            return cls(
                result=_fit_from_dict(doc["fit"]),
                kernel=KernelSpec.from_dict(doc["kernel"]),
                input_names=tuple(doc["input_names"]),
                train_X=None if tx is None else np.asarray(tx, dtype=float),
                x_center=np.asarray(t["x_center"], dtype=float),
                x_scale=np.asarray(t["x_scale"], dtype=float),
                y_center=float(t["y_center"]),
                config=doc["config"],
                response=doc.get("response", "y"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed model file: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ModelFile":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read model {path}: {exc.strerror or exc}") from None
        return cls.from_json(text)


def fit_model(ds: Dataset, rule, kernel: KernelSpec, cfg: FitConfig,
              scale: str | None) -> ModelFile:
    """Fit ``ds`` (raw values) and package the result as a :class:`ModelFile`."""
    if scale is not None:
        ds = standardize(ds, scale)
    design = build_design(kernel, ds.X)
    res = fit(design, ds.y, rule, cfg)
    return ModelFile(
        result=res,
        kernel=design.spec,
        input_names=ds.names,
        train_X=None if kernel.is_identity else np.array(ds.X),
        x_center=np.array(ds.x_center),
        x_scale=np.array(ds.x_scale),
        y_center=float(ds.y_center),
        config=cfg.to_dict(),
        response=ds.response,
    )


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------

def _method(text):
    try:
        return PriorRule(text.strip().lower())
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown method {text!r} (choose bls, frvm, flap)") from None


def _methods(text):
    out = [_method(t) for t in text.split(",") if t.strip()]
    if not out:
        raise argparse.ArgumentTypeError("empty method list")
    return out


def _kernel(text):
    try:
        return KernelSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _floats(text):
    try:
        out = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        v = 0
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        v = float("nan")
    if not v > 0 or v == float("inf"):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _fraction(text):
    try:
        v = float(text)
    except ValueError:
        v = float("nan")
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"fraction must lie in (0, 1), got {text!r}")
    return v


def _config(args, **extra) -> FitConfig:
    return FitConfig(max_iters=args.max_iters, seed=args.seed, **extra)


def _scale(choice, kernel: KernelSpec):
    if choice == "auto":
        return "variance" if kernel.is_identity else None
    return None if choice == "none" else choice


def _write_outputs(prefix, csv_text, md_text):
    if prefix is None:
        return
    prefix = Path(prefix)
    try:
        prefix.with_suffix(".csv").write_text(csv_text, encoding="utf-8")
        prefix.with_suffix(".md").write_text(md_text, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {prefix}: {exc.strerror or exc}") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    ds = load_csv(args.data, args.response)
    cfg = _config(args, fix_sigma2=args.fix_sigma2)
    model = fit_model(ds, args.method, args.kernel, cfg, _scale(args.standardize, args.kernel))
    res = model.result
    out = sys.stdout
    print(f"method        {res.rule.value}", file=out)
    print(f"relevant      {res.n_relevant} of {res.n_columns}", file=out)
    print(f"sigma2_hat    {res.sigma2_hat:.6g}", file=out)
    print(f"lambda_hat    {res.lambda_hat:.6g}", file=out)
    print(f"log_marginal  {res.logml_trace[-1]:.6f}", file=out)
    print(f"iterations    {res.iterations} ({res.stop_reason})", file=out)
    z = float(norm.ppf(0.5 + 0.5 * args.coverage))
    half = z * np.sqrt(np.clip(np.diag(res.Sigma), 0.0, None))
    pct = f"{100 * args.coverage:g}%"
    if model.kernel.is_identity:
        coef = res.coef
        lo = dict(zip(res.relevance_indices.tolist(), res.weights - half))
        hi = dict(zip(res.relevance_indices.tolist(), res.weights + half))
        print(f"\n{'variable':<12}{'weight':>12}  {pct} interval", file=out)
        for j, name in enumerate(model.input_names):
            if j in lo:
                print(f"{name:<12}{coef[j]:>12.4f}  ({lo[j]:.4f}, {hi[j]:.4f})", file=out)
            else:
                print(f"{name:<12}{0.0:>12.4f}  pruned", file=out)
    else:
        print(f"\n{'basis':<8}{'weight':>12}  {pct} interval", file=out)
        for k, j in enumerate(res.relevance_indices):
            w = res.weights[k]
            print(f"{int(j):<8}{w:>12.5g}  ({w - half[k]:.5g}, {w + half[k]:.5g})", file=out)
    if args.out:
        try:
            model.save(args.out)
        except OSError as exc:
            raise DataError(f"cannot write {args.out}: {exc.strerror or exc}") from None
    return 0


def cmd_predict(args) -> int:
    model = ModelFile.load(args.model)
    if args.data == "-":
        header, values = read_table(sys.stdin, "<stdin>")
    else:
        try:
            with open(args.data, encoding="utf-8", newline="") as fh:
                header, values = read_table(fh, args.data)
        except OSError as exc:
            raise DataError(f"cannot read {args.data}: {exc.strerror or exc}") from None
    missing = [n for n in model.input_names if n not in header]
    if missing:
        raise DataError(f"input columns missing: {', '.join(missing)}")
    cols = [header.index(n) for n in model.input_names]
    X = values[:, cols]
    if X.shape[0]:
        mean, var, lo, hi = model.predict(X, args.coverage)
    else:
        mean = var = lo = hi = np.zeros(0)
    handle = sys.stdout if args.out is None else None
    try:
        fh = handle or open(args.out, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc.strerror or exc}") from None
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mean", "variance", "lo", "hi"])
        for row in zip(mean, var, lo, hi):
            w.writerow([repr(float(v)) for v in row])
    finally:
        if handle is None:
            fh.close()
    return 0


def _bench(args, dim) -> int:
    if dim == 1:
        template = SincSpec(dim=1, n_points=args.n_points, seed=args.seed)
    else:
        template = SincSpec(dim=2, grid_step=args.grid_step, seed=args.seed)
    report = run_study(args.methods, args.sigmas, args.reps, template,
                       _config(args), args.kernel, args.fixed_sigma2)
    md = report.to_markdown()
    sys.stdout.write(md)
    _write_outputs(args.out, report.to_csv(), md)
    return 0


def cmd_bench(args) -> int:
    return _bench(args, 2 if args.command == "bench-sinc2d" else 1)


def cmd_select(args) -> int:
    ds = load_csv(args.data, args.response)
    report = run_selection_study(ds, args.methods, args.reps, args.train_frac,
                                 args.seed, _config(args), args.standardize)
    md = report.to_markdown()
    sys.stdout.write(md)
    _write_outputs(args.out, report.to_csv(), md)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bls", description="Sparse Bayesian regression (BLS, FRVM, FLAP).")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--max-iters", type=_positive_int, default=FitConfig.max_iters)

    f = sub.add_parser("fit", help="fit a model to a CSV file")
    f.add_argument("--data", required=True, help="CSV path or builtin:diabetes")
    f.add_argument("--response", default="y")
    f.add_argument("--method", type=_method, default=PriorRule.BLS)
    f.add_argument("--kernel", type=_kernel, default=KernelSpec(),
                   help="spline, spline-sumcubic, gaussian[:width] or identity")
    f.add_argument("--standardize", choices=["auto", "none", "variance", "norm"], default="auto",
                   help="regressor scaling (auto: variance for identity, none for kernels)")
    f.add_argument("--fix-sigma2", type=_positive_float, default=None)
    f.add_argument("--coverage", type=_fraction, default=0.95)
    f.add_argument("--out", help="model JSON path")
    common(f)
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="predict from a saved model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True, help="CSV of inputs, or - for stdin")
    pr.add_argument("--coverage", type=_fraction, default=0.95)
    pr.add_argument("--out", help="output CSV (default stdout)")
    pr.set_defaults(func=cmd_predict)

    for name, dim in (("bench-sinc1d", 1), ("bench-sinc2d", 2)):
        b = sub.add_parser(name, help=f"{dim}D Sinc noise sweep")
        b.add_argument("--sigmas", type=_floats, default=[0.01, 0.05, 0.1, 0.2, 0.3, 0.5])
        b.add_argument("--reps", type=_positive_int, default=100)
        b.add_argument("--methods", type=_methods, default=list(PriorRule))
        b.add_argument("--fixed-sigma2", action="store_true",
                       help="hold sigma2 at 0.1 * var(y)")
        b.add_argument("--kernel", type=_kernel, default=KernelSpec())
        if dim == 1:
            b.add_argument("--n-points", type=_positive_int, default=200)
        else:
            b.add_argument("--grid-step", type=_positive_float, default=0.3)
        b.add_argument("--out", help="output prefix; writes PREFIX.csv and PREFIX.md")
        common(b)
        b.set_defaults(func=cmd_bench)

    s = sub.add_parser("select", help="repeated train/test variable-selection study")
    s.add_argument("--data", required=True, help="CSV path or builtin:diabetes")
    s.add_argument("--response", default="y")
    s.add_argument("--methods", type=_methods, default=list(PriorRule))
    s.add_argument("--reps", type=_positive_int, default=100)
    s.add_argument("--train-frac", type=_fraction, default=0.8)
    s.add_argument("--standardize", choices=["variance", "norm"], default="variance")
    s.add_argument("--out", help="output prefix; writes PREFIX.csv and PREFIX.md")
    common(s)
    s.set_defaults(func=cmd_select)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except NumericalDegeneracyError as exc:
        print(f"bls: numerical failure: {exc}", file=sys.stderr)
        return exc.exit_code
    except BLSError as exc:
        print(f"bls: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"bls: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        # downstream reader closed early (e.g. `| head`)
        sys.stderr.close()
        return 0


if __name__ == "__main__":
    sys.exit(main())
