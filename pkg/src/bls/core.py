"""Active-set fast marginal-likelihood maximisation for sparse Bayesian models.

Three prior rules share one engine:

``BLS``
    Bayesian-Lasso hierarchy: ``w_i ~ N(0, tau_i * sigma2)``,
    ``tau_i ~ Exp(lambda / 2)``, Gamma hyperprior on ``lambda`` and
    inverse-Gamma on ``sigma2``. The weight prior is scaled by the noise
    variance, so the pruning threshold depends on ``sigma2``.
``FRVM``
    Fast relevance vector machine: ``w_i ~ N(0, 1 / alpha_i)`` with flat
    hyperpriors. ``tau`` stores ``1 / alpha_i`` (0 means pruned).
``FLAP``
    Fast Laplace: ``w_i ~ N(0, tau_i)``, ``tau_i ~ Exp(lambda / 2)``; the
    weight prior is not coupled to the noise.

All rules write the marginal covariance as ``C = sigma2 I + Phi D Phi^T``
with ``D = diag(g * tau)``, where the coupling ``g`` is ``sigma2`` for BLS
and 1 otherwise. ``C`` is never formed; everything goes through the
``L x L`` posterior over the active columns.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .errors import DataError, NumericalDegeneracyError
from .kernels import DesignMatrix

log = logging.getLogger(__name__)

LAMBDA_LIMIT = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


class PriorRule(str, Enum):
    BLS = "bls"
    FRVM = "frvm"
    FLAP = "flap"


class ActionKind(str, Enum):
    ADD = "add"
    REESTIMATE = "reestimate"
    DELETE = "delete"


class Action(NamedTuple):
    index: int
    kind: ActionKind
    delta: float
    tau: float


@dataclass(frozen=True)
class FitConfig:
    """Engine settings.

    ``a, b`` parametrise the Gamma hyperprior on lambda and ``c, d`` the
    inverse-Gamma hyperprior on sigma2. ``normalize`` divides every basis
    column by its Euclidean norm before fitting (results are mapped back to
    the original column scale). ``collinear_tol`` blocks adding a column whose
    ``S`` is below ``collinear_tol * ||phi||^2 / sigma2``: such a column is
    numerically inside the span of the active set and its ``S``, ``Q`` carry
    no reliable digits.

    Lambda is refreshed every ``lambda_update_period`` accepted moves. If the
    same active set recurs three times within the last ``stall_window``
    add/delete moves the loop stops: the alternating lambda update has put
    it in a limit cycle.
    """

    max_iters: int = 5000
    tol_logml: float = 1e-6
    tol_tau: float = 1e-3
    sigma2_update_period: int = 5
    fix_sigma2: float | None = None
    seed: int = 0
    a: float = 1e-6
    b: float = 1e-6
    c: float = 1e-6
    d: float = 1e-6
    normalize: bool = True
    collinear_tol: float = 1e-6
    lambda_update_period: int = 1
    stall_window: int = 200

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not (self.tol_logml > 0 and self.tol_tau > 0):
            raise ValueError("tolerances must be positive")
        if min(self.sigma2_update_period, self.lambda_update_period, self.stall_window) < 1:
            raise ValueError("update periods and stall_window must be positive")
        if self.fix_sigma2 is not None and not self.fix_sigma2 > 0:
            raise ValueError("fix_sigma2 must be positive")
        if not 0 <= self.collinear_tol < 1:
            raise ValueError("collinear_tol must lie in [0, 1)")
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError("hyperprior constants must be nonnegative")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class HyperState:
    tau: np.ndarray
    lam: float
    sigma2: float
    a: float = 1e-6
    b: float = 1e-6
    c: float = 1e-6
    d: float = 1e-6

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.tau > 0)


@dataclass
class PosteriorState:
    mu: np.ndarray
    Sigma: np.ndarray
    active_index: np.ndarray
    log_marginal: float = float("nan")
    chol: np.ndarray | None = field(default=None, repr=False)


@dataclass
class SQCache:
    S: np.ndarray
    Q: np.ndarray
    s: np.ndarray
    q: np.ndarray


@dataclass(frozen=True)
class FitResult:
    """A converged (or best-effort) sparse model.

    ``weights`` and ``Sigma`` are on the scale of the design columns as
    supplied by the caller; ``tau_hat`` is on the engine's working scale
    (unit-norm columns when ``config.normalize`` is set).
    """

    rule: PriorRule
    relevance_indices: np.ndarray
    weights: np.ndarray
    Sigma: np.ndarray
    tau_hat: np.ndarray
    lambda_hat: float
    sigma2_hat: float
    logml_trace: np.ndarray
    iterations: int
    converged: bool
    n_columns: int
    stop_reason: str = "converged"

    @property
    def n_relevant(self) -> int:
        return int(self.relevance_indices.size)

    @property
    def coef(self) -> np.ndarray:
        """Dense weight vector over all columns (zeros for pruned ones)."""
        w = np.zeros(self.n_columns)
        w[self.relevance_indices] = self.weights
        return w


# ---------------------------------------------------------------------------
# scalar rules
# ---------------------------------------------------------------------------

def coupling(rule: PriorRule, sigma2: float) -> float:
    """Factor multiplying tau in the weight prior variance."""
    return sigma2 if PriorRule(rule) is PriorRule.BLS else 1.0


def little_sq(S, Q, tau_i, sigma2):
    """Leave-one-out factors ``s, q`` from the full-model ``S, Q``.

    ``sigma2`` is the prior coupling (the noise variance for BLS, 1 for the
    uncoupled rules).
    """
    S = np.asarray(S, dtype=float)
    Q = np.asarray(Q, dtype=float)
    denom = 1.0 - np.asarray(tau_i, dtype=float) * sigma2 * S
    if np.any(denom <= 0):
        bad = np.flatnonzero(np.atleast_1d(denom) <= 0)
        raise NumericalDegeneracyError(
            "1 - tau*sigma2*S <= 0: posterior is stale or ill-conditioned",
            index=int(bad[0]),
        )
    s, q = S / denom, Q / denom
    if s.ndim == 0:
        return float(s), float(q)
    return s, q


def _check_s(s):
    if np.any(np.asarray(s) <= 0):
        raise ValueError("sparsity factor s must be positive")


def bls_tau_stationary(s, q, lam, sigma2):
    """Maximiser of the single-coordinate BLS objective over tau >= 0."""
    _check_s(s)
    s = np.asarray(s, dtype=float)
    q2 = np.asarray(q, dtype=float) ** 2
    lam = np.asarray(lam, dtype=float)
    inv = 1.0 / sigma2
    with np.errstate(divide="ignore", invalid="ignore"):
        k2 = s**2 + 2.0 * s * lam * inv
        theta = k2**2 - 4.0 * lam * s**2 * inv * (lam * inv + s - q2)
        # rationalised positive root avoids cancellation for small lambda
        root = 2.0 * inv * (q2 - s - lam * inv) / (k2 + np.sqrt(np.maximum(theta, 0.0)))
        limit = inv * (q2 - s) / s**2
    tau = np.where(lam < LAMBDA_LIMIT, limit, root)
    tau = np.where(q2 - s > lam * inv, tau, 0.0)
    tau = np.maximum(tau, 0.0)
    return float(tau) if tau.ndim == 0 else tau


def frvm_tau_stationary(s, q):
    """Maximiser for the RVM prior, stored as a variance ``1 / alpha``."""
    _check_s(s)
    s = np.asarray(s, dtype=float)
    q2 = np.asarray(q, dtype=float) ** 2
    tau = np.where(q2 > s, (q2 - s) / s**2, 0.0)
    return float(tau) if tau.ndim == 0 else tau


def flap_tau_stationary(s, q, lam):
    """Maximiser for the Laplace prior not coupled to the noise variance."""
    return bls_tau_stationary(s, q, lam, 1.0)


def tau_stationary(rule: PriorRule, s, q, lam, sigma2):
    rule = PriorRule(rule)
    if rule is PriorRule.BLS:
        return bls_tau_stationary(s, q, lam, sigma2)
    if rule is PriorRule.FLAP:
        return flap_tau_stationary(s, q, lam)
    return frvm_tau_stationary(s, q)


def coordinate_objective(tau, s, q, lam, g):
    """Terms of the log marginal that depend on one ``tau_i``.

    ``g`` is the prior coupling; ``lam`` the exponential rate (0 for FRVM).
    """
    tau = np.asarray(tau, dtype=float)
    x = g * tau * s
    return 0.5 * (-np.log1p(x) + g * tau * q**2 / (1.0 + x) - lam * tau)


def update_lambda(tau, n_dim, a, b, previous=0.0):
    """Closed-form lambda maximiser given the current tau vector.

    ``n_dim`` counts the tau parameters taking part in the update. The fit
    loop passes the number of active columns: counting pruned columns too
    drives lambda up as soon as the first column is added and collapses the
    model back to a single basis.
    """
    denom = float(np.sum(tau)) + 2.0 * b
    if denom <= 0:
        return previous
    return 2.0 * (n_dim + a - 1.0) / denom


# ---------------------------------------------------------------------------
# posterior machinery
# ---------------------------------------------------------------------------

def _as_values(phi):
    if isinstance(phi, DesignMatrix):
        return phi.values
    return np.asarray(phi, dtype=float)


def _factor(H, active):
    try:
        return linalg.cholesky(H, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        # report the column whose pivot breaks down
        diag = np.diag(H)
        idx = int(active[int(np.argmin(diag))]) if len(active) else None
        for k in range(1, len(active) + 1):
            try:
                linalg.cholesky(H[:k, :k], lower=True)
            except (linalg.LinAlgError, ValueError):
                idx = int(active[k - 1])
                break
        raise NumericalDegeneracyError(
            f"posterior precision is not positive definite (column {idx})", index=idx
        ) from None


def _posterior_from_blocks(G_AA, Phity_A, tau_A, sigma2, g, active):
    """Posterior over the active columns from Gram blocks."""
    if len(active) == 0:
        return PosteriorState(np.zeros(0), np.zeros((0, 0)), np.asarray(active, dtype=int))
    H = G_AA / sigma2 + np.diag(1.0 / (g * tau_A))
    R = _factor(H, active)
    Sigma = linalg.cho_solve((R, True), np.eye(len(active)))
    Sigma = 0.5 * (Sigma + Sigma.T)
    mu = linalg.cho_solve((R, True), Phity_A) / sigma2
    return PosteriorState(mu, Sigma, np.asarray(active, dtype=int), chol=R)


def _log_marginal_terms(yy, Phity_A, post, tau_A, g, hyper, n, n_dim, rule):
    """Log joint of y and hyperparameters up to the Gamma normalisers."""
    sigma2 = hyper.sigma2
    if len(post.active_index):
        logdet_C = (
            n * math.log(sigma2)
            + float(np.sum(np.log(g * tau_A)))
            + 2.0 * float(np.sum(np.log(np.diag(post.chol))))
        )
        yCy = (yy - float(Phity_A @ post.mu)) / sigma2
    else:
        logdet_C = n * math.log(sigma2)
        yCy = yy / sigma2
    L = -0.5 * (n * LOG_2PI + logdet_C + yCy)
    if rule is not PriorRule.FRVM:
        lam = hyper.lam
        if lam > 0:
            L += n_dim * math.log(lam / 2.0) - 0.5 * lam * float(np.sum(hyper.tau))
            L += (hyper.a - 1.0) * math.log(lam) - hyper.b * lam
    L += -(hyper.c + 1.0) * math.log(sigma2) - hyper.d / sigma2
    return L


def posterior_refresh(phi, y, hyper: HyperState, rule: PriorRule = PriorRule.BLS) -> PosteriorState:
    """Posterior mean and covariance of the active weights, plus the log
    marginal at the current hyperparameters."""
    rule = PriorRule(rule)
    Phi = _as_values(phi)
    y = np.asarray(y, dtype=float)
    if not hyper.sigma2 > 0:
        raise NumericalDegeneracyError("sigma2 must be positive")
    active = hyper.active
    g = coupling(rule, hyper.sigma2)
    Phi_A = Phi[:, active]
    Phity_A = Phi_A.T @ y
    post = _posterior_from_blocks(Phi_A.T @ Phi_A, Phity_A, hyper.tau[active], hyper.sigma2, g, active)
    post.log_marginal = _log_marginal_terms(
        float(y @ y), Phity_A, post, hyper.tau[active], g, hyper, Phi.shape[0], Phi.shape[1], rule
    )
    return post


def log_marginal(phi, y, hyper: HyperState, rule: PriorRule = PriorRule.BLS) -> float:
    """Log of ``p(y, tau, sigma2, lambda)`` without the Gamma normalising
    constants. The lambda terms are dropped when ``lambda == 0``."""
    rule = PriorRule(rule)
    if rule is not PriorRule.FRVM and hyper.lam < 0:
        raise ValueError("lambda must be nonnegative")
    L = posterior_refresh(phi, y, hyper, rule).log_marginal
    if not math.isfinite(L):
        raise NumericalDegeneracyError("log marginal is not finite")
    return L


def compute_SQ(phi, y, state: PosteriorState, sigma2: float):
    """Full-model sparsity and quality factors for every column."""
    Phi = _as_values(phi)
    y = np.asarray(y, dtype=float)
    inv = 1.0 / sigma2
    S = inv * np.einsum("ij,ij->j", Phi, Phi)
    Q = inv * (Phi.T @ y)
    if len(state.active_index):
        B = Phi.T @ Phi[:, state.active_index]
        BS = B @ state.Sigma
        S = S - inv**2 * np.einsum("ij,ij->i", BS, B)
        Q = Q - inv**2 * (BS @ (Phi[:, state.active_index].T @ y))
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(Q))):
        raise NumericalDegeneracyError("S/Q overflow")
    return S, Q


def update_sigma2(y, phi, hyper: HyperState, rule: PriorRule = PriorRule.BLS, post: PosteriorState | None = None) -> float:
    """Re-estimate the noise variance given the current tau.

    BLS uses its closed-form maximiser ``(y^T C~^-1 y + 2d) / (N + 2c + 2)``
    with ``C = sigma2 * C~``; FRVM and FLAP use the effective-degrees-of-
    freedom update ``||y - Phi mu||^2 / (N - sum_i gamma_i)`` of the fast RVM.
    """
    rule = PriorRule(rule)
    Phi = _as_values(phi)
    y = np.asarray(y, dtype=float)
    n = y.size
    if post is None:
        post = posterior_refresh(Phi, y, hyper, rule)
    A = post.active_index
    fitted = Phi[:, A] @ post.mu if len(A) else np.zeros(n)
    var_y = float(np.var(y, ddof=1)) if n > 1 else 0.0
    floor = 1e-12 * var_y if var_y > 0 else np.finfo(float).tiny
    if rule is PriorRule.BLS:
        # y^T C~^-1 y = y^T (y - Phi mu); C~ does not depend on sigma2
        num = float(y @ (y - fitted)) + 2.0 * hyper.d
        sigma2 = num / (n + 2.0 * hyper.c + 2.0)
    else:
        g = coupling(rule, hyper.sigma2)
        gamma = 1.0 - np.diag(post.Sigma) / (g * hyper.tau[A]) if len(A) else np.zeros(0)
        dof = n - float(np.sum(gamma))
        if dof <= 0:
            raise NumericalDegeneracyError(f"noise update has nonpositive degrees of freedom ({dof:g})")
        resid = y - fitted
        sigma2 = float(resid @ resid) / dof
    if not math.isfinite(sigma2):
        raise NumericalDegeneracyError("sigma2 update is not finite")
    return max(sigma2, floor)


def init_state(phi, y, cfg: FitConfig, rule: PriorRule = PriorRule.BLS):
    """Empty-model starting point: all tau zero, lambda zero."""
    Phi = _as_values(phi)
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise DataError("need a response vector with at least two entries")
    if Phi.shape[0] != y.size:
        raise DataError(f"design has {Phi.shape[0]} rows but y has {y.size}")
    if not np.all(np.isfinite(y)):
        raise DataError("response has non-finite entries")
    if cfg.fix_sigma2 is not None:
        sigma2 = float(cfg.fix_sigma2)
    else:
        var_y = float(np.var(y, ddof=1))
        if var_y <= 0:
            raise DataError("response is constant; cannot initialise the noise variance")
        sigma2 = 0.1 * var_y
    hyper = HyperState(np.zeros(Phi.shape[1]), 0.0, sigma2, cfg.a, cfg.b, cfg.c, cfg.d)
    post = PosteriorState(np.zeros(0), np.zeros((0, 0)), np.zeros(0, dtype=int))
    S, Q = compute_SQ(Phi, y, post, sigma2)
    post.log_marginal = _log_marginal_terms(
        float(y @ y), np.zeros(0), post, np.zeros(0), 1.0, hyper, Phi.shape[0], Phi.shape[1], PriorRule(rule)
    )
    return hyper, post, SQCache(S, Q, S.copy(), Q.copy())


# ---------------------------------------------------------------------------
# action selection
# ---------------------------------------------------------------------------

def candidate_gains(sq: SQCache, hyper: HyperState, rule: PriorRule):
    """Stationary tau and objective gain for every column.

    Columns that are inactive and stay at zero get a gain of ``-inf``.
    """
    rule = PriorRule(rule)
    g = coupling(rule, hyper.sigma2)
    lam = 0.0 if rule is PriorRule.FRVM else hyper.lam
    s_safe = np.where(sq.s > 0, sq.s, np.nan)
    with np.errstate(invalid="ignore"):
        target = tau_stationary(rule, np.where(np.isnan(s_safe), 1.0, s_safe), sq.q, lam, hyper.sigma2)
    target = np.where(np.isnan(s_safe), 0.0, target)
    cur = hyper.tau
    gain = coordinate_objective(target, sq.s, sq.q, lam, g) - coordinate_objective(cur, sq.s, sq.q, lam, g)
    gain = np.where((cur == 0) & (target == 0), -np.inf, gain)
    return target, gain


def select_action(sq: SQCache, hyper: HyperState, rule: PriorRule = PriorRule.BLS, tol: float = 0.0,
                  addable: np.ndarray | None = None, allow_empty: bool = True) -> Action | None:
    """Pick the single-coordinate update with the largest objective gain.

    Returns ``None`` when no update improves the objective by more than
    ``tol`` (the convergence signal).
    """
    target, gain = candidate_gains(sq, hyper, rule)
    active = hyper.tau > 0
    if addable is not None:
        gain = np.where(~active & ~addable, -np.inf, gain)
    if not allow_empty and active.sum() == 1:
        gain = np.where(active & (target == 0), -np.inf, gain)
    i = int(np.argmax(gain))
    if not gain[i] > tol:
        return None
    if not active[i]:
        kind = ActionKind.ADD
    elif target[i] > 0:
        kind = ActionKind.REESTIMATE
    else:
        kind = ActionKind.DELETE
    return Action(i, kind, float(gain[i]), float(target[i]))


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------

class _Workspace:
    """Precomputed Gram quantities for one design/response pair."""

    def __init__(self, Phi, y, rule, cfg):
        self.Phi = Phi
        self.y = y
        self.rule = rule
        self.cfg = cfg
        self.n, self.m = Phi.shape
        self.G = Phi.T @ Phi
        self.Phity = Phi.T @ y
        self.yy = float(y @ y)
        self.diagG = np.diag(self.G).copy()
        self.var_y = float(np.var(y, ddof=1))

    def posterior(self, hyper):
        A = hyper.active
        g = coupling(self.rule, hyper.sigma2)
        post = _posterior_from_blocks(
            self.G[np.ix_(A, A)], self.Phity[A], hyper.tau[A], hyper.sigma2, g, A
        )
        post.log_marginal = _log_marginal_terms(
            self.yy, self.Phity[A], post, hyper.tau[A], g, hyper, self.n, self.m, self.rule
        )
        return post

    def sq(self, hyper, post):
        inv = 1.0 / hyper.sigma2
        S = inv * self.diagG
        Q = inv * self.Phity
        A = post.active_index
        if len(A):
            B = self.G[:, A]
            BS = B @ post.Sigma
            S = S - inv**2 * np.einsum("ij,ij->i", BS, B)
            Q = Q - inv**2 * (BS @ self.Phity[A])
        s, q = S.copy(), Q.copy()
        if len(A):
            # for active columns C^-1 phi_A = sigma^-2 Phi_A Sigma diag(alpha), so
            # s, q follow from the posterior without the 1 - tau*g*S cancellation
            alpha = 1.0 / (coupling(self.rule, hyper.sigma2) * hyper.tau[A])
            dS = np.diag(post.Sigma)
            S[A] = alpha - alpha**2 * dS
            Q[A] = alpha * post.mu
            s[A] = 1.0 / dS - alpha
            q[A] = post.mu / dS
            if np.any(s[A] <= 0):
                bad = int(A[np.argmin(s[A])])
                raise NumericalDegeneracyError(
                    f"sparsity factor of active column {bad} is not positive", index=bad
                )
        return SQCache(S, Q, s, q)

    def addable(self, hyper, sq):
        return (sq.S > self.cfg.collinear_tol * self.diagG / hyper.sigma2) & (self.diagG > 0)

    def sigma2(self, hyper, post):
        return update_sigma2(self.y, self.Phi, hyper, self.rule, post)


def _rel(new, old):
    return abs(new - old) / max(abs(old), np.finfo(float).tiny)


def fit(phi, y, rule: PriorRule = PriorRule.BLS, cfg: FitConfig | None = None) -> FitResult:
    """Run the sequential add/re-estimate/delete loop to convergence.

    If ``max_iters`` is reached first, the state with the highest log
    marginal seen along the way is returned with ``converged=False``.
    """
    rule = PriorRule(rule)
    cfg = cfg or FitConfig()
    Phi = _as_values(phi)
    y = np.asarray(y, dtype=float)
    hyper, _, _ = init_state(Phi, y, cfg, rule)

    scale = np.sqrt(np.einsum("ij,ij->j", Phi, Phi))
    if cfg.normalize:
        scale = np.where(scale > 0, scale, 1.0)
        work = Phi / scale
    else:
        scale = np.ones(Phi.shape[1])
        work = Phi
    ws = _Workspace(work, y, rule, cfg)
    estimate_sigma2 = cfg.fix_sigma2 is None
    uses_lambda = rule is not PriorRule.FRVM

    post = ws.posterior(hyper)
    sq = ws.sq(hyper, post)
    trace = []
    converged = False
    since_sigma2 = 0
    recent = deque(maxlen=cfg.stall_window)
    stop_reason = "max_iters"
    best = (post.log_marginal, hyper.tau.copy(), hyper.lam, hyper.sigma2)
    it = 0
    while it < cfg.max_iters:
        it += 1
        addable = ws.addable(hyper, sq)
        action = select_action(sq, hyper, rule, 0.0, addable, allow_empty=False)
        small = action is None or action.delta < cfg.tol_logml
        if small:
            active = hyper.tau > 0
            target, _ = candidate_gains(sq, hyper, rule)
            drift = 0.0
            if active.any():
                drift = float(np.max(np.abs(target[active] - hyper.tau[active]) / hyper.tau[active]))
            if drift < cfg.tol_tau:
                if not estimate_sigma2 or since_sigma2 == 0:
                    converged = True
                    trace.append(post.log_marginal)
                    break
                # force a noise refresh before accepting convergence
                new_sigma2 = ws.sigma2(hyper, post)
                changed = _rel(new_sigma2, hyper.sigma2) > cfg.tol_tau
                hyper.sigma2 = new_sigma2
                since_sigma2 = 0
                post = ws.posterior(hyper)
                sq = ws.sq(hyper, post)
                trace.append(post.log_marginal)
                if not changed:
                    converged = True
                    break
                continue
            if action is None:
                # nothing improves yet tau still drifts: accept as stationary
                converged = True
                trace.append(post.log_marginal)
                break

        hyper.tau[action.index] = action.tau
        post = ws.posterior(hyper)
        since_sigma2 += 1
        if estimate_sigma2 and it % cfg.sigma2_update_period == 0:
            hyper.sigma2 = ws.sigma2(hyper, post)
            since_sigma2 = 0
        if uses_lambda and np.any(hyper.tau > 0) and (hyper.lam == 0 or it % cfg.lambda_update_period == 0):
            nd = int(np.count_nonzero(hyper.tau))
            hyper.lam = update_lambda(hyper.tau, nd, hyper.a, hyper.b, hyper.lam)
        post = ws.posterior(hyper)
        sq = ws.sq(hyper, post)
        trace.append(post.log_marginal)
        if post.log_marginal > best[0]:
            best = (post.log_marginal, hyper.tau.copy(), hyper.lam, hyper.sigma2)
        log.debug("iter %d %s %d dL=%.3g L=%d sigma2=%.4g lam=%.4g",
                  it, action.kind.value, action.index, action.delta,
                  len(post.active_index), hyper.sigma2, hyper.lam)
        if action.kind is not ActionKind.REESTIMATE:
            key = (hyper.tau > 0).tobytes()
            recent.append(key)
            if recent.count(key) >= 3:
                stop_reason = "cycle"
                log.info("add/delete cycle detected at iteration %d", it)
                break

    if converged:
        stop_reason = "converged"
    elif stop_reason == "max_iters":
        log.info("fit stopped at max_iters=%d without converging", cfg.max_iters)
        # fall back to the best state visited
        _, hyper.tau, hyper.lam, hyper.sigma2 = best
        post = ws.posterior(hyper)
    A = post.active_index
    order = np.argsort(A)
    A = A[order]
    mu = post.mu[order] / scale[A]
    Sigma = post.Sigma[np.ix_(order, order)] / np.outer(scale[A], scale[A])
    trace = np.asarray(trace, dtype=float)
    if not np.all(np.isfinite(trace)):
        raise NumericalDegeneracyError("log-marginal trace is not finite")
    return FitResult(
        rule=rule,
        relevance_indices=A,
        weights=mu,
        Sigma=Sigma,
        tau_hat=hyper.tau.copy(),
        lambda_hat=float(hyper.lam),
        sigma2_hat=float(hyper.sigma2),
        logml_trace=trace,
        iterations=it,
        converged=converged,
        n_columns=Phi.shape[1],
        stop_reason=stop_reason,
    )


