"""OLS-anchored three-stage filter and its driver.

Each step fits least squares, then filters in turn on the residuals, on the
covariates along the residual-weighted mean direction, and on the products
``r x`` along the top eigenvector of their covariance. Large-residual samples
(the set U) sit out the last stage and are always returned to the data.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import (
    ConfigError,
    DegenerateScale,
    IterationLimitExceeded,
    NoThresholdFound,
    SingularSystem,
    TooFewSamples,
)
from .filter_basic import IterationAudit, _max_iter
from .model import Dataset, Estimate, FilterOutcome, Filtered
from .robust_stats import log_inv_eps, robust_scale_iqr, threshold_scan, top_eigenpair

_COND_LIMIT = 1.0 / math.sqrt(np.finfo(float).eps)


@dataclass(frozen=True)
class MainFilterConfig:
    epsilon: float
    tau: float = 0.1
    variance_test_const: float = 10.0
    spectral_test_const: float = 10.0
    u_cut_mult: float = 6.0
    residual_tail_const: float = 15.0
    covariate_tail_const: float = 15.0
    product_tail_const: float = 72.0
    product_tail_scale: float = 16.0
    # ridge added to E[xx^T] is ridge_rel * trace(E[xx^T]) / d
    ridge_rel: float = 1e-10
    max_iterations: int | None = None

    def __post_init__(self):
        if not 0 <= self.epsilon < 0.5:
            raise ConfigError("epsilon must lie in [0, 1/2)")
        if not 0 < self.tau < 1:
            raise ConfigError("tau must lie in (0, 1)")
        consts = (
            self.variance_test_const,
            self.spectral_test_const,
            self.u_cut_mult,
            self.residual_tail_const,
            self.covariate_tail_const,
            self.product_tail_const,
            self.product_tail_scale,
        )
        if any(c <= 0 for c in consts):
            raise ConfigError("filter constants must be positive")
        if self.ridge_rel < 0:
            raise ConfigError("ridge_rel must be nonnegative")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")


def ols(dataset: Dataset, ridge: float = 0.0) -> np.ndarray:
    """Solve ``(E[x x^T] + ridge I) b = E[y x]`` by Cholesky."""
    n, d = dataset.n, dataset.d
    if n < d:
        raise TooFewSamples(f"least squares needs n >= d, got n={n}, d={d}")
    X = dataset.X
    G = X.T @ X / n
    rhs = X.T @ dataset.y / n
    G = G + ridge * np.eye(d)
    w = np.linalg.eigvalsh(G)
    if w[0] <= 0 or w[-1] / w[0] > _COND_LIMIT:
        raise SingularSystem(f"normal equations are singular or ill-conditioned (eigenvalues {w[0]:.3g}..{w[-1]:.3g})")
    try:
        return cho_solve(cho_factor(G), rhs)
    except LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc


@dataclass
class MainFilterTrace:
    n: int
    beta_ols: list
    sigma_prime: float
    stage: str = "accept"  # y-filter | x-filter | yx-filter | accept
    u_size: int = 0
    w_norm: float = 0.0
    threshold: float | None = None
    lambda_star: float | None = None
    delta: float | None = None
    removed: int = 0
    removed_origins: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _logs(cfg: MainFilterConfig, n: int, d: int):
    big = math.log(d * n / cfg.tau)
    return big, log_inv_eps(cfg.epsilon)


def _filtered(dataset: Dataset, keep: np.ndarray, trace: MainFilterTrace, T: float, stage: str):
    removed = np.flatnonzero(~keep)
    trace.stage = stage
    trace.threshold = T
    trace.removed = int(removed.size)
    trace.removed_origins = dataset.origin[removed].tolist()
    return Filtered(dataset.subset(keep), removed), trace


def filter_main_step(dataset: Dataset, cfg: MainFilterConfig) -> tuple[FilterOutcome, MainFilterTrace]:
    n, d = dataset.n, dataset.d
    if n < max(d + 1, 8):
        raise TooFewSamples(f"need at least max(d+1, 8) = {max(d + 1, 8)} samples, got {n}")
    X, y = dataset.X, dataset.y
    eps = cfg.epsilon
    ridge = cfg.ridge_rel * float(np.einsum("ij,ij->", X, X)) / (n * d)
    beta = ols(dataset, ridge)
    r = y - X @ beta
    s = robust_scale_iqr(r)
    trace = MainFilterTrace(n, beta.tolist(), s)

    scale_y = math.sqrt(float(y @ y) / n)
    if float(np.abs(r).max()) <= 1e-10 * scale_y:
        return Estimate(beta), trace  # interpolating fit
    if s == 0.0:
        raise DegenerateScale("interquartile range of the residuals is zero")
    if eps == 0:
        return Estimate(beta), trace  # no corruption budget

    big, le = _logs(cfg, n, d)
    absr = np.abs(r)

    # residual filter
    if float(r @ r) / n >= (1 + cfg.variance_test_const * eps * le) * s * s:
        a = cfg.residual_tail_const

        def budget_r(T):
            return a * np.exp(-(T**2) / (4 * s * s)) + eps**2 * s * s / (T**2 * big**3)

        T, cut = threshold_scan(absr, budget_r)
        if T is None:
            trace.stage = "y-filter"
            raise NoThresholdFound("residual variance test failed and no threshold qualifies", trace)
        return _filtered(dataset, absr <= cut, trace, T, "y-filter")

    in_u = absr > cfg.u_cut_mult * math.sqrt(le) * s
    trace.u_size = int(in_u.sum())
    rest = ~in_u
    Xr, rr = X[rest], r[rest]
    Z = rr[:, None] * Xr
    w_prime = Z.mean(axis=0) if Z.shape[0] else np.zeros(d)
    wn = float(np.linalg.norm(w_prime))
    trace.w_norm = wn

    # covariate filter along w
    if wn > 0:
        w = w_prime / wn
        proj = np.abs(X @ w)
        if float(proj @ proj) / n >= 1 + cfg.variance_test_const * eps * le:
            a = cfg.covariate_tail_const

            def budget_x(T):
                return a * np.exp(-(T**2) / 4) + eps**2 / (T**2 * big**3)

            T, cut = threshold_scan(proj, budget_x)
            if T is None:
                trace.stage = "x-filter"
                raise NoThresholdFound("covariate variance test failed and no threshold qualifies", trace)
            return _filtered(dataset, proj <= cut, trace, T, "x-filter")

    # product filter on S' \ U
    if Z.shape[0] >= 2:
        C = Z - w_prime
        M = C.T @ C / Z.shape[0]
        eig = top_eigenpair(M)
        lam = eig.lambda_star
        trace.lambda_star = lam
        if lam >= (1 + cfg.spectral_test_const * eps * le * le) * s * s:
            delta = 3 * math.sqrt(eps * lam) / s
            trace.delta = delta
            mags = np.abs(rr * (Xr @ eig.v_star)) / s
            a, sc = cfg.product_tail_const, cfg.product_tail_scale

            def budget_p(T):
                return a * np.exp(-T / sc) + eps / (T**2 * big)

            T, cut = threshold_scan(mags, budget_p, shift=delta)
            if T is None:
                trace.stage = "yx-filter"
                raise NoThresholdFound("product spectral test failed and no threshold qualifies", trace)
            keep = in_u.copy()
            keep[rest] = mags <= cut
            return _filtered(dataset, keep, trace, T, "yx-filter")

    return Estimate(beta), trace


def estimate_main(dataset: Dataset, cfg: MainFilterConfig) -> tuple[np.ndarray, IterationAudit]:
    """Repeat the filter step until it accepts.

    A step that finds no qualifying threshold ends the loop with the least
    squares fit of the current set and ``audit.stalled`` set.
    """
    t0 = time.perf_counter()
    audit = IterationAudit()
    current = dataset.without_mask()
    limit = _max_iter(cfg, dataset.n)
    while True:
        if audit.iterations >= limit:
            raise IterationLimitExceeded(f"no estimate after {limit} filter iterations")
        try:
            outcome, trace = filter_main_step(current, cfg)
        except NoThresholdFound as exc:
            audit.traces.append(exc.trace)
            audit.stalled = True
            beta = np.asarray(exc.trace.beta_ols)
            break
        audit.traces.append(trace)
        if isinstance(outcome, Estimate):
            beta = outcome.beta_hat
            break
        audit.iterations += 1
        current = outcome.dataset
    audit.final_n = current.n
    audit.wall_time = time.perf_counter() - t0
    return beta, audit
