"""Spectral filter on the moments of ``y x`` and its iterative drivers.

The filter step either certifies the empirical mean of ``y x`` as an estimate
of beta or removes the samples whose projection onto the worst direction of
the centered covariance lies in an unexpectedly heavy tail.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DegenerateScale,
    IterationLimitExceeded,
    NoThresholdFound,
    TooFewSamples,
)
from .model import Dataset, Estimate, FilterOutcome, Filtered
from .robust_stats import log_inv_eps, robust_scale_iqr, threshold_scan, top_eigenpair, yx_moments


@dataclass(frozen=True)
class BasicFilterConfig:
    epsilon: float
    tau: float = 0.1
    spectral_const: float = 10.0
    tail_consts: tuple[float, float] = (32.0, 8.0)
    # the exponential tail term is tail_consts[0] * exp(-T / tail_exp_scale)
    tail_exp_scale: float = 16.0
    max_iterations: int | None = None  # None means 2n

    def __post_init__(self):
        if not 0 <= self.epsilon < 0.5:
            raise ConfigError("epsilon must lie in [0, 1/2)")
        if not 0 < self.tau < 1:
            raise ConfigError("tau must lie in (0, 1)")
        if self.spectral_const <= 0:
            raise ConfigError("spectral_const must be positive")
        if any(c < 0 for c in self.tail_consts) or self.tail_exp_scale <= 0:
            raise ConfigError("tail constants must be nonnegative with a positive scale")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")


@dataclass
class FilterStepTrace:
    n: int
    sigma_y_hat: float
    lambda_star: float
    spectral_bound: float
    delta: float = 0.0
    threshold: float | None = None
    removed: int = 0
    removed_origins: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _tail_budget(cfg: BasicFilterConfig, n: int):
    a, b = cfg.tail_consts
    L = math.log(n / cfg.tau)
    eps = cfg.epsilon

    def budget(T):
        return a * np.exp(-T / cfg.tail_exp_scale) + b * eps / (T**2 * L)

    return budget


def filter_basic_step(dataset: Dataset, cfg: BasicFilterConfig) -> tuple[FilterOutcome, FilterStepTrace]:
    n, d = dataset.n, dataset.d
    if n < max(4, d + 1):
        raise TooFewSamples(f"need at least max(4, d+1) = {max(4, d + 1)} samples, got {n}")
    y = dataset.y
    s = robust_scale_iqr(y)
    mom = yx_moments(dataset)
    beta_s = mom.beta_s
    if s == 0.0:
        if np.any(y != 0):
            raise DegenerateScale("interquartile range of y is zero but y is not identically zero")
        trace = FilterStepTrace(n, 0.0, 0.0, 0.0)
        return Estimate(np.zeros(d)), trace

    A = mom.m_hat - (s * s * np.eye(d) + np.outer(beta_s, beta_s))
    eig = top_eigenpair(A)
    lam = abs(eig.lambda_star)
    if cfg.epsilon == 0:
        # nothing was corrupted, so there is nothing to remove
        return Estimate(beta_s.copy()), FilterStepTrace(n, s, lam, 0.0)
    le = log_inv_eps(cfg.epsilon)
    bound = cfg.spectral_const * s * s * cfg.epsilon * le * le
    trace = FilterStepTrace(n, s, lam, bound)
    if lam <= bound:
        return Estimate(beta_s.copy()), trace

    delta = 3.0 * math.sqrt(cfg.epsilon * lam) / s
    trace.delta = delta
    proj = (y[:, None] * dataset.X - beta_s) @ eig.v_star
    mags = np.abs(proj) / s
    T, cut = threshold_scan(mags, _tail_budget(cfg, n), shift=delta)
    if T is None:
        raise NoThresholdFound("spectral test failed and no tail threshold qualifies", trace)
    keep = mags <= cut
    removed = np.flatnonzero(~keep)
    trace.threshold = T
    trace.removed = int(removed.size)
    trace.removed_origins = dataset.origin[removed].tolist()
    return Filtered(dataset.subset(keep), removed), trace


@dataclass
class IterationAudit:
    """Per-run record of filter steps. ``stalled`` marks a run that stopped
    because no tail threshold qualified; the estimate is then the current
    unfiltered moment estimate."""

    traces: list = field(default_factory=list)
    iterations: int = 0
    stalled: bool = False
    final_n: int = 0
    wall_time: float = 0.0

    def removed_per_iteration(self) -> list[list[int]]:
        return [t.removed_origins for t in self.traces if t.removed > 0]

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "stalled": self.stalled,
            "final_n": self.final_n,
            "wall_time": self.wall_time,
            "traces": [t.to_dict() for t in self.traces],
        }


def _max_iter(cfg, n: int) -> int:
    return cfg.max_iterations if cfg.max_iterations is not None else 2 * n


def estimate_basic(dataset: Dataset, cfg: BasicFilterConfig) -> tuple[np.ndarray, IterationAudit]:
    """Run filter steps until one returns an estimate.

    If a step finds no qualifying threshold the loop stops and returns the mean
    of ``y x`` on the current set, with ``audit.stalled`` set.
    """
    t0 = time.perf_counter()
    audit = IterationAudit()
    current = dataset.without_mask()
    limit = _max_iter(cfg, dataset.n)
    while True:
        if audit.iterations >= limit:
            raise IterationLimitExceeded(f"no estimate after {limit} filter iterations")
        try:
            outcome, trace = filter_basic_step(current, cfg)
        except NoThresholdFound as exc:
            audit.traces.append(exc.trace)
            audit.stalled = True
            beta = yx_moments(current).beta_s
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


def estimate_boosted(dataset: Dataset, cfg: BasicFilterConfig, rounds: int) -> tuple[np.ndarray, list[IterationAudit]]:
    """Residual boosting: refit the basic estimator on ``y - beta_k . x`` and
    accumulate the corrections, always on the original input rows."""
    if rounds < 1:
        raise ConfigError("rounds must be at least 1")
    beta, audit = estimate_basic(dataset, cfg)
    audits = [audit]
    for _ in range(rounds - 1):
        resid = dataset.y - dataset.X @ beta
        corr, audit = estimate_basic(dataset.with_responses(resid), cfg)
        beta = beta + corr
        audits.append(audit)
    return beta, audits
