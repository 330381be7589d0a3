"""Moment-matched Gaussian mixtures, chi-square utilities, hard regression
instances hidden along a secret direction, and a statistical-query oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import (
    DivergentChiSquare,
    EpsOutOfRange,
    GridOverflow,
    QueryOutOfRange,
    RangeViolation,
    RootFindFailure,
)
from .model import Dataset, RegressionInstance, SpikedCovariance

CLEAN_VAR = 2.0 / 3.0
P1_RANGE = (0.0, 0.42)
P2_RANGE = (0.35, 0.78)
P3_RANGE = (0.49, 1.0)


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Finite mixture of univariate Gaussians given as ``(weight, mean, variance)`` rows."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        m = np.array(self.means, dtype=float).reshape(-1)
        v = np.array(self.variances, dtype=float).reshape(-1)
        if not (w.size == m.size == v.size) or w.size == 0:
            raise ValueError("weights, means and variances must be nonempty and of equal length")
        if not (np.isfinite(w).all() and np.isfinite(m).all() and np.isfinite(v).all()):
            raise ValueError("mixture parameters must be finite")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must be nonnegative and sum to 1, got sum {w.sum()!r}")
        if (v <= 0).any():
            raise ValueError("variances must be positive")
        for name, arr in (("weights", w), ("means", m), ("variances", v)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_components(cls, components: Sequence[tuple[float, float, float]]) -> "MixtureSpec":
        arr = np.asarray(components, dtype=float).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])

    @property
    def components(self) -> list[tuple[float, float, float]]:
        return [(float(a), float(b), float(c)) for a, b, c in zip(self.weights, self.means, self.variances)]

    def moments(self) -> tuple[float, float, float]:
        """First three raw moments in closed form."""
        w, m, v = self.weights, self.means, self.variances
        return (
            float(w @ m),
            float(w @ (m * m + v)),
            float(w @ (m**3 + 3 * m * v)),
        )

    def reflect(self) -> "MixtureSpec":
        return MixtureSpec(self.weights, -self.means, self.variances)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        z = (x - self.means) ** 2 / self.variances
        dens = np.exp(-0.5 * z) / np.sqrt(2 * np.pi * self.variances)
        return dens @ self.weights

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        k = rng.choice(self.weights.size, size=n, p=self.weights)
        return self.means[k] + np.sqrt(self.variances[k]) * rng.standard_normal(n)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }


# Printed constructions, vectorized over eps (arrays of shape (..., 3)) --------


def _p1_params(e):
    e = np.asarray(e, dtype=float)
    q = 1 - e
    a = 2 / 3 - 1 / (3 * q) - 2 * e / (27 * q**2)
    b = 2 / 3 - 1 / (12 * q) + e / (108 * q**2)
    se = np.sqrt(e)
    w = np.stack([e / 9, 8 * e / 9, q], axis=-1)
    m = np.stack([-1 / se, 1 / (2 * se), -se / (3 * q)], axis=-1)
    v = np.stack([a, b, np.full_like(e, CLEAN_VAR)], axis=-1)
    return w, m, v


def _p2_params(e):
    e = np.asarray(e, dtype=float)
    q = 1 - e
    a = -(-162 * e**3 + 161 * e**2 + 144 * e - 135) / (243 * (e - 1) ** 2 * e)
    b = -(-648 * e**3 + 1121 * e**2 - 342 * e - 135) / (972 * (e - 1) ** 2 * e)
    se = np.sqrt(e)
    w = np.stack([e / 9, 8 * e / 9, q], axis=-1)
    m = np.stack([-2 / (3 * se), 1 / (3 * se), -2 * se / (9 * q)], axis=-1)
    v = np.stack([a, b, np.full_like(e, CLEAN_VAR)], axis=-1)
    return w, m, v


def _p3_params(e):
    e = np.asarray(e, dtype=float)
    q = 1 - e
    a = 2 * (27 * e**2 - 18 * e + 7) / (3 * (27 * e**2 - 12 * e + 1))
    c = 2 * (243 * e**3 - 105 * e**2 - 15 * e + 5) / (3 * (3 * e - 1) * (9 * e - 1) ** 2)
    w = np.stack([q / 8, q, (9 * e - 1) / 8], axis=-1)
    m = np.stack(
        [-1 / np.sqrt(9 * q / 8), math.sqrt(2) / (3 * np.sqrt(q)), -np.sqrt(8 * q) / (9 * e - 1)],
        axis=-1,
    )
    v = np.stack([a, np.full_like(e, CLEAN_VAR), c], axis=-1)
    return w, m, v


def _p4_params(mu, e):
    """Three-component mixture for tiny ``|mu|``; components (eps1, eps2, 1-eps)."""
    mu = np.asarray(mu, dtype=float)
    e = np.broadcast_to(np.asarray(e, dtype=float), mu.shape)
    q = 1 - e
    mu2 = mu * mu
    sgn = np.where(mu < 0, -1.0, 1.0)
    root = np.sqrt(np.maximum(q * (4 * e - 9 * mu2 - 3 * mu2 * e), 0.0))
    # mu_1 with the common factor |mu| cancelled, so mu = 0 is the smooth limit
    mu1 = (1 - 3 * mu2) * (3 * mu * q - math.sqrt(3) * sgn * root) / (6 * (e - 3 * mu2))
    c = (1 - 3 * mu2) / (1 - 3 * mu2 + 3 * mu * mu1)
    c3 = c**3
    e1 = c3 * e / (1 + c3)
    e2 = e / (1 + c3)
    # second/third moment conditions, linear in the two variances
    rhs2 = 1 + c3
    safe_mu1 = np.where(mu1 == 0, 1.0, mu1)
    rhs3 = -q * (mu**3 + 2 * mu) * (1 + c3) / (3 * e * safe_mu1)
    # c^3 s1 + s2 = rhs2 ;  c^3 s1 - c s2 = rhs3
    s2 = (rhs2 - rhs3) / (1 + c)
    s1 = (rhs2 - s2) / c3
    w = np.stack([e1, e2, q], axis=-1)
    m = np.stack([mu1, -c * mu1, mu], axis=-1)
    v = np.stack([s1, s2, np.full_like(mu, CLEAN_VAR)], axis=-1)
    return w, m, v


def _check_eps(eps: float, lo: float, hi: float, name: str, hi_open: bool = False) -> None:
    lower_ok = eps > 0 if lo == 0.0 else eps >= lo
    upper_ok = eps < hi if hi_open else eps <= hi
    if not (math.isfinite(eps) and lower_ok and upper_ok):
        raise EpsOutOfRange(f"{name} needs eps in its valid range [{lo}, {hi}], got {eps}")


def _box(v, lo: float, hi: float, what: str) -> None:
    v = np.asarray(v)
    if not ((v > lo) & (v < hi)).all():
        raise RangeViolation(f"{what} {v.tolist()} outside ({lo}, {hi})")


def _mix(w, m, v) -> MixtureSpec:
    return MixtureSpec(w, m, v)


def mixture_p1(eps: float) -> MixtureSpec:
    """Heavy-left mixture with a ``(1-eps) N(., 2/3)`` component; valid for ``0 < eps <= 0.42``."""
    _check_eps(eps, *P1_RANGE, "P1")
    w, m, v = _p1_params(eps)
    _box(v[:2], 0.0, 2.0, "P1 variances")
    return _mix(w, m, v)


def mixture_p2(eps: float) -> MixtureSpec:
    _check_eps(eps, *P2_RANGE, "P2")
    w, m, v = _p2_params(eps)
    _box(v[:2], 0.0, 2.0, "P2 variances")
    return _mix(w, m, v)


def mixture_p3(eps: float) -> MixtureSpec:
    _check_eps(eps, *P3_RANGE, "P3", hi_open=True)
    w, m, v = _p3_params(eps)
    _box(v[[0, 2]], 0.0, 2.0, "P3 variances")
    return _mix(w, m, v)


def p4_mu_limit(eps: float) -> float:
    return math.sqrt(eps) / 10000.0


def mixture_p4(mu: float, eps: float) -> MixtureSpec:
    """Mixture with ``(1-eps) N(mu, 2/3)`` for ``|mu| <= sqrt(eps)/10000``."""
    if not (0 < eps <= 0.5):
        raise EpsOutOfRange(f"P4 needs eps in (0, 1/2], got {eps}")
    if not abs(mu) <= p4_mu_limit(eps):
        raise RangeViolation(f"|mu|={abs(mu)} exceeds sqrt(eps)/10000={p4_mu_limit(eps)}")
    w, m, v = _p4_params(np.asarray(mu, dtype=float), eps)
    _box(v[:2], 0.9, 1.1, "P4 variances")
    _box(np.abs(m[:2]), -1.0, 2 / math.sqrt(eps), "P4 |means|")
    return _mix(w, m, v)


# Dispatch --------------------------------------------------------------------


def _eps_mu(a):
    """Contamination level for ``|mu| = a`` outside the P4 region (vectorized)."""
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    b1 = a <= 0.3
    b2 = (a > 0.3) & (a < 0.7)
    b3 = a >= 0.7
    with np.errstate(divide="ignore", invalid="ignore"):
        # sqrt(e)/(3(1-e)) = a  ->  3a s^2 + s - 3a = 0
        s1 = (np.sqrt(1 + 36 * a * a) - 1) / (6 * a)
        # 2 sqrt(e)/(9(1-e)) = a  ->  9a s^2 + 2s - 9a = 0
        s2 = (np.sqrt(1 + 81 * a * a) - 1) / (9 * a)
        # small-a series avoids cancellation in sqrt(1 + x) - 1
        x1 = 36 * a * a
        s1 = np.where(x1 < 1e-6, 3 * a * (1 - x1 / 4 + x1 * x1 / 8), s1)
        out[b1] = s1[b1] ** 2
        out[b2] = s2[b2] ** 2
        out[b3] = 1 - 2 / (9 * a[b3] ** 2)
    return out, np.where(b1, 1, np.where(b2, 2, 3))


def _a_mu_params(mu, eps: float):
    """Vectorized ``A_{mu,eps}``: returns weights, means, variances of shape (n, 3)
    and ``eps_mu``. The ``1 - eps_mu`` component always has mean ``mu``."""
    mu = np.asarray(mu, dtype=float).reshape(-1)
    a = np.abs(mu)
    small = a <= p4_mu_limit(eps)
    W = np.empty((mu.size, 3))
    M = np.empty((mu.size, 3))
    V = np.empty((mu.size, 3))
    em = np.empty(mu.size)
    if small.any():
        w, m, v = _p4_params(mu[small], eps)
        W[small], M[small], V[small] = w, m, v
        em[small] = eps
    big = ~small
    if big.any():
        e, branch = _eps_mu(a[big])
        em[big] = e
        w = np.empty((e.size, 3))
        m = np.empty((e.size, 3))
        v = np.empty((e.size, 3))
        clean_col = np.empty(e.size, dtype=int)
        for k, fn, col in ((1, _p1_params, 2), (2, _p2_params, 2), (3, _p3_params, 1)):
            sel = branch == k
            if sel.any():
                w[sel], m[sel], v[sel] = fn(e[sel])
                clean_col[sel] = col
        # reflect so that the clean component sits at +mu rather than -mu
        clean_mean = m[np.arange(e.size), clean_col]
        flip = np.sign(clean_mean) != np.sign(mu[big])
        m[flip] = -m[flip]
        m[np.arange(e.size), clean_col] = mu[big]
        W[big], M[big], V[big] = w, m, v
    return W, M, V, em


def a_mu(mu: float, eps: float) -> tuple[MixtureSpec, float]:
    """Three-moment-matched mixture containing ``(1 - eps_mu) N(mu, 2/3)``."""
    if not (0 < eps <= 0.5):
        raise EpsOutOfRange(f"eps must lie in (0, 1/2], got {eps}")
    if not math.isfinite(mu):
        raise RootFindFailure("mu must be finite")
    if abs(mu) <= p4_mu_limit(eps):
        return mixture_p4(mu, eps), float(eps)
    W, M, V, em = _a_mu_params(np.array([mu]), eps)
    e = float(em[0])
    if not (0 < e < 1):
        raise RootFindFailure(f"no contamination level in (0,1) for mu={mu}")
    # range checks of the underlying construction
    a = abs(mu)
    if a <= 0.3:
        _check_eps(e, *P1_RANGE, "P1")
    elif a < 0.7:
        _check_eps(e, *P2_RANGE, "P2")
    else:
        _check_eps(e, *P3_RANGE, "P3", hi_open=True)
    return _mix(W[0], M[0], V[0]), e


# Chi-square ------------------------------------------------------------------


def chi2_gaussians(mu1: float, var1: float, mu2: float, var2: float) -> float:
    """Chi-square divergence of ``N(mu1, var1)`` from ``N(mu2, var2)``."""
    if var1 <= 0 or var2 <= 0:
        raise ValueError("variances must be positive")
    den = 2 * var2 - var1
    if den <= 0:
        raise DivergentChiSquare(f"2*var2 - var1 = {den} <= 0: divergence is infinite")
    log_ratio = math.log(var2) - 0.5 * (math.log(var1) + math.log(den)) + (mu1 - mu2) ** 2 / den
    return math.expm1(log_ratio)


def chi2_correlation_gaussians(mu1: float, var1: float, mu2: float, var2: float) -> float:
    """``int N(mu1,var1) N(mu2,var2) / N(0,1) - 1``."""
    if var1 <= 0 or var2 <= 0:
        raise ValueError("variances must be positive")
    s = var1 + var2 - var1 * var2
    if s <= 0:
        raise DivergentChiSquare(f"var1 + var2 - var1*var2 = {s} <= 0: integral diverges")
    num = mu1**2 * (var2 - 1) + 2 * mu1 * mu2 + mu2**2 * (var1 - 1)
    den = 2 * var1 * (var2 - 1) - 2 * var2
    return math.expm1(-num / den - 0.5 * math.log(s))


def _ref_gaussian(reference: MixtureSpec | None) -> tuple[float, float]:
    if reference is None:
        return 0.0, 1.0
    if reference.weights.size != 1:
        raise ValueError("reference distribution must be a single Gaussian")
    return float(reference.means[0]), float(reference.variances[0])


def chi2_mixture(b: MixtureSpec, c: MixtureSpec, reference: MixtureSpec | None = None) -> float:
    """``chi_D(B, C) = int B C / D - 1`` by bilinear expansion over component pairs.

    ``chi2_mixture(b, b, D)`` is the chi-square divergence of ``b`` from ``D``.
    ``reference`` must be a single Gaussian (default standard normal).
    """
    m0, v0 = _ref_gaussian(reference)
    s0 = math.sqrt(v0)
    total = 0.0
    for wi, mi, vi in b.components:
        for wj, mj, vj in c.components:
            if wi == 0 or wj == 0:
                continue
            total += wi * wj * chi2_correlation_gaussians((mi - m0) / s0, vi / v0, (mj - m0) / s0, vj / v0)
    return total


# Hard regression instance ----------------------------------------------------


def solve_c2(c1: float, eps: float) -> float:
    """Root of ``c2 + (c1 (1 - c2))^2 eps = 1/3`` near 1/3."""
    k = c1 * c1 * eps
    if k == 0:
        return 1.0 / 3.0
    disc = 1 - 8 * k / 3
    if disc < 0:
        raise RootFindFailure("no real solution for c2")
    # u = 1 - c2 solves k u^2 - u + 2/3 = 0; conjugate form avoids cancellation
    u = (4.0 / 3.0) / (1 + math.sqrt(disc))
    return 1.0 - u


@dataclass(frozen=True, eq=False)
class HardInstanceSpec:
    v: np.ndarray
    epsilon: float
    c1: float = 0.1

    def __post_init__(self):
        v = np.array(self.v, dtype=float).reshape(-1)
        nv = np.linalg.norm(v)
        if nv == 0 or not np.isfinite(nv):
            raise ValueError("v must be a nonzero finite vector")
        v = v / nv
        v.flags.writeable = False
        object.__setattr__(self, "v", v)
        if not (0 < self.epsilon <= 0.5):
            raise EpsOutOfRange("epsilon must lie in (0, 1/2]")
        if not (0 <= self.c1 <= 0.1):
            raise RangeViolation("c1 must lie in [0, 1/10]")

    @property
    def d(self) -> int:
        return self.v.size

    @property
    def c2(self) -> float:
        return solve_c2(self.c1, self.epsilon)

    @property
    def beta(self) -> np.ndarray:
        return self.c1 * math.sqrt(self.epsilon) * self.v

    @property
    def sigma(self) -> float:
        b = self.beta
        bSb = float(b @ b) - self.c2 * float(self.v @ b) ** 2
        return math.sqrt(1.0 - bSb)

    @property
    def mu_slope(self) -> float:
        """``mu(y) = mu_slope * y``."""
        return self.c1 * (1 - self.c2) * math.sqrt(self.epsilon)

    def regression_instance(self, seed: int = 0) -> RegressionInstance:
        return RegressionInstance(
            beta=self.beta,
            sigma=self.sigma,
            covariance=SpikedCovariance(self.v, self.c2),
            epsilon=min(self.epsilon, 0.499),
            seed=seed,
        )


class HardInstanceSampler:
    """Inverse-CDF sampler for the reweighted response density, built once.

    The response density is proportional to ``phi(y) / (1 - eps_mu(y))`` on
    ``|y| <= y_max``; ``tail_mass_dropped`` bounds the truncated mass.
    """

    def __init__(self, spec: HardInstanceSpec, y_max: float = 12.0, cells: int = 100_000):
        self.spec = spec
        grid = np.linspace(-y_max, y_max, cells + 1)
        em = self._eps_mu(grid)
        if (1 - em).min() < 1e-12:
            raise GridOverflow("contamination level approaches 1 on the response grid")
        dens = np.exp(-0.5 * grid**2) / math.sqrt(2 * math.pi) / (1 - em)
        cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) / 2 * np.diff(grid))])
        z = cdf[-1]
        edge = float(self._eps_mu(np.array([y_max]))[0])
        self.tail_mass_dropped = float(2 * ndtr(-y_max) / (1 - edge) / z) if edge < 1 else math.inf
        self._grid = grid
        self._cdf = cdf / z
        self._grid.flags.writeable = False
        self._cdf.flags.writeable = False

    def _eps_mu(self, y):
        mu = self.spec.mu_slope * np.asarray(y, dtype=float)
        a = np.abs(mu)
        small = a <= p4_mu_limit(self.spec.epsilon)
        e, _ = _eps_mu(np.where(small, 1.0, a))
        return np.where(small, self.spec.epsilon, e)

    def sample_y(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.interp(rng.random(n), self._cdf, self._grid)

    def sample(self, n: int, seed: int) -> Dataset:
        spec = self.spec
        rng = np.random.default_rng(seed)
        y = self.sample_y(rng, n)
        W, M, V, _ = _a_mu_params(spec.mu_slope * y, spec.epsilon)
        u = rng.random(n)
        k = (u[:, None] > np.cumsum(W, axis=1)[:, :-1]).sum(axis=1)
        rows = np.arange(n)
        t = M[rows, k] + np.sqrt(V[rows, k]) * rng.standard_normal(n)
        G = rng.standard_normal((n, spec.d))
        # replace the v-component of a standard Gaussian by t
        X = G + np.outer(t - G @ spec.v, spec.v)
        return Dataset._trusted(X, y)


def hard_instance(spec: HardInstanceSpec, n: int, seed: int) -> Dataset:
    """Samples whose v-coordinate follows ``A_{mu(y)}`` given y, standard Gaussian elsewhere."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return HardInstanceSampler(spec).sample(n, seed)


# Statistical query oracle ----------------------------------------------------


class StatOracle:
    """Answers expectation queries about a held sample within a tolerance.

    Honest mode adds uniform noise in ``[-tol, tol]``. Adversarial mode adds
    ``+tol`` or ``-tol``, whichever scores higher under ``objective(value)``;
    without an objective it moves toward the far end of ``[0, 1]``.
    """

    def __init__(
        self,
        data: Dataset,
        adversarial: bool = False,
        objective: Callable[[float], float] | None = None,
        seed: int = 0,
    ):
        self.X = data.X
        self.y = data.y
        self.adversarial = adversarial
        self.objective = objective
        self._rng = np.random.default_rng(seed)
        self.calls = 0

    @classmethod
    def from_spec(cls, spec: HardInstanceSpec, sample_size: int, seed: int = 0, **kw) -> "StatOracle":
        return cls(hard_instance(spec, sample_size, seed), seed=seed + 1, **kw)

    def _mean(self, query) -> float:
        vals = np.asarray(query(self.X, self.y), dtype=float)
        if vals.shape == ():
            vals = np.full(self.y.shape, float(vals))
        if vals.shape != self.y.shape:
            raise QueryOutOfRange("query must return one value per sample")
        if not np.isfinite(vals).all() or vals.min() < 0 or vals.max() > 1:
            raise QueryOutOfRange("query values must lie in [0, 1]")
        return float(vals.mean())

    def _answer(self, true: float, tol: float) -> float:
        self.calls += 1
        if tol == 0:
            return true
        if not self.adversarial:
            return true + float(self._rng.uniform(-tol, tol))
        if self.objective is None:
            sign = 1.0 if true <= 0.5 else -1.0
        else:
            sign = 1.0 if self.objective(true + tol) >= self.objective(true - tol) else -1.0
        return true + sign * tol

    def stat(self, query: Callable, tolerance: float) -> float:
        """``query(X, y)`` must map the sample arrays to values in ``[0, 1]``."""
        if tolerance < 0:
            raise ValueError("tolerance must be nonnegative")
        return self._answer(self._mean(query), tolerance)

    def vstat(self, query: Callable, t: float) -> float:
        if t <= 0:
            raise ValueError("t must be positive")
        p = self._mean(query)
        tol = max(1.0 / t, math.sqrt(p * (1 - p) / t))
        return self._answer(p, tol)


def stat_oracle(data: Dataset, query: Callable, tolerance: float, adversarial: bool = False, seed: int = 0) -> float:
    return StatOracle(data, adversarial=adversarial, seed=seed).stat(query, tolerance)
