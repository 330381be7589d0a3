"""Clean instance generation, contamination adversaries and whitening."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import EpsilonTooLarge, InvalidCovariance, NotPositiveDefinite
from .model import Dataset, RegressionInstance


def _covariance_factor(cov: np.ndarray) -> np.ndarray:
    """Return ``L`` with ``L L^T = cov``, accepting PSD (singular) matrices."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InvalidCovariance(f"covariance must be square, got shape {cov.shape}")
    if not np.isfinite(cov).all() or not np.allclose(cov, cov.T, atol=1e-12):
        raise InvalidCovariance("covariance must be finite and symmetric")
    w, V = np.linalg.eigh(cov)
    tol = 1e-10 * max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -tol:
        raise InvalidCovariance(f"covariance has negative eigenvalue {w.min():.3g}")
    return V * np.sqrt(np.clip(w, 0.0, None))


def generate_clean(instance: RegressionInstance, n: int) -> Dataset:
    """Draw ``n`` samples with ``x ~ N(0, Sigma)`` and ``y = beta . x + sigma * eta``.

    Deterministic in ``(instance, n)``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    d = instance.d
    rng = np.random.default_rng(instance.seed)
    Z = rng.standard_normal((n, d))
    if instance.covariance_kind == "identity":
        X = Z
    else:
        cov = instance.covariance_matrix()
        if cov.shape != (d, d):
            raise InvalidCovariance(f"covariance shape {cov.shape} does not match d={d}")
        X = Z @ _covariance_factor(cov).T
    y = X @ instance.beta
    if instance.sigma > 0:
        y = y + instance.sigma * rng.standard_normal(n)
    return Dataset._trusted(X, y, np.zeros(n, dtype=bool))


# Adversaries -----------------------------------------------------------------


@dataclass(frozen=True)
class GaussianNoise:
    """Replacement rows ``x ~ N(0, x_scale^2 I)``, ``y ~ N(y_loc, y_scale^2)``."""

    x_scale: float = 1.0
    y_loc: float = 0.0
    y_scale: float = 10.0

    def sample(self, rng: np.random.Generator, k: int, d: int):
        X = self.x_scale * rng.standard_normal((k, d))
        y = self.y_loc + self.y_scale * rng.standard_normal(k)
        return X, y


@dataclass(frozen=True)
class HuberAdditive:
    noise: GaussianNoise = field(default_factory=GaussianNoise)
    kind: str = "huber_additive"


@dataclass(frozen=True)
class AdaptiveShift:
    """Plant every outlier at ``x = r u``, ``y = s`` so that the mean of yX moves by
    ``magnitude_mult * sigma_y`` along ``u``.

    ``direction`` of None picks a random unit vector orthogonal to the clean
    moment estimate of beta (so the shift is invisible in the y marginal). A
    given vector is normalized. ``leverage`` is ``r``; ``s`` follows from the
    per-point contribution ``m / (eps n)``.
    """

    direction: np.ndarray | None = None
    magnitude_mult: float = 3.0
    leverage: float = 1.0
    kind: str = "adaptive_shift"


@dataclass(frozen=True)
class LabelFlip:
    """Keep the covariates of the replaced rows and set ``y -> -scale * y``."""

    scale: float = 1.0
    kind: str = "label_flip"


@dataclass(frozen=True)
class NoAdversary:
    kind: str = "none"


AdversaryKind = Union[NoAdversary, HuberAdditive, AdaptiveShift, LabelFlip]


@dataclass(frozen=True)
class AdversarySpec:
    kind: AdversaryKind
    epsilon: float

    def __post_init__(self):
        if not (0.0 <= self.epsilon):
            raise ValueError("epsilon must be nonnegative")
        if self.epsilon >= 0.5:
            raise EpsilonTooLarge(f"epsilon={self.epsilon} must be below 1/2")


def n_corrupted(n: int, epsilon: float) -> int:
    # small slack so that e.g. 0.1 * 30 counts as 3
    return int(math.floor(epsilon * n + 1e-9))


def corrupt(dataset: Dataset, adversary: AdversarySpec, seed: int) -> Dataset:
    """Replace exactly ``floor(eps n)`` uniformly chosen rows and mark them in the mask."""
    n, d = dataset.n, dataset.d
    k = n_corrupted(n, adversary.epsilon)
    base_mask = (
        np.zeros(n, dtype=bool) if dataset.outlier_mask is None else dataset.outlier_mask
    )
    if k == 0 or isinstance(adversary.kind, NoAdversary):
        return Dataset._trusted(dataset.X, dataset.y, base_mask.copy(), dataset.origin)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    X = np.array(dataset.X)
    y = np.array(dataset.y)
    kind = adversary.kind
    if isinstance(kind, HuberAdditive):
        Xo, yo = kind.noise.sample(rng, k, d)
    elif isinstance(kind, LabelFlip):
        Xo, yo = X[idx], -kind.scale * y[idx]
    elif isinstance(kind, AdaptiveShift):
        Xo, yo = _adaptive_shift_rows(dataset, kind, k, rng)
    else:
        raise TypeError(f"unknown adversary kind {kind!r}")
    if not (np.isfinite(Xo).all() and np.isfinite(yo).all()):
        raise ValueError("adversary produced non-finite values")
    X[idx] = Xo
    y[idx] = yo
    mask = base_mask.copy()
    mask[idx] = True
    return Dataset._trusted(X, y, mask, dataset.origin)


def _adaptive_shift_rows(dataset: Dataset, kind: AdaptiveShift, k: int, rng):
    n, d = dataset.n, dataset.d
    # the adversary inspects the clean data
    beta_guess = (dataset.y[:, None] * dataset.X).mean(axis=0)
    sigma_y = float(np.std(dataset.y)) or 1.0
    if kind.direction is None:
        u = rng.standard_normal(d)
        nb = np.linalg.norm(beta_guess)
        if d > 1 and nb > 0:
            b = beta_guess / nb
            u = u - (u @ b) * b
    else:
        u = np.asarray(kind.direction, dtype=float).reshape(-1)
        if u.size != d:
            raise ValueError("direction dimension mismatch")
    u = u / np.linalg.norm(u)
    m = kind.magnitude_mult * sigma_y
    r = kind.leverage
    s = m * n / (k * r)
    Xo = np.tile(r * u, (k, 1))
    yo = np.full(k, s)
    return Xo, yo


def whiten(dataset: Dataset, sigma_hat, tol: float = 1e-12) -> Dataset:
    """Map each ``x`` to ``sigma_hat^{-1/2} x`` via a symmetric eigendecomposition."""
    S = np.asarray(sigma_hat, dtype=float)
    if S.shape != (dataset.d, dataset.d):
        raise NotPositiveDefinite(f"sigma_hat shape {S.shape} does not match d={dataset.d}")
    if not np.allclose(S, S.T, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise NotPositiveDefinite("sigma_hat is not symmetric")
    w, V = np.linalg.eigh((S + S.T) / 2)
    if w.min() <= tol * max(1.0, w.max()):
        raise NotPositiveDefinite(f"smallest eigenvalue {w.min():.3g} is not positive")
    inv_sqrt = (V / np.sqrt(w)) @ V.T
    return Dataset._trusted(dataset.X @ inv_sqrt, dataset.y, dataset.outlier_mask, dataset.origin)


def perturbed_identity(d: int, spread: float, seed: int) -> np.ndarray:
    """A random SPD matrix with eigenvalues drawn uniformly from ``[1-spread, 1+spread]``."""
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = rng.uniform(1 - spread, 1 + spread, size=d)
    return (Q * lam) @ Q.T
