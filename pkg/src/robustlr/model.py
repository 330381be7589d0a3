"""Core value types: labeled samples, datasets, ground-truth instances, filter outcomes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyDataset,
    InvalidCovariance,
    NonFiniteValue,
)


@dataclass(frozen=True)
class LabeledSample:
    x: np.ndarray
    y: float


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of labeled samples ``(x_i, y_i)``.

    ``outlier_mask`` (True = adversarially inserted) exists only for synthetic
    data and is never read by the estimators. ``origin`` records, for every
    row, its index in the dataset it was first constructed as, so filtered
    subsets stay traceable to the reference rows.
    """

    X: np.ndarray
    y: np.ndarray
    outlier_mask: np.ndarray | None = None
    origin: np.ndarray | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, copy=True)
        y = np.array(self.y, dtype=np.float64, copy=True).reshape(-1)
        self._check_and_set(X, y, self.outlier_mask, self.origin, copy=True)

    @classmethod
    def _trusted(cls, X, y, outlier_mask=None, origin=None) -> "Dataset":
        # Internal constructor for arrays freshly produced by this package.
        obj = object.__new__(cls)
        obj._check_and_set(
            np.asarray(X, dtype=np.float64),
            np.asarray(y, dtype=np.float64).reshape(-1),
            outlier_mask,
            origin,
            copy=False,
        )
        return obj

    def _check_and_set(self, X, y, mask, origin, copy):
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size == y.size else X.reshape(1, -1)
        if X.ndim != 2:
            raise DimensionMismatch(f"covariates must be a 2-d array, got ndim={X.ndim}")
        n = X.shape[0]
        if n == 0:
            raise EmptyDataset("dataset has no samples")
        if y.shape[0] != n:
            raise DimensionMismatch(f"{n} covariate rows but {y.shape[0]} responses")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise NonFiniteValue("dataset contains NaN or infinite values")
        if mask is not None:
            mask = np.array(mask, dtype=bool, copy=copy).reshape(-1)
            if mask.shape[0] != n:
                raise DimensionMismatch("outlier mask length differs from sample count")
            _readonly(mask)
        if origin is None:
            origin = np.arange(n, dtype=np.int64)
        else:
            origin = np.array(origin, dtype=np.int64, copy=copy).reshape(-1)
            if origin.shape[0] != n:
                raise DimensionMismatch("origin index length differs from sample count")
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "outlier_mask", mask)
        object.__setattr__(self, "origin", _readonly(origin))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(self.X[i].copy(), float(self.y[i]))

    @property
    def samples(self) -> list[LabeledSample]:
        return [self[i] for i in range(self.n)]

    def subset(self, keep) -> "Dataset":
        """Rows selected by a boolean mask or an index array; provenance is kept."""
        keep = np.asarray(keep)
        if keep.dtype == bool and keep.shape[0] != self.n:
            raise DimensionMismatch("keep mask length differs from sample count")
        mask = None if self.outlier_mask is None else self.outlier_mask[keep]
        return Dataset._trusted(self.X[keep], self.y[keep], mask, self.origin[keep])

    def with_responses(self, y) -> "Dataset":
        """Same covariates, mask and provenance with replaced responses."""
        y = np.array(y, dtype=np.float64, copy=True).reshape(-1)
        if y.shape[0] != self.n:
            raise DimensionMismatch("response vector length differs from sample count")
        if not np.isfinite(y).all():
            raise NonFiniteValue("responses contain NaN or infinite values")
        return Dataset._trusted(self.X, y, self.outlier_mask, self.origin)

    def with_covariates(self, X) -> "Dataset":
        X = np.array(X, dtype=np.float64, copy=True)
        if X.shape[0] != self.n:
            raise DimensionMismatch("covariate row count differs from sample count")
        return Dataset._trusted(X, self.y, self.outlier_mask, self.origin)

    def without_mask(self) -> "Dataset":
        return Dataset._trusted(self.X, self.y, None, self.origin)


def dataset_from_rows(rows: Iterable[tuple[Sequence[float], float]]) -> Dataset:
    """Build a mask-free dataset from ``(x, y)`` pairs."""
    rows = list(rows)
    if not rows:
        raise EmptyDataset("no rows given")
    dims = {len(np.atleast_1d(x)) for x, _ in rows}
    if len(dims) != 1:
        raise DimensionMismatch(f"rows have differing dimensions {sorted(dims)}")
    X = np.array([np.atleast_1d(np.asarray(x, dtype=float)) for x, _ in rows])
    y = np.array([float(v) for _, v in rows])
    return Dataset(X, y)


def ell2_error(beta_hat, beta) -> float:
    beta_hat = np.asarray(beta_hat, dtype=float).reshape(-1)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta_hat.shape != beta.shape:
        raise DimensionMismatch(f"shapes {beta_hat.shape} and {beta.shape} differ")
    return float(np.linalg.norm(beta_hat - beta))


@dataclass(frozen=True)
class SpikedCovariance:
    """``I - c2 * v v^T`` for a unit direction ``v``."""

    v: np.ndarray
    c2: float

    def matrix(self) -> np.ndarray:
        v = np.asarray(self.v, dtype=float)
        v = v / np.linalg.norm(v)
        return np.eye(v.size) - self.c2 * np.outer(v, v)


Covariance = Union[str, SpikedCovariance, np.ndarray]


@dataclass(frozen=True, eq=False)
class RegressionInstance:
    """Ground truth for a synthetic regression problem ``y = beta . x + sigma * eta``."""

    beta: np.ndarray
    sigma: float = 1.0
    covariance: Covariance = "identity"
    epsilon: float = 0.0
    tau: float = 0.1
    seed: int = 0

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        object.__setattr__(self, "beta", _readonly(beta))
        if not np.isfinite(beta).all():
            raise NonFiniteValue("beta must be finite")
        if not self.sigma >= 0:
            raise ValueError("sigma must be nonnegative")
        if not 0 <= self.epsilon < 0.5:
            raise ValueError("epsilon must lie in [0, 1/2)")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if isinstance(self.covariance, str) and self.covariance != "identity":
            raise InvalidCovariance(f"unknown covariance kind {self.covariance!r}")

    @property
    def d(self) -> int:
        return self.beta.size

    @property
    def covariance_kind(self) -> str:
        if isinstance(self.covariance, str):
            return self.covariance
        if isinstance(self.covariance, SpikedCovariance):
            return "diagonal-spiked"
        return "explicit"

    def covariance_matrix(self) -> np.ndarray:
        if isinstance(self.covariance, str):
            return np.eye(self.d)
        if isinstance(self.covariance, SpikedCovariance):
            return self.covariance.matrix()
        return np.asarray(self.covariance, dtype=float)

    @property
    def sigma_y(self) -> float:
        """Response standard deviation ``sqrt(sigma^2 + beta' Sigma beta)``."""
        cov = self.covariance_matrix()
        return float(np.hypot(self.sigma, np.sqrt(max(float(self.beta @ cov @ self.beta), 0.0))))


def sigma_y(beta, sigma: float) -> float:
    """``sqrt(sigma^2 + ||beta||^2)``, the response scale for identity covariates."""
    return float(np.hypot(sigma, np.linalg.norm(np.asarray(beta, dtype=float))))


@dataclass(frozen=True, eq=False)
class Estimate:
    beta_hat: np.ndarray


@dataclass(frozen=True, eq=False)
class Filtered:
    """A strictly smaller dataset; ``removed_indices`` are row positions in the input."""

    dataset: Dataset
    removed_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        if len(self.removed_indices) == 0:
            raise ValueError("a Filtered outcome must remove at least one sample")


FilterOutcome = Union[Estimate, Filtered]
