"""Statistical primitives shared by the filters, plus mask-aware audit helpers.

The audit helpers (``sym_diff_progress``, ``progress_trajectory``,
``removal_counts``) and the regularity verifiers are the only code in the
package that reads a dataset's outlier mask.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from .errors import EmptyDataset, ProvenanceLost, TooFewSamples
from .model import Dataset

IQR_GAUSSIAN_DIVISOR = 2.0 * float(norm.ppf(0.75))  # 1.3489795...

# Exact eigendecomposition below this dimension, power iteration above.
EIGH_MAX_DIM = 64

_CHUNK = 1 << 20
_VCHUNK = 1 << 16


def clamp_eps(epsilon: float) -> float:
    """Clamp to ``<= 1/e`` so that ``log(1/eps) >= 1``."""
    return min(float(epsilon), math.exp(-1.0))


def log_inv_eps(epsilon: float) -> float:
    return math.log(1.0 / clamp_eps(epsilon))


def robust_scale_iqr(values) -> float:
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size < 4:
        raise TooFewSamples(f"interquartile range needs at least 4 values, got {v.size}")
    q25, q75 = np.percentile(v, [25.0, 75.0])
    return float(q75 - q25) / IQR_GAUSSIAN_DIVISOR


@dataclass(frozen=True, eq=False)
class EmpiricalYXMoments:
    beta_s: np.ndarray
    m_hat: np.ndarray


def _chunks(n: int, size: int = _CHUNK):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def yx_moments(dataset: Dataset) -> EmpiricalYXMoments:
    """Empirical mean and centered covariance of the vectors ``y x``."""
    if dataset.n == 0:
        raise EmptyDataset("no samples")
    n, d = dataset.n, dataset.d
    if n <= _CHUNK:
        Z = dataset.y[:, None] * dataset.X
        mean = Z.mean(axis=0)
        C = Z - mean
        M = C.T @ C / n
    else:
        s = np.zeros(d)
        for sl in _chunks(n):
            s += (dataset.y[sl, None] * dataset.X[sl]).sum(axis=0)
        mean = s / n
        M = np.zeros((d, d))
        for sl in _chunks(n):
            C = dataset.y[sl, None] * dataset.X[sl] - mean
            M += C.T @ C
        M /= n
    return EmpiricalYXMoments(mean, (M + M.T) / 2)


@dataclass(frozen=True, eq=False)
class EigenPair:
    lambda_star: float
    v_star: np.ndarray
    converged: bool = True
    iterations: int = 0


def top_eigenpair(m, tol: float = 1e-10, max_iter: int = 20000, seed: int = 0) -> EigenPair:
    """Largest-magnitude eigenvalue of a symmetric matrix and a unit eigenvector.

    Small matrices use an exact symmetric eigensolver. Larger ones run power
    iteration on ``m + cI`` and on ``cI - m`` (``c`` a Gershgorin bound, so both
    are PSD and their dominant eigenvectors are the extreme eigenvectors of
    ``m``) and keep the end with the larger ``|lambda|``. A run counts as
    converged when successive Rayleigh quotients differ by less than
    ``tol * (1 + |lambda|)`` and the residual ``||m v - lambda v||`` is at most
    ``tol * ||m||_F``; otherwise the best iterate is returned with
    ``converged=False``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError("matrix has non-finite entries")
    m = (m + m.T) / 2
    d = m.shape[0]
    if d <= EIGH_MAX_DIM:
        w, V = np.linalg.eigh(m)
        i = int(np.argmax(np.abs(w)))
        v = V[:, i]
        v = v / np.linalg.norm(v)
        return EigenPair(float(v @ m @ v), v, True, 0)

    c = float(np.abs(m).sum(axis=1).max())
    fro = float(np.linalg.norm(m))
    if fro == 0.0:
        v = np.zeros(d)
        v[0] = 1.0
        return EigenPair(0.0, v, True, 0)
    rng = np.random.default_rng(seed)
    start = rng.standard_normal(d)
    results = []
    for sign in (1.0, -1.0):
        results.append(_power(m, sign, c, start, tol, fro, max_iter))
    best = max(results, key=lambda p: abs(p.lambda_star))
    return best


def _power(m, sign, c, start, tol, fro, max_iter) -> EigenPair:
    # iterate on sign*m + c I, report the Rayleigh quotient of m itself
    v = start / np.linalg.norm(start)
    lam_prev = math.inf
    lam = float(v @ m @ v)
    for it in range(1, max_iter + 1):
        mv = m @ v
        w = sign * mv + c * v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
        mv = m @ v
        lam_prev, lam = lam, float(v @ mv)
        if abs(lam - lam_prev) < tol * (1 + abs(lam)) and np.linalg.norm(mv - lam * v) <= tol * fro:
            return EigenPair(lam, v, True, it)
    return EigenPair(lam, v, False, max_iter)


def _eval_budget(tail_budget: Callable, T: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(tail_budget(T), dtype=float)
        if out.shape == T.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([float(tail_budget(float(t))) for t in T])


def threshold_scan(magnitudes, tail_budget: Callable, shift: float = 0.0):
    """Like :func:`threshold_search` but also returns the cut value.

    The cut is the largest magnitude that stays at or below ``T + shift``;
    filtering with ``magnitude <= cut`` avoids rounding in ``T + shift``.
    Returns ``(None, None)`` when no threshold qualifies.
    """
    m = np.sort(np.asarray(magnitudes, dtype=float).reshape(-1))
    n = m.size
    if n == 0:
        return None, None
    if not np.isfinite(m).all():
        raise ValueError("magnitudes must be finite")
    u = np.unique(m)
    if u.size < 2:
        return None, None
    # For T + shift in [u_j, u_{j+1}) the tail count is constant while the
    # budget decreases, so gap j qualifies iff the tail beats the budget at
    # its right end. Thresholds below u_0 would remove every sample.
    tail = (n - np.searchsorted(m, u[:-1], side="right")) / n
    left = u[:-1] - shift
    right = u[1:] - shift
    ok = np.flatnonzero(right > 0)
    if ok.size == 0:
        return None, None
    hit = ok[tail[ok] > _eval_budget(tail_budget, right[ok])]
    if hit.size == 0:
        return None, None
    j = int(hit[0])
    t, lo, hi = tail[j], left[j], right[j]
    if lo > 0 and t > float(tail_budget(lo)):
        return float(lo), float(u[j])
    lo = max(lo, 0.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if t > float(tail_budget(mid)):
            hi = mid
        else:
            lo = mid
    if hi >= right[j]:
        hi = float(np.nextafter(right[j], -np.inf))
    return float(hi), float(u[j])


def threshold_search(magnitudes, tail_budget: Callable, shift: float = 0.0) -> float | None:
    """Smallest ``T > 0`` whose empirical tail ``#{m_i > T + shift} / n``
    strictly exceeds ``tail_budget(T)``, or None.

    ``tail_budget`` must be continuous and nonincreasing. Thresholds that
    would discard every sample are not considered.
    """
    return threshold_scan(magnitudes, tail_budget, shift)[0]


# Mask-aware audit ------------------------------------------------------------


def _check_provenance(reference: Dataset, current: Dataset) -> None:
    o = current.origin
    if o.size and (o.min() < 0 or o.max() >= reference.n):
        raise ProvenanceLost("current rows point outside the reference dataset")
    if current.d != reference.d:
        raise ProvenanceLost("dimension differs from the reference dataset")
    if np.unique(o).size != o.size:
        raise ProvenanceLost("current rows reuse a reference row")
    if not (np.array_equal(current.X, reference.X[o]) and np.array_equal(current.y, reference.y[o])):
        raise ProvenanceLost("current rows do not match the reference rows they claim")


def _reference_mask(reference: Dataset) -> np.ndarray:
    if reference.outlier_mask is None:
        return np.zeros(reference.n, dtype=bool)
    return reference.outlier_mask


def sym_diff_progress(reference: Dataset, current: Dataset, deleted: int | None = None) -> float:
    """``(|S \\ S'| + |S' \\ S|) / |S|`` for the clean multiset ``S`` behind ``reference``.

    ``S`` consists of the unmasked reference rows plus ``deleted`` clean rows
    the adversary removed and which are not present anywhere. With the default
    replacement model every masked row displaced one clean row, so ``deleted``
    equals the number of masked rows and ``|S| = reference.n``.
    """
    _check_provenance(reference, current)
    mask = _reference_mask(reference)
    n_bad = int(mask.sum())
    if deleted is None:
        deleted = n_bad
    size_s = reference.n - n_bad + deleted
    if size_s <= 0:
        raise ProvenanceLost("clean reference multiset is empty")
    cur_bad = mask[current.origin]
    clean_kept = int((~cur_bad).sum())
    corrupt_kept = int(cur_bad.sum())
    return (size_s - clean_kept + corrupt_kept) / size_s


def removal_counts(reference: Dataset, removed_origins) -> tuple[int, int]:
    """``(clean_removed, corrupt_removed)`` for a set of reference row indices."""
    mask = _reference_mask(reference)
    idx = np.asarray(removed_origins, dtype=np.int64)
    bad = int(mask[idx].sum())
    return int(idx.size - bad), bad


def progress_trajectory(reference: Dataset, removed_per_iteration: Sequence, deleted: int | None = None) -> list[float]:
    """Delta after each iteration, starting from the full reference dataset."""
    mask = _reference_mask(reference)
    n_bad = int(mask.sum())
    if deleted is None:
        deleted = n_bad
    size_s = reference.n - n_bad + deleted
    clean_kept = reference.n - n_bad
    corrupt_kept = n_bad
    out = [(size_s - clean_kept + corrupt_kept) / size_s]
    for removed in removed_per_iteration:
        c, b = removal_counts(reference, removed)
        clean_kept -= c
        corrupt_kept -= b
        out.append((size_s - clean_kept + corrupt_kept) / size_s)
    return out


# Regularity verifiers --------------------------------------------------------


@dataclass
class ConditionResult:
    passed: bool
    measured: float
    threshold: float


@dataclass
class ConditionReport:
    conditions: dict[str, ConditionResult] = field(default_factory=dict)

    def add(self, name: str, measured: float, threshold: float, passed: bool | None = None):
        if passed is None:
            passed = measured <= threshold
        self.conditions[name] = ConditionResult(bool(passed), float(measured), float(threshold))

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    def failures(self) -> list[str]:
        return [k for k, c in self.conditions.items() if not c.passed]

    def to_dict(self) -> dict:
        return {k: asdict(c) for k, c in self.conditions.items()}


def _tail_grid(start: float, stop: float, size: int = 64) -> np.ndarray:
    """Uniform grid of thresholds. Callers start it where the exponential term
    of the budget drops below 1, since the inequality is vacuous before that."""
    return np.linspace(start, max(stop, start + 1.0), size)


def _unit_directions(d: int, k: int, rng, extra=()) -> np.ndarray:
    V = rng.standard_normal((k, d))
    rows = [V]
    for e in extra:
        e = np.asarray(e, dtype=float)
        if np.linalg.norm(e) > 0:
            rows.append(e[None, :])
    V = np.vstack(rows + [np.eye(d)])
    return V / np.linalg.norm(V, axis=1, keepdims=True)


class _TailCounter:
    """Accumulates ``#{p > t}`` for many directions over a uniform grid of ``t``."""

    def __init__(self, grid: np.ndarray, n_dirs: int):
        self.grid = np.asarray(grid, dtype=float)
        self.step = float(self.grid[1] - self.grid[0])
        if not np.allclose(np.diff(self.grid), self.step):
            raise ValueError("tail grid must be uniformly spaced")
        self.counts = np.zeros((n_dirs, self.grid.size), dtype=np.int64)

    def update(self, P: np.ndarray) -> None:
        # P: (rows, n_dirs); pos = #{grid < p}, so p > grid[i] iff i < pos.
        # Entries at or below grid[0] have pos = 0 and add nothing.
        G = self.grid.size
        rows, cols = np.nonzero(P > self.grid[0])
        if rows.size == 0:
            return
        pos = np.ceil((P[rows, cols] - self.grid[0]) / self.step)
        pos = np.clip(pos, 1, G).astype(np.int64) + cols * (G + 1)
        h = np.bincount(pos, minlength=P.shape[1] * (G + 1)).reshape(P.shape[1], G + 1)
        self.counts += np.cumsum(h[:, ::-1], axis=1)[:, ::-1][:, 1:]

    def worst_margin(self, n: int, budget: np.ndarray) -> float:
        return float((self.counts / n - budget[None, :]).max())


def verify_good_set(
    dataset: Dataset,
    beta,
    sigma_y: float,
    epsilon: float,
    tau: float,
    n_directions: int = 32,
    const: float = 10.0,
    log_exponent: int = 1,
    t_grid: Sequence[float] | None = None,
    seed: int = 0,
) -> ConditionReport:
    """Check the four regularity conditions used by the basic filter on a clean set.

    ``const`` replaces the unspecified constants in the mean and covariance
    conditions; ``log_exponent`` is the power of ``log(N/tau)`` in the tail
    term. Tail conditions are checked for ``n_directions`` random directions
    plus the coordinate axes and ``beta``, in both orientations, over ``t_grid``.
    """
    n, d = dataset.n, dataset.d
    beta = np.asarray(beta, dtype=float)
    L = math.log(n / tau)
    rng = np.random.default_rng(seed)
    V = _unit_directions(d, n_directions, rng, extra=(beta,))
    V = np.vstack([V, -V])
    if t_grid is None:
        grid = _tail_grid(16 * math.log(16), 4 * math.sqrt(d) * L)
    else:
        grid = np.asarray(t_grid, dtype=float)
    counter = _TailCounter(grid, V.shape[0])
    max_norm = 0.0
    max_y = 0.0
    s = np.zeros(d)
    S2 = np.zeros((d, d))
    for sl in _chunks(n, _VCHUNK):
        Z = dataset.y[sl, None] * dataset.X[sl] / sigma_y
        max_norm = max(max_norm, float(np.sqrt((Z * Z).sum(axis=1)).max()))
        max_y = max(max_y, float((dataset.y[sl] / sigma_y).max()))
        s += Z.sum(axis=0)
        S2 += Z.T @ Z
        counter.update(Z @ V.T)
    report = ConditionReport()
    report.add("i_norm", max_norm, 4 * math.sqrt(d) * L)
    report.add("i_response", max_y, math.sqrt(4 * L))
    budget = 16 * np.exp(-grid / 16) + epsilon / (grid**2 * L**log_exponent)
    report.add("ii_tail", counter.worst_margin(n, budget), 0.0)
    mean = s / n * sigma_y
    report.add("iii_mean", float(np.linalg.norm(mean - beta)), const * sigma_y * epsilon)
    M = (S2 / n) * sigma_y**2 - np.outer(mean, mean)
    target = sigma_y**2 * np.eye(d) + np.outer(beta, beta)
    report.add("iv_cov", float(np.linalg.norm(M - target, 2)), const * sigma_y**2 * epsilon)
    return report


def verify_representative(
    dataset: Dataset,
    beta,
    sigma: float,
    probes: Sequence,
    epsilon: float,
    tau: float,
    n_directions: int = 32,
    const: float = 10.0,
    log_exponent: int = 1,
    t_prime: float | None = None,
    seed: int = 0,
) -> ConditionReport:
    """Check the regularity conditions used by the OLS-anchored filter.

    Group 1 concerns ``x`` alone, group 2 the residuals ``y - b.x`` for every
    probe ``b``, group 3 the products ``(y - b.x) x`` restricted to samples whose
    residual is at most ``t_prime * sigma_b`` (default ``6 sqrt(ln(1/eps))``),
    with ``sigma_b^2 = sigma^2 + ||beta - b||^2``.
    """
    n, d = dataset.n, dataset.d
    beta = np.asarray(beta, dtype=float)
    le = log_inv_eps(epsilon)
    if t_prime is None:
        t_prime = 6.0 * math.sqrt(le)
    L = math.log(n / tau)
    tail_log = math.log(d * math.log(d / (clamp_eps(epsilon) * tau))) if d > 1 else math.log(
        max(math.e, math.log(1 / (clamp_eps(epsilon) * tau)))
    )
    tail_log = max(tail_log, 1.0) ** log_exponent
    rng = np.random.default_rng(seed)
    V = _unit_directions(d, n_directions, rng, extra=(beta,))
    report = ConditionReport()

    # group 1: covariates
    grid_x = _tail_grid(2 * math.sqrt(math.log(5)), 2 * math.sqrt(math.log(5)) + 12)
    cx = _TailCounter(grid_x, V.shape[0])
    max_x = 0.0
    sx = np.zeros(d)
    Sxx = np.zeros((d, d))
    for sl in _chunks(n, _VCHUNK):
        X = dataset.X[sl]
        max_x = max(max_x, float(np.sqrt((X * X).sum(axis=1)).max()))
        sx += X.sum(axis=0)
        Sxx += X.T @ X
        cx.update(np.abs(X @ V.T))
    report.add("1i_norm", max_x, const * math.sqrt(d * L))
    budget_x = 5 * np.exp(-grid_x**2 / 4) + epsilon**2 / (grid_x**2 * tail_log)
    report.add("1ii_tail", cx.worst_margin(n, budget_x), 0.0)
    report.add("1iii_mean", float(np.linalg.norm(sx / n)), const * epsilon)
    report.add("1iv_cov", float(np.linalg.norm(Sxx / n - np.eye(d), 2)), const * epsilon)

    for k, b in enumerate(probes):
        b = np.asarray(b, dtype=float)
        delta = beta - b
        sb2 = sigma**2 + float(delta @ delta)
        sb = math.sqrt(sb2)
        tag = f"p{k}"
        grid_r = grid_x * sb
        cr = _TailCounter(grid_r, 1)
        cp = _TailCounter(_tail_grid(16 * math.log(24), 16 * math.log(24) + 200), 2 * V.shape[0])
        max_r = 0.0
        sum_r = 0.0
        sum_r2 = 0.0
        max_rx = 0.0
        nR = 0
        sRx = np.zeros(d)
        SRx = np.zeros((d, d))
        for sl in _chunks(n, _VCHUNK):
            X = dataset.X[sl]
            r = dataset.y[sl] - X @ b
            max_r = max(max_r, float(np.abs(r).max()))
            sum_r += float(r.sum())
            sum_r2 += float(r @ r)
            cr.update(np.abs(r)[:, None])
            keep = np.abs(r) <= t_prime * sb
            Z = r[keep, None] * X[keep]
            nR += int(keep.sum())
            if Z.shape[0]:
                max_rx = max(max_rx, float(np.sqrt((Z * Z).sum(axis=1)).max()))
                sRx += Z.sum(axis=0)
                SRx += Z.T @ Z
                P = Z @ V.T / sb
                cp.update(np.hstack([P, -P]))
        report.add(f"2i_{tag}_bound", max_r, const * math.sqrt(d * L) * sb)
        budget_r = 5 * np.exp(-grid_r**2 / (4 * sb2)) + epsilon**2 * sb2 / (grid_r**2 * tail_log)
        report.add(f"2ii_{tag}_tail", cr.worst_margin(n, budget_r), 0.0)
        report.add(f"2iii_{tag}_mean", abs(sum_r / n), const * epsilon * sb)
        report.add(f"2iv_{tag}_second", abs(sum_r2 / n - sb2), const * epsilon * sb2)
        if nR == 0:
            for name in ("3i", "3ii", "3iii", "3iv"):
                report.add(f"{name}_{tag}", math.inf, 0.0, passed=False)
            continue
        report.add(f"3i_{tag}_bound", max_rx, const * math.sqrt(d / epsilon) * L * sb)
        g = cp.grid
        budget_p = 24 * np.exp(-g / 16) + epsilon / (g**2 * L**log_exponent)
        report.add(f"3ii_{tag}_tail", cp.worst_margin(nR, budget_p), 0.0)
        mR = sRx / nR
        report.add(f"3iii_{tag}_mean", float(np.linalg.norm(mR - delta)), const * epsilon * le * sb)
        # centered at beta - b as in the definition
        M = SRx / nR - np.outer(mR, delta) - np.outer(delta, mR) + np.outer(delta, delta)
        target = sb2 * np.eye(d) + np.outer(delta, delta)
        report.add(f"3iv_{tag}_cov", float(np.linalg.norm(M - target, 2)), const * le**2 * epsilon * sb2)
    return report
