import json
import math
import statistics

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from robustlr import (
    AdversarySpec,
    Dataset,
    HuberAdditive,
    RegressionInstance,
    corrupt,
    generate_clean,
    robust_scale_iqr,
    sym_diff_progress,
    threshold_search,
    top_eigenpair,
    verify_good_set,
    verify_representative,
    yx_moments,
)
from robustlr.errors import EmptyDataset, ProvenanceLost, TooFewSamples
from robustlr.robust_stats import (
    IQR_GAUSSIAN_DIVISOR,
    clamp_eps,
    log_inv_eps,
    progress_trajectory,
    removal_counts,
    threshold_scan,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)

# ---- robust scale -------------------------------------------------------------


def test_divisor_matches_normal_quantile():
    # independent of scipy: stdlib inverse normal CDF
    assert IQR_GAUSSIAN_DIVISOR == pytest.approx(2 * statistics.NormalDist().inv_cdf(0.75), rel=1e-15)


def test_iqr_constant():
    assert robust_scale_iqr([3.0] * 7) == 0.0


def test_iqr_two_point_pattern():
    got = robust_scale_iqr([-1, -1, 1, 1] * 100)
    assert got == pytest.approx(1.482602218505602, rel=1e-14)
    assert got == pytest.approx(2 / 1.349, rel=1e-4)


def test_iqr_gaussian():
    v = np.random.default_rng(2024).standard_normal(100_000)
    assert 0.98 <= robust_scale_iqr(v) <= 1.02


def test_iqr_needs_four():
    with pytest.raises(TooFewSamples):
        robust_scale_iqr([1.0, 2.0, 3.0])


@given(arrays(float, st.integers(4, 60), elements=finite), st.randoms())
def test_iqr_permutation_invariant(v, rnd):
    w = list(v)
    rnd.shuffle(w)
    assert robust_scale_iqr(w) == robust_scale_iqr(v)


@given(arrays(float, st.integers(4, 60), elements=finite), st.floats(1e-3, 1e3))
def test_iqr_scale_equivariant(v, c):
    assert robust_scale_iqr(c * v) == pytest.approx(c * robust_scale_iqr(v), rel=1e-9, abs=1e-9)


def test_log_clamp():
    assert clamp_eps(0.9) == pytest.approx(math.exp(-1))
    assert log_inv_eps(0.5) == pytest.approx(1.0)
    assert log_inv_eps(0.1) == pytest.approx(math.log(10))


# ---- moments of yX ----------------------------------------------------------


def test_moments_single_sample():
    mom = yx_moments(Dataset(np.array([[1.0, 0.0]]), [2.0]))
    assert mom.beta_s.tolist() == [2.0, 0.0]
    assert np.array_equal(mom.m_hat, np.zeros((2, 2)))


def test_moments_two_samples():
    mom = yx_moments(Dataset(np.array([[1.0], [-1.0]]), [1.0, 1.0]))
    assert mom.beta_s.tolist() == [0.0]
    assert mom.m_hat.tolist() == [[1.0]]


def test_moments_clean_instance():
    d = 10
    beta = np.eye(d)[0]
    ds = generate_clean(RegressionInstance(beta, sigma=1.0, seed=17), 50_000)
    mom = yx_moments(ds)
    sy2 = 2.0
    target = sy2 * np.eye(d) + np.outer(beta, beta)
    assert np.linalg.norm(mom.m_hat - target, 2) <= 0.1 * sy2


@given(st.integers(1, 40), st.integers(1, 5), st.integers(0, 10_000))
def test_moments_symmetric_psd(n, d, seed):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.standard_normal((n, d)) * 10.0 ** rng.integers(-3, 3), rng.standard_normal(n))
    m = yx_moments(ds).m_hat
    assert np.array_equal(m, m.T)
    assert np.linalg.eigvalsh(m).min() >= -1e-9 * max(np.linalg.norm(m, 2), 1e-300)


# ---- top eigenpair ------------------------------------------------------------


@pytest.mark.parametrize(
    "m,lam,v",
    [
        (np.eye(3), 1.0, None),
        (np.diag([3.0, 1.0]), 3.0, [1.0, 0.0]),
        (np.outer([2.0, 0.0], [2.0, 0.0]), 4.0, [1.0, 0.0]),
        (np.diag([1.0, -5.0]), -5.0, [0.0, 1.0]),
    ],
)
def test_eigen_examples(m, lam, v):
    e = top_eigenpair(m)
    assert e.lambda_star == pytest.approx(lam, abs=1e-12)
    assert np.linalg.norm(e.v_star) == pytest.approx(1.0, abs=1e-9)
    if v is not None:
        assert abs(float(e.v_star @ v)) == pytest.approx(1.0, abs=1e-9)


def _planted(d, top, seed):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.concatenate([[top], rng.uniform(-1.0, 1.0, d - 1)])
    return (Q * lam) @ Q.T, Q[:, 0]


@pytest.mark.parametrize("top", [6.0, -6.0])
def test_power_iteration_large_dim(top):
    m, q = _planted(90, top, seed=1)
    e = top_eigenpair(m)
    assert e.converged
    assert e.lambda_star == pytest.approx(top, rel=1e-8)
    assert abs(float(e.v_star @ q)) == pytest.approx(1.0, abs=1e-6)


@given(st.integers(1, 12), st.integers(0, 10_000))
def test_eigen_residual_small_dim(d, seed):
    a = np.random.default_rng(seed).standard_normal((d, d))
    m = a + a.T
    tol = 1e-10
    e = top_eigenpair(m, tol=tol)
    assert np.linalg.norm(m @ e.v_star - e.lambda_star * e.v_star) <= 10 * tol * np.linalg.norm(m)
    assert abs(e.lambda_star) == pytest.approx(np.abs(np.linalg.eigvalsh(m)).max(), rel=1e-9)


@given(st.integers(65, 100), st.floats(2.0, 20.0), st.booleans(), st.integers(0, 10_000))
def test_eigen_residual_power(d, top, neg, seed):
    m, _ = _planted(d, -top if neg else top, seed)
    tol = 1e-10
    e = top_eigenpair(m, tol=tol)
    assert np.linalg.norm(m @ e.v_star - e.lambda_star * e.v_star) <= 10 * tol * np.linalg.norm(m)
    assert abs(e.v_star @ m @ e.v_star - e.lambda_star) <= tol * np.linalg.norm(m)


# ---- threshold search ---------------------------------------------------------


def paper_budget(eps, n, tau):
    L = math.log(n / tau)
    return lambda T: 32 * np.exp(-T / 16) + 8 * eps / (T**2 * L)


def test_threshold_bounded_magnitudes():
    # a flat budget of 1/2 can only be beaten while more than half the mass
    # lies above T; every qualifying T therefore sits inside the data range
    m = np.linspace(0, 1, 50)
    T = threshold_search(m, lambda T: 0.5)
    assert T is not None and 0 < T < 1
    assert (m > T).mean() > 0.5
    assert threshold_search(np.r_[np.zeros(30), np.linspace(0, 1, 20)], lambda T: 0.5) is None
    assert threshold_search(np.full(10, 0.7), lambda T: 0.5) is None


def test_threshold_empty():
    assert threshold_search([], lambda T: 0.0) is None


def test_threshold_single_far_outlier_does_not_qualify():
    # a single outlier among 1000 has tail mass 1e-3, while the budget stays
    # above 1e-3 until T = 16 ln(32000) ~ 166 > 100
    m = np.array([0.1] * 999 + [100.0])
    b = paper_budget(0.1, 1000, 0.1)
    assert threshold_search(m, b) is None
    assert 16 * math.log(32 / 1e-3) > 100


def test_threshold_analytic():
    m = np.array([1.0] * 8 + [5.0] * 2)
    budget = lambda T: np.exp(-T)  # noqa: E731
    T = threshold_search(m, budget)
    assert T == pytest.approx(math.log(5), abs=1e-9)
    T_shift, cut = threshold_scan(m, budget, shift=0.5)
    assert T_shift == pytest.approx(math.log(5), abs=1e-9)
    assert cut == 1.0


def _brute(m, budget, shift, grid):
    """Dense-grid oracle: thresholds in the grid that qualify and keep at least one sample."""
    m = np.asarray(m)
    tails = (m[None, :] > (grid + shift)[:, None]).mean(axis=1)
    keeps = grid + shift >= m.min()
    return grid[(tails > budget(grid)) & keeps & (grid > 0)]


@given(
    st.lists(st.floats(0, 50, allow_nan=False), min_size=1, max_size=60),
    st.floats(0.05, 5.0),
    st.floats(0.1, 3.0),
    st.floats(0, 3.0),
)
def test_threshold_matches_bruteforce(mags, a, scale, shift):
    budget = lambda T: a * np.exp(-np.asarray(T) / scale)  # noqa: E731
    m = np.asarray(mags)
    T = threshold_search(m, budget, shift)
    grid = np.linspace(1e-6, m.max() + 1.0, 20001)
    step = grid[1] - grid[0]
    hits = _brute(m, budget, shift, grid)
    if T is None:
        assert hits.size == 0
    else:
        tail = float((m > T + shift).mean())
        assert tail > float(budget(T))
        assert T + shift >= m.min() * (1 - 1e-12)
        if hits.size:
            assert T <= hits[0] + 1e-9
            assert T >= hits[0] - step - 1e-9


# ---- progress metric --------------------------------------------------------


def _corrupted(n=10, eps=0.1, seed=0):
    clean = generate_clean(RegressionInstance([1.0, 2.0], seed=seed), n)
    return corrupt(clean, AdversarySpec(HuberAdditive(), eps), seed=seed + 1)


def test_progress_clean_part_exactly():
    ref = _corrupted()
    current = ref.subset(~ref.outlier_mask)
    assert sym_diff_progress(ref, current, deleted=0) == 0.0
    # replacement model: the displaced clean row is missing
    assert sym_diff_progress(ref, current) == pytest.approx(1 / 10)


def test_progress_one_clean_dropped():
    ref = generate_clean(RegressionInstance([1.0], seed=3), 9)
    keep = np.ones(9, dtype=bool)
    keep[4] = False
    assert sym_diff_progress(ref, ref.subset(keep)) == pytest.approx(1 / 9)


def test_progress_before_filtering():
    ref = _corrupted(n=50, eps=0.1)
    assert sym_diff_progress(ref, ref) == pytest.approx(2 * 5 / 50)


def test_progress_provenance_lost():
    ref = _corrupted()
    other = generate_clean(RegressionInstance([1.0, 2.0], seed=77), 10)
    with pytest.raises(ProvenanceLost):
        sym_diff_progress(ref, other)
    with pytest.raises(ProvenanceLost):
        sym_diff_progress(ref, Dataset(ref.X[:3], ref.y[:3], origin=[0, 0, 1]))


@given(st.integers(4, 80), st.floats(0, 0.45), st.integers(0, 10_000), st.data())
def test_progress_nonnegative_zero_iff_equal(n, eps, seed, data):
    ref = _corrupted(n, eps, seed)
    keep = np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    assume(keep.any())
    cur = ref.subset(keep)
    delta = sym_diff_progress(ref, cur, deleted=0)
    assert delta >= 0
    same = np.array_equal(keep, ~ref.outlier_mask)
    if (~ref.outlier_mask).any():
        assert (delta == 0) == same


def test_trajectory_matches_pointwise():
    ref = _corrupted(n=40, eps=0.2, seed=5)
    bad = np.flatnonzero(ref.outlier_mask)
    good = np.flatnonzero(~ref.outlier_mask)
    steps = [bad[:3].tolist(), [int(good[0])] + bad[3:].tolist()]
    traj = progress_trajectory(ref, steps)
    keep = np.ones(ref.n, dtype=bool)
    assert traj[0] == pytest.approx(sym_diff_progress(ref, ref))
    for k, rem in enumerate(steps, start=1):
        keep[rem] = False
        assert traj[k] == pytest.approx(sym_diff_progress(ref, ref.subset(keep)))
    assert removal_counts(ref, steps[1]) == (1, len(bad) - 3)


# ---- regularity verifiers -----------------------------------------------------


@pytest.fixture(scope="module")
def clean_d10():
    d = 10
    inst = RegressionInstance(np.eye(d)[0], sigma=1.0, seed=3)
    return inst, generate_clean(inst, 100_000)


def test_good_set_clean_passes(clean_d10):
    inst, ds = clean_d10
    rep = verify_good_set(ds, inst.beta, inst.sigma_y, 0.1, 0.1, n_directions=8)
    assert rep.passed, rep.failures()
    assert set(rep.conditions) == {"i_norm", "i_response", "ii_tail", "iii_mean", "iv_cov"}
    json.dumps(rep.to_dict())


def test_good_set_huge_sample_fails_i(clean_d10):
    inst, ds = clean_d10
    X, y = np.array(ds.X), np.array(ds.y)
    X[0] = 1e3
    y[0] = 1e3 * 2 ** 0.5
    assert np.linalg.norm(y[0] * X[0]) / inst.sigma_y > 1e6
    rep = verify_good_set(Dataset(X, y), inst.beta, inst.sigma_y, 0.1, 0.1, n_directions=8)
    assert not rep.conditions["i_norm"].passed


def test_good_set_shifted_mean_fails_iii(clean_d10):
    inst, ds = clean_d10
    wrong = inst.beta + 10 * inst.sigma_y * np.eye(10)[1]
    rep = verify_good_set(ds, wrong, inst.sigma_y, 0.1, 0.1, n_directions=8)
    assert not rep.conditions["iii_mean"].passed


def test_representative_probe_at_beta(clean_d10):
    inst, ds = clean_d10
    rep = verify_representative(ds, inst.beta, 1.0, [inst.beta], 0.1, 0.1, n_directions=8)
    c = rep.conditions["2iv_p0_second"]
    r = ds.y - ds.X @ inst.beta
    assert c.measured == pytest.approx(abs(float(r @ r) / ds.n - 1.0), rel=1e-9)
    assert c.threshold == pytest.approx(10 * 0.1 * 1.0)
    assert rep.passed, rep.failures()


def test_representative_far_probe_scale(clean_d10):
    inst, ds = clean_d10
    probe = inst.beta + 5.0 * np.eye(10)[2]
    rep = verify_representative(ds, inst.beta, 1.0, [probe], 0.1, 0.1, n_directions=8)
    assert rep.conditions["2iv_p0_second"].threshold == pytest.approx(10 * 0.1 * 26.0)


def test_representative_undersampled():
    inst = RegressionInstance(np.eye(10)[0], sigma=1.0, seed=3)
    rep = verify_representative(generate_clean(inst, 10), inst.beta, 1.0, [inst.beta], 0.1, 0.1)
    fails = rep.failures()
    assert fails
    assert all(("iii" in f) or ("iv" in f) for f in fails)


def test_empty_moments():
    with pytest.raises((EmptyDataset, ValueError)):
        yx_moments(Dataset(np.zeros((0, 2)), np.zeros(0)))
