"""Distance estimators against brute-force oracles and algebraic identities."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marketcal.errors import EmptySampleError, PoolTooSmallError, TooFewSamplesError
from marketcal.metric import (
    KernelSpec,
    bootstrap_envelope,
    d_metric,
    emd_1d,
    energy_distance,
    median_bandwidth,
    mmd_u,
)


# -- oracles -----------------------------------------------------------------

def gaussian_k(x, y, sigma):
    return math.exp(-np.sum((np.atleast_1d(x) - np.atleast_1d(y)) ** 2) / (2 * sigma**2))


def linear_k(x, y, _sigma=None):
    return float(np.dot(np.atleast_1d(x), np.atleast_1d(y)))


def mmd_oracle(xs, ys, k, sigma=1.0):
    """Plain double-loop expansion of the three-term U-statistic."""
    n, m = len(xs), len(ys)
    t1 = sum(k(xs[i], xs[j], sigma) for i in range(n) for j in range(n) if j != i)
    t2 = sum(k(xs[i], ys[j], sigma) for i in range(n) for j in range(m))
    t3 = sum(k(ys[i], ys[j], sigma) for i in range(m) for j in range(m) if j != i)
    return t1 / (n * (n - 1)) - 2 * t2 / (n * m) + t3 / (m * (m - 1))


def ed_oracle(xs, ys):
    def sq(x, y):
        return float(np.sum((np.atleast_1d(x) - np.atleast_1d(y)) ** 2))

    n, m = len(xs), len(ys)
    t1 = sum(sq(xs[i], xs[j]) for i in range(n) for j in range(n) if j != i)
    t2 = sum(sq(xs[i], ys[j]) for i in range(n) for j in range(m))
    t3 = sum(sq(ys[i], ys[j]) for i in range(m) for j in range(m) if j != i)
    return t1 / (n * (n - 1)) - 2 * t2 / (n * m) + t3 / (m * (m - 1))


def emd_quantile_oracle(xs, ys):
    """Integrate |F_a^{-1}(u) - F_b^{-1}(u)| over the union breakpoint grid."""
    a, b = sorted(xs), sorted(ys)
    n, m = len(a), len(b)
    cuts = sorted(set([i / n for i in range(n + 1)] + [j / m for j in range(m + 1)]))
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        u = (lo + hi) / 2
        qa = a[min(int(u * n), n - 1)]
        qb = b[min(int(u * m), m - 1)]
        total += (hi - lo) * abs(qa - qb)
    return total


# -- mmd ----------------------------------------------------------------------

def test_mmd_two_point_hand_expansion():
    c = math.exp(-0.5)
    got = mmd_u([0.0, 1.0], [0.0, 1.0], KernelSpec("gaussian", 1.0))
    assert got == pytest.approx(c - 1.0, abs=1e-12)
    assert got == pytest.approx(-0.39346934, abs=1e-6)


def test_mmd_identical_constant_sets_is_zero():
    assert mmd_u([3.0] * 4, [3.0] * 5, KernelSpec("gaussian", 1.0)) == pytest.approx(0.0, abs=1e-12)


def test_mmd_matches_bruteforce_on_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n, m = rng.integers(2, 9, size=2)
        xs = rng.normal(size=n)
        ys = rng.normal(loc=0.5, size=m)
        sigma = float(rng.uniform(0.3, 2.0))
        fast = mmd_u(xs, ys, KernelSpec("gaussian", sigma))
        slow = mmd_oracle(list(xs), list(ys), gaussian_k, sigma)
        assert fast == pytest.approx(slow, abs=1e-12)
        fast_lin = mmd_u(xs, ys, KernelSpec("linear"))
        slow_lin = mmd_oracle(list(xs), list(ys), linear_k)
        assert fast_lin == pytest.approx(slow_lin, abs=1e-12)


def test_mmd_needs_two_per_side():
    with pytest.raises(TooFewSamplesError):
        mmd_u([1.0], [1.0, 2.0])


def test_mmd_symmetric_and_permutation_invariant():
    rng = np.random.default_rng(11)
    xs, ys = rng.normal(size=6), rng.normal(size=5)
    k = KernelSpec("gaussian", 0.8)
    assert mmd_u(xs, ys, k) == pytest.approx(mmd_u(ys, xs, k), abs=1e-12)
    assert mmd_u(xs, ys, k) == pytest.approx(mmd_u(rng.permutation(xs), ys, k), abs=1e-12)


def test_median_bandwidth_scale_equivariance():
    rng = np.random.default_rng(3)
    xs, ys = rng.normal(size=10), rng.normal(size=8)
    assert median_bandwidth(2 * xs, 2 * ys) == pytest.approx(2 * median_bandwidth(xs, ys))


# -- energy distance -----------------------------------------------------------

def test_ed_constant_sets_zero():
    assert energy_distance([2.0, 2.0, 2.0], [2.0, 2.0]) == pytest.approx(0.0, abs=1e-12)


def test_ed_matches_bruteforce():
    rng = np.random.default_rng(13)
    for _ in range(100):
        n, m = rng.integers(2, 9, size=2)
        xs = rng.normal(size=n)
        ys = rng.normal(loc=1.0, size=m)
        assert energy_distance(xs, ys) == pytest.approx(ed_oracle(list(xs), list(ys)), abs=1e-12)


def test_ed_is_minus_two_linear_mmd():
    rng = np.random.default_rng(17)
    for _ in range(50):
        xs = rng.normal(size=rng.integers(2, 10))
        ys = rng.normal(loc=0.7, size=rng.integers(2, 10))
        ed = energy_distance(xs, ys)
        lin = mmd_u(xs, ys, KernelSpec("linear"))
        assert ed == pytest.approx(-2.0 * lin, abs=1e-12)


# -- emd -----------------------------------------------------------------------

def test_emd_basic_cases():
    assert emd_1d([1.0, 2.0], [1.0, 2.0]) == pytest.approx(0.0)
    assert emd_1d([0.0], [1.0]) == pytest.approx(1.0)
    assert emd_1d([0.0, 0.0], [0.0, 2.0]) == pytest.approx(1.0)


def test_emd_matches_quantile_oracle():
    rng = np.random.default_rng(19)
    for _ in range(50):
        xs = list(rng.normal(size=rng.integers(1, 12)))
        ys = list(rng.normal(loc=0.5, size=rng.integers(1, 12)))
        assert emd_1d(xs, ys) == pytest.approx(emd_quantile_oracle(xs, ys), abs=1e-9)


def test_emd_empty_rejected():
    with pytest.raises(EmptySampleError):
        emd_1d([], [1.0])


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=8),
    st.lists(st.floats(-50, 50), min_size=1, max_size=8),
    st.lists(st.floats(-50, 50), min_size=1, max_size=8),
)
def test_emd_metric_axioms(a, b, c):
    dab = emd_1d(a, b)
    assert dab >= 0
    assert dab == pytest.approx(emd_1d(b, a), abs=1e-9)
    assert dab <= emd_1d(a, c) + emd_1d(c, b) + 1e-9


# -- dispatch and envelopes -----------------------------------------------------

def test_d_metric_dispatch_and_counts():
    rng = np.random.default_rng(23)
    world, real = rng.normal(size=20), rng.normal(size=30)
    rep = d_metric(world, real, "mmd", KernelSpec("gaussian", "median"))
    assert rep.d_hat == "mmd"
    assert (rep.n_world, rep.n_real) == (20, 30)
    assert rep.value == pytest.approx(mmd_u(world, real, KernelSpec("gaussian", "median")))


def test_d_metric_pure_given_same_inputs():
    rng = np.random.default_rng(29)
    world, real = rng.normal(size=10), rng.normal(size=10)
    assert d_metric(world, real) == d_metric(world, real)


def test_envelope_same_pool_straddles_zero():
    rng = np.random.default_rng(31)
    pool = rng.normal(size=200)
    rows = bootstrap_envelope(pool, pool, ns=(5, 10), reps=50, seed=1)
    for row in rows:
        assert row.q5 <= row.mean <= row.q95
        assert row.q5 <= 0.05  # unbiased statistic on identical pools hugs zero


def test_envelope_degenerate_pools_all_zero():
    pool = np.zeros(60)
    rows = bootstrap_envelope(pool, pool, ns=(2, 5), reps=10, seed=2)
    for row in rows:
        assert (row.mean, row.q5, row.q95) == (0.0, 0.0, 0.0)


def test_envelope_reproducible_and_recomputable():
    rng = np.random.default_rng(37)
    a, b = rng.normal(size=80), rng.normal(loc=1.0, size=80)
    first = bootstrap_envelope(a, b, ns=(3, 7), reps=25, seed=9)
    second = bootstrap_envelope(a, b, ns=(3, 7), reps=25, seed=9)
    assert first == second
    # independent recomputation of the quantiles from replayed draws
    replay = np.random.default_rng(9)
    for row in first:
        vals = []
        for _ in range(25):
            sa = a[replay.choice(len(a), size=row.n, replace=False)]
            sb = b[replay.choice(len(b), size=row.n, replace=False)]
            vals.append(mmd_u(sa, sb))
        assert row.q5 == pytest.approx(float(np.quantile(vals, 0.05)))
        assert row.q95 == pytest.approx(float(np.quantile(vals, 0.95)))


def test_envelope_pool_too_small():
    with pytest.raises(PoolTooSmallError):
        bootstrap_envelope(np.zeros(4), np.zeros(4), ns=(10,), reps=5)
