"""Factorized policy: densities, gradients, sampling, and the KDE helper."""
import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import chisquare

from marketcal.errors import ConfigError, IllegalActionError
from marketcal.world_policy import (
    KINDS,
    WorldAction,
    WorldActionSpace,
    WorldPolicy,
    WorldState,
    kde_log_density,
    load_policy,
    save_policy,
)

SPACE = WorldActionSpace(price_offset_max=3, size_grid=(10, 20, 50), cancel_slots=4)
DIM = 6


def make_state(n_resting=0, seed=0):
    rng = np.random.default_rng(seed)
    return WorldState(rng.normal(size=DIM), n_resting)


def make_policy(theta_seed=None):
    policy = WorldPolicy(DIM, hidden_dim=8, space=SPACE)
    if theta_seed is not None:
        policy.randomize(np.random.default_rng(theta_seed), scale=0.5)
    return policy


class TestLogProb:
    def test_zero_theta_gives_uniform_heads(self):
        policy = make_policy()
        state = make_state(n_resting=0)
        a = WorldAction("limit", side=1, price_bucket=2, size_bucket=0)
        # cancel masked out: kind renormalizes over the other three
        expected = -(math.log(3) + math.log(2) + math.log(7) + math.log(3))
        assert policy.log_prob(state, a) == pytest.approx(expected, abs=1e-12)

    def test_zero_theta_all_kinds_legal(self):
        policy = make_policy()
        state = make_state(n_resting=2)
        a = WorldAction("limit", side=0, price_bucket=3, size_bucket=1)
        expected = -(math.log(4) + math.log(2) + math.log(7) + math.log(3))
        assert policy.log_prob(state, a) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("n_resting", [0, 1, 2, 10])
    def test_canonical_actions_sum_to_one(self, n_resting):
        policy = make_policy(theta_seed=42)
        state = make_state(n_resting=n_resting, seed=3)
        total = sum(
            math.exp(policy.log_prob(state, a)) for a in policy.enumerate_actions(state)
        )
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_canonicalization_ignores_irrelevant_fields(self):
        policy = make_policy(theta_seed=1)
        state = make_state(n_resting=1)
        hold_a = WorldAction("hold", side=1, price_bucket=4, size_bucket=2)
        hold_b = WorldAction("hold")
        assert policy.log_prob(state, hold_a) == policy.log_prob(state, hold_b)

    def test_cancel_illegal_without_resting_orders(self):
        policy = make_policy()
        with pytest.raises(IllegalActionError):
            policy.log_prob(make_state(n_resting=0), WorldAction("cancel"))

    def test_cancel_slot_beyond_resting_count(self):
        policy = make_policy()
        with pytest.raises(IllegalActionError):
            policy.log_prob(make_state(n_resting=2), WorldAction("cancel", cancel_slot=3))

    def test_dimension_mismatch_rejected(self):
        policy = make_policy()
        with pytest.raises(ConfigError):
            policy.log_prob(WorldState(np.zeros(DIM + 1), 0), WorldAction("hold"))


class TestGradient:
    def finite_difference(self, policy, state, action, eps=1e-5):
        base = policy.theta.copy()
        grad = np.zeros_like(base)
        for i in range(len(base)):
            for sign in (+1, -1):
                theta = base.copy()
                theta[i] += sign * eps
                probe = WorldPolicy(policy.input_dim, policy.hidden_dim, policy.space, theta)
                grad[i] += sign * probe.log_prob(state, action)
        policy.theta = base
        return grad / (2 * eps)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        for case in range(12):
            policy = make_policy(theta_seed=100 + case)
            n_resting = int(rng.integers(0, 4))
            state = make_state(n_resting=n_resting, seed=200 + case)
            action = policy.sample(state, rng)
            analytic = policy.grad_log_prob(state, action)
            numeric = self.finite_difference(policy, state, action)
            rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
            assert rel < 1e-4, f"case {case}: rel error {rel}"

    def test_gradient_zero_for_sole_legal_slot_head(self):
        # single resting order: slot head has a single legal class, so its
        # probability is pinned at 1 and contributes no gradient signal
        policy = make_policy(theta_seed=5)
        state = make_state(n_resting=1)
        g = policy.grad_log_prob(state, WorldAction("cancel", cancel_slot=0))
        assert np.isfinite(g).all()


class TestSampling:
    def test_fixed_rng_is_deterministic(self):
        policy = make_policy(theta_seed=7)
        state = make_state(n_resting=1)
        a = policy.sample(state, np.random.default_rng(123))
        b = policy.sample(state, np.random.default_rng(123))
        assert a == b

    def test_zero_theta_kind_frequencies_uniform(self):
        policy = make_policy()
        state = make_state(n_resting=2)
        rng = np.random.default_rng(11)
        n = 100_000
        counts = {k: 0 for k in KINDS}
        for _ in range(n):
            counts[policy.sample(state, rng).kind] += 1
        p = 1 / 4
        sigma = math.sqrt(p * (1 - p) / n)
        for k in KINDS:
            assert abs(counts[k] / n - p) < 3 * sigma + 1e-9, (k, counts[k] / n)

    def test_sampled_frequencies_match_densities_chisquare(self):
        policy = make_policy(theta_seed=21)
        state = make_state(n_resting=1, seed=5)
        rng = np.random.default_rng(31)
        actions = policy.enumerate_actions(state)
        probs = np.array([math.exp(policy.log_prob(state, a)) for a in actions])
        index = {a: i for i, a in enumerate(actions)}
        n = 100_000
        counts = np.zeros(len(actions))
        for _ in range(n):
            counts[index[policy.sample(state, rng)]] += 1
        # pool tiny-probability cells to keep the chi-square approximation valid
        keep = probs * n >= 5
        obs, exp = counts[keep], probs[keep] * n
        if (~keep).any():
            obs = np.append(obs, counts[~keep].sum())
            exp = np.append(exp, probs[~keep].sum() * n)
        result = chisquare(obs, exp)
        assert result.pvalue > 1e-3

    def test_saturated_head_always_sampled(self):
        policy = make_policy()
        theta = policy.theta.copy()
        # push the "market" kind logit to +20 through the bias of the output layer
        b2_start = policy.n_params - policy.space.total_head_dim
        theta[b2_start + KINDS.index("market")] = 20.0
        policy.theta = theta
        state = make_state(n_resting=0)
        rng = np.random.default_rng(17)
        assert all(policy.sample(state, rng).kind == "market" for _ in range(10_000))


class TestPersistence:
    def test_round_trip(self, tmp_path):
        policy = make_policy(theta_seed=3)
        path = tmp_path / "policy.bin"
        save_policy(path, policy, seed=99)
        loaded = load_policy(path)
        assert np.array_equal(loaded.theta, policy.theta)
        assert loaded.space == policy.space
        state = make_state(n_resting=1)
        a = WorldAction("limit", side=1, price_bucket=0, size_bucket=2)
        assert loaded.log_prob(state, a) == policy.log_prob(state, a)


class TestKde:
    def test_single_cluster_matches_standard_normal(self):
        got = kde_log_density([0.0, 0.0], query=0.0, bandwidth=1.0)
        assert got == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_two_point_closed_form(self):
        got = kde_log_density([-1.0, 1.0], query=0.0, bandwidth=1.0)
        expected = math.log(math.exp(-0.5) / math.sqrt(2 * math.pi))
        assert got == pytest.approx(expected, abs=1e-12)

    def test_density_integrates_to_one(self):
        rng = np.random.default_rng(13)
        samples = rng.normal(size=12)
        total, _ = quad(
            lambda x: math.exp(kde_log_density(samples, x, bandwidth="median")),
            -15, 15, limit=200,
        )
        assert total == pytest.approx(1.0, abs=1e-3)

    def test_degenerate_samples_fall_back_with_warning(self):
        with pytest.warns(UserWarning):
            got = kde_log_density([2.0, 2.0, 2.0], query=2.0, bandwidth="median")
        assert math.isfinite(got)
