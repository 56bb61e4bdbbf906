"""Feedback scalars: episode reward, naive/IPW effects, propensity fitting."""
import numpy as np
import pytest

from marketcal.errors import (
    ConfigError,
    DegeneratePropensityError,
    IncompleteRolloutError,
    NoTreatedStepsError,
    SeparationError,
)
from marketcal.exp_agent import ExpAction
from marketcal.feedback import (
    FeedbackSample,
    FeedbackSpec,
    collect_feedbacks,
    compute_feedback,
    episode_reward,
    fit_propensity,
    ipw_effect,
    mkt_to_reward,
    naive_effect,
    read_feedback_csv,
    write_feedback_csv,
)
from marketcal.rollout import ExpStep, Rollout

from synthetic import (
    confounded_propensity,
    facts_with_return,
    state_with_spread,
    synth_rollout,
    uniform_propensity,
)


def make_rollout(actions, rewards, returns, terminal_penalty=0.0, complete=True):
    steps = [
        ExpStep(
            s_prev=state_with_spread(2.0),
            action=a,
            reward=r,
            tau=0,
            bg_interactions=[],
            facts_after=facts_with_return(ret, 2),
            executed_volume=0,
            n_exec_buy=0,
            n_exec_sell=0,
        )
        for a, r, ret in zip(actions, rewards, returns)
    ]
    return Rollout(steps=steps, horizon=len(steps), seed=0, env_kind="real",
                   complete=complete, terminal_penalty=terminal_penalty,
                   arrival_mid=100.0, filled=0)


RETURN_OUTCOME = lambda step: step.facts_after.log_return  # noqa: E731


class TestEpisodeReward:
    def test_all_hold_is_pure_terminal_penalty(self):
        r = make_rollout([ExpAction.HOLD] * 3, [0.0] * 3, [0.0] * 3,
                         terminal_penalty=-5.0 * 50)
        assert episode_reward(r).value == -250.0

    def test_zero_penalty_no_fills_is_zero(self):
        r = make_rollout([ExpAction.HOLD] * 3, [0.0] * 3, [0.0] * 3)
        assert episode_reward(r).value == 0.0

    def test_hand_sum(self):
        r = make_rollout([ExpAction.LIMIT, ExpAction.MARKET], [-3.0, 1.0], [0.0, 0.0])
        assert episode_reward(r).value == -2.0

    def test_incomplete_rejected(self):
        r = make_rollout([ExpAction.HOLD], [0.0], [0.0], complete=False)
        with pytest.raises(IncompleteRolloutError):
            episode_reward(r)


class TestNaiveEffect:
    def test_constant_outcome(self):
        r = make_rollout([ExpAction.MARKET] * 4, [0.0] * 4, [0.7] * 4)
        assert naive_effect(r, RETURN_OUTCOME).value == pytest.approx(0.7)

    def test_two_point_mean(self):
        actions = [ExpAction.LIMIT, ExpAction.MARKET, ExpAction.HOLD, ExpAction.MARKET]
        returns = [0.5, 0.01, 0.5, -0.01]
        sample = naive_effect(make_rollout(actions, [0.0] * 4, returns), RETURN_OUTCOME)
        assert sample.value == pytest.approx(0.0)
        assert sample.n_treated == 2

    def test_no_treated_steps_raises(self):
        r = make_rollout([ExpAction.LIMIT] * 3, [0.0] * 3, [0.0] * 3)
        with pytest.raises(NoTreatedStepsError):
            naive_effect(r, RETURN_OUTCOME)

    def test_randomized_policy_matches_oracle_truth(self):
        # ground truth: treated-mean return is 0 by construction
        values = [
            naive_effect(synth_rollout(seed, steps=300, policy="uniform"),
                         RETURN_OUTCOME).value
            for seed in range(40)
        ]
        se = np.std(values) / np.sqrt(len(values))
        assert abs(np.mean(values)) < 4 * se + 1e-4


class TestIpwEffect:
    def test_unit_propensity_equals_naive(self):
        r = synth_rollout(3, steps=100)
        naive = naive_effect(r, RETURN_OUTCOME)
        ipw = ipw_effect(r, RETURN_OUTCOME, lambda s: 1.0)
        assert ipw.value == pytest.approx(naive.value, abs=1e-15)
        assert ipw.n_treated == naive.n_treated

    def test_constant_half_propensity_scaling(self):
        actions = [ExpAction.MARKET, ExpAction.MARKET]
        returns = [0.01, -0.01]
        r = make_rollout(actions, [0.0] * 2, returns)
        assert ipw_effect(r, RETURN_OUTCOME, lambda s: 0.5).value == pytest.approx(0.0)
        # and with asymmetric outcomes the constant-propensity scaling is exact
        r2 = make_rollout(actions, [0.0] * 2, [0.02, 0.01])
        naive = naive_effect(r2, RETURN_OUTCOME).value
        assert ipw_effect(r2, RETURN_OUTCOME, lambda s: 0.5).value == pytest.approx(naive / 0.5)

    def test_zero_propensity_at_treated_step_raises(self):
        r = make_rollout([ExpAction.MARKET], [0.0], [0.1])
        with pytest.raises(DegeneratePropensityError):
            ipw_effect(r, RETURN_OUTCOME, lambda s: 0.0)

    def test_ipw_beats_naive_under_confounding(self):
        truth = np.mean([
            naive_effect(synth_rollout(10_000 + s, steps=2000, policy="uniform"),
                         RETURN_OUTCOME).value
            for s in range(10)
        ])
        wins = 0
        n_seeds = 60
        for seed in range(n_seeds):
            r = synth_rollout(seed, steps=400, policy="confounded")
            naive = naive_effect(r, RETURN_OUTCOME).value
            ipw = ipw_effect(r, RETURN_OUTCOME, confounded_propensity).value
            wins += abs(ipw - truth) < abs(naive - truth)
        assert wins / n_seeds >= 0.85

    def test_zero_intelligence_policy_aligns_estimators(self):
        diffs, naives = [], []
        for seed in range(50):
            r = synth_rollout(seed, steps=200, policy="uniform")
            naive = naive_effect(r, RETURN_OUTCOME).value
            ipw = ipw_effect(r, RETURN_OUTCOME, uniform_propensity).value
            naives.append(naive)
            diffs.append(ipw - naive)
        se = np.std(diffs) / np.sqrt(len(diffs))
        assert abs(np.mean(diffs)) < 3 * se + 1e-5


class TestMktToReward:
    def test_mirrors_naive_machinery(self):
        actions = [ExpAction.MARKET, ExpAction.LIMIT, ExpAction.MARKET]
        rewards = [-3.0, -0.5, 1.0]
        r = make_rollout(actions, rewards, [0.0] * 3)
        assert mkt_to_reward(r).value == pytest.approx(-1.0)
        assert mkt_to_reward(r, estimator="ipw", propensity=lambda s: 1.0).value == pytest.approx(-1.0)


class TestCollect:
    def test_drops_are_counted_not_imputed(self):
        with_market = make_rollout([ExpAction.MARKET], [0.0], [0.3])
        without = make_rollout([ExpAction.LIMIT], [0.0], [0.3])
        spec = FeedbackSpec(kind="market_to_next_return", estimator="naive")
        fs = collect_feedbacks([with_market, without, with_market], spec)
        assert len(fs.samples) == 2
        assert fs.n_dropped == 1

    def test_ipw_without_propensity_rejected(self):
        spec = FeedbackSpec(estimator="ipw")
        with pytest.raises(ConfigError):
            compute_feedback(make_rollout([ExpAction.MARKET], [0.0], [0.1]), spec)

    def test_unavailable_snapshots_are_skipped(self):
        from marketcal.lob import StylizedFacts

        r = make_rollout([ExpAction.MARKET] * 2, [0.0] * 2, [0.5, 0.9])
        r.steps[1] = ExpStep(
            s_prev=r.steps[1].s_prev, action=r.steps[1].action, reward=0.0, tau=0,
            bg_interactions=[],
            facts_after=StylizedFacts(False, None, None, 0.0, 0.0,
                                      {"all": 1.0}, {"all": 0}, {"all": 0}, {"all": 0}, 0),
            executed_volume=0, n_exec_buy=0, n_exec_sell=0,
        )
        skipping = lambda step: step.facts_after.log_return if step.facts_after.available else None  # noqa: E731
        sample = naive_effect(r, skipping)
        assert sample.n_treated == 1
        assert sample.value == pytest.approx(0.5)


class TestFitPropensity:
    def grid_states(self):
        return [state_with_spread(s) for s in (1.0, 2.0, 3.0, 4.0)]

    def test_state_independent_treatment_recovers_base_rate(self):
        rng = np.random.default_rng(0)
        history = []
        for _ in range(10_000):
            spread = float(rng.choice([1.0, 2.0, 3.0]))
            history.append((state_with_spread(spread), bool(rng.random() < 0.3)))
        model = fit_propensity(history)
        for s in self.grid_states():
            assert model(s) == pytest.approx(0.3, abs=0.02)

    def test_threshold_rule_saturates_and_clips(self):
        rng = np.random.default_rng(1)
        history = []
        for _ in range(2000):
            spread = float(rng.choice([1.0, 3.0]))
            history.append((state_with_spread(spread), spread > 2.0))
        with pytest.warns(UserWarning):
            model = fit_propensity(history)
        low = model(state_with_spread(1.0))
        high = model(state_with_spread(3.0))
        assert max(low, 0.05) == pytest.approx(0.05, abs=1e-9)
        assert high > 0.9

    def test_single_class_history_rejected(self):
        history = [(state_with_spread(1.0), True)] * 10
        with pytest.raises(SeparationError):
            fit_propensity(history)


class TestCsv:
    def test_round_trip(self, tmp_path):
        spec = FeedbackSpec(kind="market_to_next_return", estimator="naive")
        fs = collect_feedbacks([synth_rollout(s, steps=50) for s in range(5)], spec)
        path = tmp_path / "feedback.csv"
        write_feedback_csv(path, fs, seed=77)
        loaded = read_feedback_csv(path)
        assert [s.value for s in loaded] == [s.value for s in fs.samples]
        assert [s.n_treated for s in loaded] == [s.n_treated for s in fs.samples]
        text = path.read_text()
        assert text.startswith("#schema-version=1\n#seed=77\n")
