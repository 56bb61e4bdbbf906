"""Episode orchestration: determinism, snapshots, branching, serialization."""
import numpy as np
import pytest

from marketcal.bg_agents import BgPopulationConfig
from marketcal.errors import (
    ConfigError,
    IllegalForcedActionError,
    IndexBeyondRealizedTauError,
)
from marketcal.exp_agent import EpsMarketPolicy, ExpAction, UniformPolicy
from marketcal.rollout import (
    MarketConfig,
    RealEnv,
    Rollout,
    ScenarioConfig,
    Simulation,
    WorldEnv,
    capture_prefix,
    finish_prefix,
    load_rollout,
    mc_finish,
    run_rollout,
    run_rollout_with_prefixes,
    save_rollout,
    world_obs_dim,
)
from marketcal.world_policy import WorldAction, WorldPolicy


class HoldPolicy:
    name = "hold"

    def act(self, state, rng):
        return ExpAction.HOLD

    def exact_propensity(self, state):
        return 0.0


SCENARIO = ScenarioConfig(horizon=4, parent_order=100, penalty=2.0, limit_size=10,
                          market_size=10)
MARKET = MarketConfig(initial_mid=100, initial_levels=3, initial_level_volume=100)


def small_population(n_noise=5):
    return BgPopulationConfig(n_noise=n_noise, n_momentum=1, n_value=1, n_market_maker=1)


def world_env(wakeups=3, noise=2, theta_seed=None):
    policy = WorldPolicy(world_obs_dim(SCENARIO), hidden_dim=8)
    if theta_seed is not None:
        policy.randomize(np.random.default_rng(theta_seed), scale=0.3)
    floor = BgPopulationConfig(n_noise=noise, n_momentum=0, n_value=0, n_market_maker=0) \
        if noise else None
    return WorldEnv(policy=policy, noise_floor=floor, wakeups_per_step=wakeups)


class TestRunRollout:
    def test_inert_environment(self):
        env = world_env(wakeups=0, noise=0)
        scenario = ScenarioConfig(horizon=1, parent_order=20, penalty=2.0)
        rollout = run_rollout(env, HoldPolicy(), scenario, MARKET, seed=0)
        assert len(rollout.steps) == 1
        step = rollout.steps[0]
        assert step.reward == 0.0
        assert step.tau == 0
        assert step.facts_after.mid == 100.0  # book untouched
        assert rollout.terminal_penalty == -2.0 * 20
        assert rollout.complete

    def test_deterministic_in_seed(self):
        env = RealEnv(small_population())
        a = run_rollout(env, EpsMarketPolicy(0.5), SCENARIO, MARKET, seed=7)
        b = run_rollout(RealEnv(small_population()), EpsMarketPolicy(0.5), SCENARIO, MARKET, seed=7)
        assert a.to_lines() == b.to_lines()

    def test_world_env_deterministic_in_seed(self):
        a = run_rollout(world_env(theta_seed=3), EpsMarketPolicy(0.5), SCENARIO, MARKET, seed=9)
        b = run_rollout(world_env(theta_seed=3), EpsMarketPolicy(0.5), SCENARIO, MARKET, seed=9)
        assert a.to_lines() == b.to_lines()

    def test_adjacent_seeds_differ(self):
        env = RealEnv(small_population())
        differing = 0
        for seed in range(10):
            r1 = run_rollout(env, EpsMarketPolicy(0.5), SCENARIO, MARKET, seed=seed)
            r2 = run_rollout(RealEnv(small_population()), EpsMarketPolicy(0.5),
                             SCENARIO, MARKET, seed=seed + 1)
            differing += r1.to_lines() != r2.to_lines()
        assert differing >= 9

    def test_real_and_world_envs_actually_differ(self):
        pi = EpsMarketPolicy(0.5)
        real = run_rollout(RealEnv(small_population()), pi, SCENARIO, MARKET, seed=5)
        world = run_rollout(world_env(theta_seed=1), pi, SCENARIO, MARKET, seed=5)
        assert real.env_kind == "real" and world.env_kind == "world"
        assert [s.facts_after for s in real.steps] != [s.facts_after for s in world.steps]

    def test_rewards_track_shortfall(self):
        # a lone market buy against the seeded book pays the half-spread
        env = world_env(wakeups=0, noise=0)

        class OneShot:
            def __init__(self):
                self.fired = False

            def act(self, state, rng):
                if self.fired:
                    return ExpAction.HOLD
                self.fired = True
                return ExpAction.MARKET

            def exact_propensity(self, state):
                return 0.0

        scenario = ScenarioConfig(horizon=2, parent_order=10, penalty=0.0, market_size=10)
        rollout = run_rollout(env, OneShot(), scenario, MARKET, seed=0)
        # best ask sits one tick above the 100 mid
        assert rollout.steps[0].reward == -10 * 1.0
        assert rollout.filled == 10
        assert rollout.total_reward() == -10.0

    def test_policy_dim_mismatch_rejected(self):
        bad = WorldEnv(policy=WorldPolicy(world_obs_dim(SCENARIO) + 1, hidden_dim=8),
                       noise_floor=None, wakeups_per_step=1)
        with pytest.raises(ConfigError):
            run_rollout(bad, HoldPolicy(), SCENARIO, MARKET, seed=0)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        rollout = run_rollout(RealEnv(small_population()), EpsMarketPolicy(0.5),
                              SCENARIO, MARKET, seed=11)
        path = tmp_path / "rollout.jsonl"
        save_rollout(path, rollout)
        loaded = load_rollout(path)
        assert loaded == rollout
        assert loaded.to_lines() == rollout.to_lines()

    def test_world_round_trip(self, tmp_path):
        rollout = run_rollout(world_env(theta_seed=2), UniformPolicy(), SCENARIO, MARKET, seed=13)
        path = tmp_path / "rollout.jsonl"
        save_rollout(path, rollout)
        assert load_rollout(path).to_lines() == rollout.to_lines()


class TestPrefixCapture:
    def test_first_decision_prefix_is_bare(self):
        prefix = capture_prefix(world_env(theta_seed=1), EpsMarketPolicy(0.5),
                                SCENARIO, MARKET, seed=3, t=1, j=1)
        assert (prefix.t, prefix.j) == (1, 1)
        assert prefix.partial_steps == []
        assert prefix.pending_state.features.shape == (world_obs_dim(SCENARIO),)

    def test_restore_then_run_equals_run_through(self):
        env = world_env(theta_seed=4)
        pi = EpsMarketPolicy(0.5)
        straight = run_rollout(env, pi, SCENARIO, MARKET, seed=21)
        for t, j in [(1, 1), (2, 3), (3, 2)]:
            prefix = capture_prefix(world_env(theta_seed=4), pi, SCENARIO, MARKET,
                                    seed=21, t=t, j=j)
            resumed = finish_prefix(prefix)
            assert resumed.to_lines() == straight.to_lines(), (t, j)

    def test_capture_is_pure(self):
        env_args = dict(pi=EpsMarketPolicy(0.5), scenario=SCENARIO, market=MARKET,
                        seed=5, t=2, j=2)
        a = capture_prefix(world_env(theta_seed=6), **env_args)
        b = capture_prefix(world_env(theta_seed=6), **env_args)
        assert a.blob == b.blob
        assert a.pending_state == b.pending_state

    def test_index_beyond_realized_tau(self):
        with pytest.raises(IndexBeyondRealizedTauError):
            capture_prefix(world_env(theta_seed=1), EpsMarketPolicy(0.5), SCENARIO,
                           MARKET, seed=3, t=1, j=99)
        with pytest.raises(IndexBeyondRealizedTauError):
            capture_prefix(world_env(theta_seed=1), EpsMarketPolicy(0.5), SCENARIO,
                           MARKET, seed=3, t=99, j=1)

    def test_real_env_rejected(self):
        with pytest.raises(ConfigError):
            capture_prefix(RealEnv(small_population()), EpsMarketPolicy(0.5),
                           SCENARIO, MARKET, seed=3, t=1, j=1)

    def test_single_pass_captures_match_standalone(self):
        env = world_env(theta_seed=8)
        pi = EpsMarketPolicy(0.5)
        rollout, prefixes = run_rollout_with_prefixes(
            world_env(theta_seed=8), pi, SCENARIO, MARKET, seed=31, capture_ts=[1, 2, 3])
        straight = run_rollout(env, pi, SCENARIO, MARKET, seed=31)
        assert rollout.to_lines() == straight.to_lines()
        for t, prefix in prefixes.items():
            stand = capture_prefix(world_env(theta_seed=8), pi, SCENARIO, MARKET,
                                   seed=31, t=t, j=env.wakeups_per_step)
            assert prefix.blob == stand.blob


class TestMcFinish:
    def test_branches_share_prefix_segment(self):
        pi = EpsMarketPolicy(0.5)
        policy_env = world_env(theta_seed=9)
        prefix = capture_prefix(policy_env, pi, SCENARIO, MARKET, seed=41, t=2, j=2)
        forced = WorldAction("limit", side=0, price_bucket=2, size_bucket=0)
        branches = mc_finish(prefix, forced, policy_env.policy, n=5, seeds=[1, 2, 3, 4, 5])
        assert len(branches) == 5
        for r in branches:
            assert r.complete
            shared = [s.to_dict() for s in r.steps[: prefix.t - 1]]
            baseline = [s.to_dict() for s in branches[0].steps[: prefix.t - 1]]
            assert shared == baseline
            step_t = r.steps[prefix.t - 1]
            assert step_t.bg_interactions[prefix.j - 1].action == forced

    def test_final_decision_branch_is_deterministic(self):
        pi = HoldPolicy()
        scenario = ScenarioConfig(horizon=2, parent_order=10, penalty=0.0)
        env = world_env(wakeups=2, noise=0, theta_seed=10)
        prefix = capture_prefix(env, pi, scenario, MARKET, seed=51,
                                t=scenario.horizon, j=env.wakeups_per_step)
        forced = WorldAction("hold")
        a = mc_finish(prefix, forced, env.policy, n=1, seeds=[100])[0]
        b = mc_finish(prefix, forced, env.policy, n=1, seeds=[200])[0]
        assert [s.to_dict() for s in a.steps] == [s.to_dict() for s in b.steps]

    def test_forced_hold_in_inert_prefix_keeps_facts(self):
        pi = HoldPolicy()
        scenario = ScenarioConfig(horizon=1, parent_order=10, penalty=0.0)
        env = world_env(wakeups=1, noise=0, theta_seed=11)
        prefix = capture_prefix(env, pi, scenario, MARKET, seed=61, t=1, j=1)
        rollout = mc_finish(prefix, WorldAction("hold"), env.policy, n=1, seeds=[7])[0]
        facts = rollout.steps[0].facts_after
        assert facts.mid == 100.0
        assert facts.log_return == 0.0

    def test_illegal_forced_cancel(self):
        pi = HoldPolicy()
        env = world_env(wakeups=1, noise=0, theta_seed=12)
        prefix = capture_prefix(env, pi, SCENARIO, MARKET, seed=71, t=1, j=1)
        assert prefix.pending_state.n_resting == 0
        with pytest.raises(IllegalForcedActionError):
            mc_finish(prefix, WorldAction("cancel"), env.policy, n=1, seeds=[1])

    def test_derived_seeds_are_deterministic(self):
        pi = EpsMarketPolicy(0.5)
        env = world_env(theta_seed=13)
        prefix = capture_prefix(env, pi, SCENARIO, MARKET, seed=81, t=1, j=1)
        forced = WorldAction("market", side=1, size_bucket=1)
        a = mc_finish(prefix, forced, env.policy, n=3, base_seed=5)
        b = mc_finish(prefix, forced, env.policy, n=3, base_seed=5)
        assert [r.to_lines() for r in a] == [r.to_lines() for r in b]


class TestAggressiveFulfillment:
    def test_aggressive_agent_fills_parent_order_in_shipped_market(self):
        from marketcal.config import ExperimentConfig
        from marketcal.exp_agent import AggressivePolicy

        cfg = ExperimentConfig()
        fills = 0
        for seed in range(20):
            rollout = run_rollout(cfg.real_env(), AggressivePolicy(), cfg.scenario,
                                  cfg.market, seed=seed)
            fills += rollout.filled >= cfg.scenario.parent_order
        assert fills >= 19  # >= 95% of seeds

    def test_aggressive_stops_early_when_filled(self):
        from marketcal.config import ExperimentConfig
        from marketcal.exp_agent import AggressivePolicy

        cfg = ExperimentConfig()
        rollout = run_rollout(cfg.real_env(), AggressivePolicy(), cfg.scenario,
                              cfg.market, seed=0)
        assert rollout.complete
        assert len(rollout.steps) <= cfg.scenario.horizon
        assert rollout.filled >= cfg.scenario.parent_order
