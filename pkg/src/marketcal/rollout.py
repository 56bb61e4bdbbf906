"""Rollout orchestration: the exp agent against either environment flavor.

One rollout is ``T`` exp steps; between consecutive exp actions the background
side wakes a number of times (tau per step). Under the world environment those
wake-ups are draws from the trainable policy plus an optional noise floor, and
every policy decision point can be snapshotted and branched: restore the
snapshot, force an action, and finish the episode under fresh randomness.

All stochastic draws come from one generator per rollout, so a seed pins the
whole trajectory and snapshots capture the generator state mid-stream.
"""
from __future__ import annotations

import json
import math
import pickle
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .bg_agents import BgPopulationConfig, build_population
from .errors import (
    ConfigError,
    IllegalForcedActionError,
    IndexBeyondRealizedTauError,
)
from .exp_agent import ExpAction, ExpAgentState, make_exp_state
from .lob import (
    ALL_LEVELS,
    Book,
    Order,
    OrderKind,
    Side,
    StylizedFacts,
    mean_resting_depth,
    seed_book,
    snapshot_facts,
)
from .world_policy import WorldAction, WorldPolicy, WorldState

SNAPSHOT_MAGIC = b"MCSNAP1\x00"
ROLLOUT_SCHEMA_VERSION = 1


@dataclass
class MarketConfig:
    tick_size: int = 1
    initial_mid: int = 10_000
    initial_spread: int = 2
    initial_levels: int = 12
    initial_level_volume: int = 10


@dataclass
class ScenarioConfig:
    horizon: int = 10  # T
    parent_order: int = 50  # q0
    penalty: float = 5.0  # per unfulfilled share at the end
    limit_size: int = 10
    market_size: int = 50
    limit_style: str = "improve"  # improve the bid / join passively / take the ask
    stop_when_filled: bool = True
    levels: tuple = (1, 5, 10, ALL_LEVELS)
    window: int = 5  # stylized-fact history steps fed to the world policy
    obs_top_k: int = 3  # instantaneous book levels fed to the world policy
    volume_scale: float = 100.0
    poisson_extra_wakeups: float = 0.0

    def validate(self) -> None:
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.parent_order < 0 or self.limit_size <= 0 or self.market_size <= 0:
            raise ConfigError("order sizes must be positive")


@dataclass
class RealEnv:
    population: BgPopulationConfig
    kind: str = field(default="real", init=False)


@dataclass
class WorldEnv:
    policy: WorldPolicy
    noise_floor: BgPopulationConfig | None = None
    wakeups_per_step: int = 8
    kind: str = field(default="world", init=False)


EnvKind = RealEnv | WorldEnv

EXP_OWNER = "exp"
WORLD_OWNER = "world"

# per window step: spread, return, impact, three imbalances, two depth-5
# volumes, direction
_FACT_FEATURES = 9


def world_obs_dim(scenario: ScenarioConfig) -> int:
    return _FACT_FEATURES * scenario.window + 4 * scenario.obs_top_k + 2


def facts_feature_block(facts: StylizedFacts, scale: float) -> list[float]:
    return [
        (facts.spread or 0) / 10.0,
        facts.log_return * 100.0,
        facts.price_impact * 100.0,
        facts.imbalance.get("1", 0.5),
        facts.imbalance.get("5", 0.5),
        facts.imbalance.get("all", 0.5),
        facts.volume_bid.get("5", 0) / scale,
        facts.volume_ask.get("5", 0) / scale,
        float(facts.direction),
    ]


def build_world_state(
    window: "deque[StylizedFacts]",
    book: Book,
    scenario: ScenarioConfig,
    n_resting: int,
) -> WorldState:
    """Observation at a wake-up instant: recent step facts plus the live book."""
    feats: list[float] = []
    pad = scenario.window - len(window)
    feats.extend([0.0] * (_FACT_FEATURES * pad))
    for facts in window:
        feats.extend(facts_feature_block(facts, scenario.volume_scale))
    mid = book.mid()
    bid_lv = book.bid_levels(scenario.obs_top_k)
    ask_lv = book.ask_levels(scenario.obs_top_k)
    for i in range(scenario.obs_top_k):
        feats.append(bid_lv[i][1] / scenario.volume_scale if i < len(bid_lv) else 0.0)
        feats.append(ask_lv[i][1] / scenario.volume_scale if i < len(ask_lv) else 0.0)
    for i in range(scenario.obs_top_k):
        if mid is not None and i < len(bid_lv):
            feats.append((mid - bid_lv[i][0]) / 10.0)
        else:
            feats.append(0.0)
        if mid is not None and i < len(ask_lv):
            feats.append((ask_lv[i][0] - mid) / 10.0)
        else:
            feats.append(0.0)
    spread = book.spread()
    feats.append((spread or 0) / 10.0)
    feats.append(min(n_resting, 10) / 10.0)
    return WorldState(np.array(feats), n_resting)


def _price_refs(book: Book, fallback: int) -> tuple[int, int]:
    mid = book.mid()
    if mid is None:
        ref = book.last_trade_price if book.last_trade_price is not None else fallback
        return ref, ref
    return math.floor(mid), math.ceil(mid)


def world_action_to_order(
    action: WorldAction,
    book: Book,
    space,
    fallback_price: int,
    owner: str = WORLD_OWNER,
) -> Order | None:
    """Translate a policy action into a book order; hold maps to None."""
    if action.kind == "hold":
        return None
    if action.kind == "cancel":
        resting = book.resting_orders(owner)
        if action.cancel_slot >= len(resting):
            return None  # the targeted slot was filled in the meantime
        return Order(id=0, owner=owner, side=Side.BID, kind=OrderKind.CANCEL,
                     target_id=resting[action.cancel_slot].id)
    side = Side.BID if action.side == 0 else Side.ASK
    volume = int(space.size_grid[action.size_bucket])
    if action.kind == "market":
        return Order(id=0, owner=owner, side=side, kind=OrderKind.MARKET, volume=volume)
    bid_ref, ask_ref = _price_refs(book, fallback_price)
    ref = bid_ref if side is Side.BID else ask_ref
    price = max(1, ref + space.price_bucket_to_offset(action.price_bucket))
    return Order(id=0, owner=owner, side=side, kind=OrderKind.LIMIT,
                 price=price, volume=volume)


# -- records ---------------------------------------------------------------------

@dataclass
class BgInteraction:
    state: WorldState
    action: WorldAction

    def to_dict(self) -> dict:
        return {"S": self.state.to_dict(), "A": self.action.to_dict()}

    @staticmethod
    def from_dict(d: dict) -> "BgInteraction":
        return BgInteraction(WorldState.from_dict(d["S"]), WorldAction.from_dict(d["A"]))


@dataclass
class ExpStep:
    s_prev: ExpAgentState
    action: ExpAction
    reward: float
    tau: int
    bg_interactions: list[BgInteraction]
    facts_after: StylizedFacts
    executed_volume: int
    n_exec_buy: int
    n_exec_sell: int
    depth_mean: float | None = None  # mean resting-order depth at the step end

    def to_dict(self) -> dict:
        return {
            "record": "step",
            "s_prev": self.s_prev.to_dict(),
            "action": int(self.action),
            "reward": self.reward,
            "tau": self.tau,
            "bg": [x.to_dict() for x in self.bg_interactions],
            "facts": self.facts_after.to_dict(),
            "executed_volume": self.executed_volume,
            "n_exec_buy": self.n_exec_buy,
            "n_exec_sell": self.n_exec_sell,
            "depth_mean": self.depth_mean,
        }

    @staticmethod
    def from_dict(d: dict) -> "ExpStep":
        return ExpStep(
            s_prev=ExpAgentState.from_dict(d["s_prev"]),
            action=ExpAction(d["action"]),
            reward=float(d["reward"]),
            tau=int(d["tau"]),
            bg_interactions=[BgInteraction.from_dict(x) for x in d["bg"]],
            facts_after=StylizedFacts.from_dict(d["facts"]),
            executed_volume=int(d["executed_volume"]),
            n_exec_buy=int(d["n_exec_buy"]),
            n_exec_sell=int(d["n_exec_sell"]),
            depth_mean=d.get("depth_mean"),
        )


@dataclass
class Rollout:
    steps: list[ExpStep]
    horizon: int
    seed: int
    env_kind: str
    complete: bool
    terminal_penalty: float
    arrival_mid: float
    filled: int

    def total_reward(self) -> float:
        return sum(s.reward for s in self.steps) + self.terminal_penalty

    def to_lines(self) -> list[str]:
        meta = {
            "record": "meta",
            "schema_version": ROLLOUT_SCHEMA_VERSION,
            "horizon": self.horizon,
            "seed": self.seed,
            "env": self.env_kind,
            "complete": self.complete,
            "terminal_penalty": self.terminal_penalty,
            "arrival_mid": self.arrival_mid,
            "filled": self.filled,
        }
        lines = [json.dumps(meta, sort_keys=True, separators=(",", ":"))]
        for step in self.steps:
            lines.append(json.dumps(step.to_dict(), sort_keys=True, separators=(",", ":")))
        return lines

    @staticmethod
    def from_lines(lines: list[str]) -> "Rollout":
        meta = json.loads(lines[0])
        if meta.get("record") != "meta":
            raise ValueError("rollout log must start with a meta record")
        if meta.get("schema_version") != ROLLOUT_SCHEMA_VERSION:
            raise ValueError(f"unsupported rollout schema {meta.get('schema_version')}")
        steps = [ExpStep.from_dict(json.loads(line)) for line in lines[1:] if line.strip()]
        return Rollout(
            steps=steps,
            horizon=int(meta["horizon"]),
            seed=int(meta["seed"]),
            env_kind=meta["env"],
            complete=bool(meta["complete"]),
            terminal_penalty=float(meta["terminal_penalty"]),
            arrival_mid=float(meta["arrival_mid"]),
            filled=int(meta["filled"]),
        )


def save_rollout(path, rollout: Rollout) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rollout.to_lines()) + "\n")


def load_rollout(path) -> Rollout:
    with open(path, encoding="utf-8") as fh:
        return Rollout.from_lines(fh.read().splitlines())


@dataclass
class RolloutPrefix:
    t: int
    j: int
    pending_state: WorldState
    blob: bytes
    partial_steps: list[ExpStep]
    policy: WorldPolicy | None  # original policy, for exact continuation


# -- the simulation ---------------------------------------------------------------

@dataclass
class _StepCursor:
    s_prev: ExpAgentState
    action: ExpAction
    reward: float = 0.0
    interactions: list[BgInteraction] = field(default_factory=list)
    schedule: list[tuple[str, int]] = field(default_factory=list)
    pos: int = 0
    world_count: int = 0
    executed_volume: int = 0
    n_exec_buy: int = 0
    n_exec_sell: int = 0


class Simulation:
    """Owns one episode's full state; supports capture, restore, and forcing."""

    def __init__(self, env: EnvKind, pi, scenario: ScenarioConfig,
                 market: MarketConfig, seed: int):
        scenario.validate()
        self.env_kind = env.kind
        self.pi = pi
        self.scenario = scenario
        self.market = market
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.policy: WorldPolicy | None = None
        self.wakeups_per_step = 0
        if isinstance(env, WorldEnv):
            expected = world_obs_dim(scenario)
            if env.policy.input_dim != expected:
                raise ConfigError(
                    f"policy input dim {env.policy.input_dim} != observation dim {expected}"
                )
            self.policy = env.policy
            self.wakeups_per_step = env.wakeups_per_step
            floor_cfg = env.noise_floor
            self.agents = (
                build_population(floor_cfg, market.initial_mid)
                if floor_cfg is not None and floor_cfg.total() > 0
                else []
            )
        else:
            env.population.validate()
            self.agents = build_population(env.population, market.initial_mid)

        self.book = seed_book(
            market.tick_size,
            market.initial_mid,
            market.initial_levels,
            market.initial_level_volume,
            market.initial_spread,
        )
        self.start_mid = self.book.mid()
        self.prev_mid = self.start_mid
        facts0 = snapshot_facts(self.book, self.start_mid, self.start_mid, scenario.levels)
        self.window: deque[StylizedFacts] = deque(maxlen=scenario.window)
        self.window.append(facts0)
        self.filled = 0
        self.t = 0
        self.steps: list[ExpStep] = []
        self.next_order_id = 1
        self.cur: _StepCursor | None = None
        self.pending_force: WorldAction | None = None

    # -- state capture ------------------------------------------------------

    def snapshot(self) -> bytes:
        policy, self.policy = self.policy, None
        try:
            return SNAPSHOT_MAGIC + pickle.dumps(self, protocol=4)
        finally:
            self.policy = policy

    @staticmethod
    def restore(blob: bytes, policy: WorldPolicy | None) -> "Simulation":
        if not blob.startswith(SNAPSHOT_MAGIC):
            raise ValueError("not a simulation snapshot")
        sim: Simulation = pickle.loads(blob[len(SNAPSHOT_MAGIC):])
        sim.policy = policy
        return sim

    # -- helpers -------------------------------------------------------------

    def _alloc_id(self) -> int:
        oid = self.next_order_id
        self.next_order_id += 1
        return oid

    def exp_state(self) -> ExpAgentState:
        remaining = max(self.scenario.parent_order - self.filled, 0)
        return make_exp_state(
            elapsed=self.t,
            horizon=self.scenario.horizon,
            remaining=remaining,
            parent=max(self.scenario.parent_order, 1),
            facts=self.window[-1],
        )

    def _submit(self, order: Order, taker_side: Side) -> None:
        order.id = self._alloc_id()
        fills = self.book.submit(order)
        for f in fills:
            if taker_side is Side.BID:
                self.cur.n_exec_buy += 1
            else:
                self.cur.n_exec_sell += 1
            maker_owner = self.book.owner_of(f.maker_order_id)
            taker_owner = order.owner
            if EXP_OWNER in (maker_owner, taker_owner):
                self.cur.reward -= f.volume * (f.price - self.start_mid)
                self.cur.executed_volume += f.volume
                self.filled += f.volume

    def _exp_order(self, action: ExpAction) -> Order | None:
        remaining = self.scenario.parent_order - self.filled
        if action is ExpAction.HOLD or remaining <= 0:
            return None
        if action is ExpAction.MARKET:
            return Order(id=0, owner=EXP_OWNER, side=Side.BID, kind=OrderKind.MARKET,
                         volume=min(self.scenario.market_size, remaining))
        best_bid = self.book.best_bid()
        best_ask = self.book.best_ask()
        if self.scenario.limit_style == "marketable":
            if best_ask is None:
                return None
            price = best_ask
        elif self.scenario.limit_style == "improve":
            # improve the bid when there is room, take the ask when pinned
            if best_bid is None:
                if best_ask is None:
                    return None
                price = best_ask - 1
            elif best_ask is None or best_ask - best_bid >= 2:
                price = best_bid + 1
            else:
                price = best_ask
        else:  # "passive": join the bid queue, never move the mid
            if best_bid is not None:
                price = best_bid
            elif best_ask is not None:
                price = best_ask - 1
            else:
                return None
        if price <= 0:
            return None
        return Order(id=0, owner=EXP_OWNER, side=Side.BID, kind=OrderKind.LIMIT,
                     price=price, volume=min(self.scenario.limit_size, remaining))

    def _build_schedule(self) -> list[tuple[str, int]]:
        entries: list[tuple[str, int]] = []
        lam = self.scenario.poisson_extra_wakeups
        for idx in range(len(self.agents)):
            count = 1 + (int(self.rng.poisson(lam)) if lam > 0 else 0)
            entries.extend([("bg", idx)] * count)
        entries.extend([("world", 0)] * self.wakeups_per_step)
        if entries:
            order = self.rng.permutation(len(entries))
            entries = [entries[i] for i in order]
        return entries

    def done(self) -> bool:
        if self.t >= self.scenario.horizon:
            return True
        return self.scenario.stop_when_filled and self.filled >= self.scenario.parent_order

    # -- stepping ---------------------------------------------------------------

    def _begin_step(self) -> None:
        s_prev = self.exp_state()  # observed before the step ticks: elapsed = t-1
        self.t += 1
        action = self.pi.act(s_prev, self.rng)
        self.cur = _StepCursor(s_prev=s_prev, action=action)
        order = self._exp_order(action)
        if order is not None:
            self._submit(order, Side.BID)
        self.cur.schedule = self._build_schedule()

    def _world_wakeup(self, stop_at: tuple[int, int] | None) -> RolloutPrefix | None:
        """Process one policy decision; may capture a prefix instead."""
        j = self.cur.world_count + 1
        n_resting = len(self.book.resting_orders(WORLD_OWNER))
        if stop_at == (self.t, j) and self.pending_force is None:
            blob = self.snapshot()
            state = build_world_state(self.window, self.book, self.scenario, n_resting)
            return RolloutPrefix(
                t=self.t, j=j, pending_state=state, blob=blob,
                partial_steps=list(self.steps), policy=self.policy,
            )
        state = build_world_state(self.window, self.book, self.scenario, n_resting)
        if self.pending_force is not None:
            action, self.pending_force = self.pending_force, None
        else:
            action = self.policy.sample(state, self.rng)
        self.cur.world_count = j
        self.cur.interactions.append(BgInteraction(state, action))
        order = world_action_to_order(action, self.book, self.policy.space,
                                      self.market.initial_mid)
        if order is not None:
            self._submit(order, order.side)
        return None

    def _run_bg(self, stop_at: tuple[int, int] | None) -> RolloutPrefix | None:
        cur = self.cur
        while cur.pos < len(cur.schedule):
            kind, idx = cur.schedule[cur.pos]
            if kind == "world":
                prefix = self._world_wakeup(stop_at)
                if prefix is not None:
                    return prefix
            else:
                agent = self.agents[idx]
                order = agent.act(self.book, self.rng)
                if order is not None:
                    self._submit(order, order.side)
            cur.pos += 1
        return None

    def _finish_step(self) -> None:
        cur = self.cur
        facts = snapshot_facts(self.book, self.start_mid, self.prev_mid, self.scenario.levels)
        if facts.available:
            self.prev_mid = facts.mid
        self.window.append(facts)
        tau = cur.world_count if self.env_kind == "world" else len(cur.schedule)
        self.steps.append(
            ExpStep(
                s_prev=cur.s_prev,
                action=cur.action,
                reward=cur.reward,
                tau=tau,
                bg_interactions=cur.interactions,
                facts_after=facts,
                executed_volume=cur.executed_volume,
                n_exec_buy=cur.n_exec_buy,
                n_exec_sell=cur.n_exec_sell,
                depth_mean=mean_resting_depth(self.book),
            )
        )
        self.cur = None

    def run(self, stop_at: tuple[int, int] | None = None) -> "Rollout | RolloutPrefix":
        while True:
            if self.cur is None:
                if self.done():
                    break
                self._begin_step()
            prefix = self._run_bg(stop_at)
            if prefix is not None:
                return prefix
            self._finish_step()
        unfilled = max(self.scenario.parent_order - self.filled, 0)
        return Rollout(
            steps=self.steps,
            horizon=self.scenario.horizon,
            seed=self.seed,
            env_kind=self.env_kind,
            complete=True,
            terminal_penalty=-self.scenario.penalty * unfilled,
            arrival_mid=self.start_mid,
            filled=self.filled,
        )


# -- public operations ----------------------------------------------------------

def run_rollout(env: EnvKind, pi, scenario: ScenarioConfig, market: MarketConfig,
                seed: int) -> Rollout:
    """One complete episode, deterministic in the seed."""
    result = Simulation(env, pi, scenario, market, seed).run()
    assert isinstance(result, Rollout)
    return result


def capture_prefix(env: EnvKind, pi, scenario: ScenarioConfig, market: MarketConfig,
                   seed: int, t: int, j: int) -> RolloutPrefix:
    """Re-run the seeded episode up to the j-th policy decision of step t."""
    if not isinstance(env, WorldEnv):
        raise ConfigError("prefixes branch on policy decisions; use a world env")
    if t < 1 or j < 1:
        raise IndexBeyondRealizedTauError(f"(t={t}, j={j}) out of range")
    result = Simulation(env, pi, scenario, market, seed).run(stop_at=(t, j))
    if isinstance(result, Rollout):
        raise IndexBeyondRealizedTauError(
            f"rollout under seed {seed} never reaches decision (t={t}, j={j})"
        )
    return result


def run_rollout_with_prefixes(
    env: WorldEnv, pi, scenario: ScenarioConfig, market: MarketConfig, seed: int,
    capture_ts: list[int],
) -> tuple[Rollout, dict[int, RolloutPrefix]]:
    """One pass that also captures the prefix at the last policy decision of
    each requested step (same snapshots ``capture_prefix`` would produce)."""
    if env.wakeups_per_step < 1:
        raise ConfigError("capturing prefixes needs at least one policy wake-up per step")
    sim = Simulation(env, pi, scenario, market, seed)
    prefixes: dict[int, RolloutPrefix] = {}
    wanted = set(capture_ts)
    j_last = env.wakeups_per_step
    result = sim.run(stop_at=None if not wanted else (min(wanted), j_last))
    while isinstance(result, RolloutPrefix):
        prefixes[result.t] = result
        wanted.discard(result.t)
        remaining = [t for t in wanted if t > result.t]
        next_stop = (min(remaining), j_last) if remaining else None
        result = sim.run(stop_at=next_stop)
    return result, prefixes


def finish_prefix(prefix: RolloutPrefix) -> Rollout:
    """Resume the captured state with its original rng stream and policy."""
    sim = Simulation.restore(prefix.blob, prefix.policy)
    result = sim.run()
    assert isinstance(result, Rollout)
    return result


def mc_finish(
    prefix: RolloutPrefix,
    forced_action: WorldAction,
    policy: WorldPolicy,
    n: int,
    seeds: list[int] | None = None,
    base_seed: int = 0,
) -> list[Rollout]:
    """Branch ``n`` completions off the prefix, all starting with the forced
    action at the pending decision, each under an independent seed."""
    forced_action = forced_action.canonical()
    if forced_action.kind == "cancel":
        legal = min(prefix.pending_state.n_resting, policy.space.cancel_slots)
        if forced_action.cancel_slot >= legal:
            raise IllegalForcedActionError(
                f"cancel slot {forced_action.cancel_slot} illegal with "
                f"{prefix.pending_state.n_resting} resting orders"
            )
    if seeds is None:
        seeds = [int(s.generate_state(1)[0]) for s in
                 np.random.SeedSequence(base_seed).spawn(n)]
    if len(seeds) != n:
        raise ValueError("need one seed per branch")
    out: list[Rollout] = []
    for seed in seeds:
        sim = Simulation.restore(prefix.blob, policy)
        sim.rng = np.random.default_rng(seed)
        sim.pending_force = forced_action
        sim.seed = seed
        result = sim.run()
        assert isinstance(result, Rollout)
        out.append(result)
    return out
