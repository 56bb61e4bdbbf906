"""Experimental execution agent: state, action codes, policies, and tabular Q.

The task is acquiring a parent order of ``q0`` shares within ``T`` steps.
Action codes: 0 places a market order, 1 places a fixed-size limit order
priced at the touch (so it trades immediately against available liquidity),
2 holds.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .lob import StylizedFacts


class ExpAction(IntEnum):
    MARKET = 0
    LIMIT = 1
    HOLD = 2


@dataclass(frozen=True)
class ExpAgentState:
    elapsed_frac: float
    remaining_frac: float
    pace_gap: float  # elapsed_frac - fraction already acquired
    imbalance_5: float
    imbalance_all: float
    spread: float
    price_impact: float
    direction: int

    def features(self) -> np.ndarray:
        return np.array(
            [
                self.elapsed_frac,
                self.remaining_frac,
                self.pace_gap,
                self.imbalance_5,
                self.imbalance_all,
                self.spread,
                self.price_impact,
                float(self.direction),
            ]
        )

    def to_dict(self) -> dict:
        return {
            "elapsed_frac": self.elapsed_frac,
            "remaining_frac": self.remaining_frac,
            "pace_gap": self.pace_gap,
            "imbalance_5": self.imbalance_5,
            "imbalance_all": self.imbalance_all,
            "spread": self.spread,
            "price_impact": self.price_impact,
            "direction": self.direction,
        }

    @staticmethod
    def from_dict(d: dict) -> "ExpAgentState":
        return ExpAgentState(
            elapsed_frac=float(d["elapsed_frac"]),
            remaining_frac=float(d["remaining_frac"]),
            pace_gap=float(d["pace_gap"]),
            imbalance_5=float(d["imbalance_5"]),
            imbalance_all=float(d["imbalance_all"]),
            spread=float(d["spread"]),
            price_impact=float(d["price_impact"]),
            direction=int(d["direction"]),
        )


def make_exp_state(
    elapsed: int, horizon: int, remaining: int, parent: int, facts: StylizedFacts
) -> ExpAgentState:
    elapsed_frac = elapsed / horizon
    remaining_frac = remaining / parent
    return ExpAgentState(
        elapsed_frac=elapsed_frac,
        remaining_frac=remaining_frac,
        pace_gap=elapsed_frac - (1.0 - remaining_frac),
        imbalance_5=facts.imbalance.get("5", 0.5),
        imbalance_all=facts.imbalance.get("all", 0.5),
        spread=float(facts.spread) if facts.spread is not None else 0.0,
        price_impact=facts.price_impact,
        direction=facts.direction,
    )


# -- policies ------------------------------------------------------------------

class AggressivePolicy:
    """Keeps placing touch-priced limit orders until the parent order fills."""

    name = "aggressive"

    def act(self, state: ExpAgentState, rng: np.random.Generator) -> ExpAction:
        return ExpAction.LIMIT if state.remaining_frac > 0 else ExpAction.HOLD

    def exact_propensity(self, state: ExpAgentState) -> float:
        return 0.0


class UniformPolicy:
    """Zero-intelligence: uniform over the three action codes."""

    name = "uniform"

    def act(self, state: ExpAgentState, rng: np.random.Generator) -> ExpAction:
        return ExpAction(int(rng.integers(0, 3)))

    def exact_propensity(self, state: ExpAgentState) -> float:
        return 1.0 / 3.0


class EpsMarketPolicy:
    """Market order with probability eps, otherwise the aggressive rule.

    ``warmup_frac`` keeps the first part of the episode market-order free, so
    the background side establishes the book before any probing trade.
    """

    name = "eps_market"

    def __init__(self, eps: float = 0.5, warmup_frac: float = 0.0):
        if not 0 <= eps <= 1:
            raise ValueError("eps must lie in [0, 1]")
        if not 0 <= warmup_frac < 1:
            raise ValueError("warmup_frac must lie in [0, 1)")
        self.eps = eps
        self.warmup_frac = warmup_frac

    def _market_allowed(self, state: ExpAgentState) -> bool:
        return state.remaining_frac > 0 and state.elapsed_frac >= self.warmup_frac

    def act(self, state: ExpAgentState, rng: np.random.Generator) -> ExpAction:
        if state.remaining_frac <= 0:
            return ExpAction.HOLD
        if self._market_allowed(state) and rng.random() < self.eps:
            return ExpAction.MARKET
        return ExpAction.LIMIT

    def exact_propensity(self, state: ExpAgentState) -> float:
        return self.eps if self._market_allowed(state) else 0.0


class SpreadMarketPolicy:
    """State-dependent (confounded) rule: market orders mostly when the spread
    is wide."""

    name = "spread_market"

    def __init__(self, threshold: float = 2.0, p_low: float = 0.1, p_high: float = 0.8):
        self.threshold = threshold
        self.p_low = p_low
        self.p_high = p_high

    def act(self, state: ExpAgentState, rng: np.random.Generator) -> ExpAction:
        if state.remaining_frac <= 0:
            return ExpAction.HOLD
        p = self.p_high if state.spread > self.threshold else self.p_low
        return ExpAction.MARKET if rng.random() < p else ExpAction.LIMIT

    def exact_propensity(self, state: ExpAgentState) -> float:
        if state.remaining_frac <= 0:
            return 0.0
        return self.p_high if state.spread > self.threshold else self.p_low


ExpPolicy = AggressivePolicy | UniformPolicy | EpsMarketPolicy | SpreadMarketPolicy


def build_exp_policy(spec: dict) -> ExpPolicy:
    name = spec.get("name", "aggressive")
    if name == "aggressive":
        return AggressivePolicy()
    if name == "uniform":
        return UniformPolicy()
    if name == "eps_market":
        return EpsMarketPolicy(eps=float(spec.get("eps", 0.5)),
                               warmup_frac=float(spec.get("warmup_frac", 0.0)))
    if name == "spread_market":
        return SpreadMarketPolicy(
            threshold=float(spec.get("threshold", 2.0)),
            p_low=float(spec.get("p_low", 0.1)),
            p_high=float(spec.get("p_high", 0.8)),
        )
    raise ValueError(f"unknown exp policy {name!r}")


def propensity(pi: ExpPolicy, state: ExpAgentState) -> float:
    """Exact probability that the policy places a market order in this state."""
    return pi.exact_propensity(state)


# -- tabular Q ------------------------------------------------------------------

@dataclass
class QTable:
    alpha: float = 0.1
    gamma: float = 0.99
    penalty: float = 5.0
    values: dict = None

    def __post_init__(self):
        # alpha = 0 is allowed so a frozen table is expressible
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.values is None:
            self.values = {}

    def value(self, state, action) -> float:
        return self.values.get((state, action), 0.0)

    def best_value(self, state) -> float:
        return max(self.value(state, a) for a in ExpAction)

    def greedy(self, state) -> ExpAction:
        return max(ExpAction, key=lambda a: self.value(state, a))


def q_update(table: QTable, state, action, reward: float, next_state, terminal: bool = False) -> QTable:
    """One Bellman backup: Q(s,a) += alpha * (R + gamma max_a' Q(s',a') - Q(s,a))."""
    target = reward
    if not terminal:
        target += table.gamma * table.best_value(next_state)
    current = table.value(state, action)
    table.values[(state, action)] = current + table.alpha * (target - current)
    return table
