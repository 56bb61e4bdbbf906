"""Parametric background-agent archetypes used as the reference environment.

Each agent produces at most one order per wake-up, drawing every random choice
from the rng stream it is handed, so runs are reproducible from a single seed.
Order ids are assigned by the caller before submission.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lob import Book, Order, OrderKind, Side


@dataclass
class NoiseConfig:
    offset_ticks: int = 3
    sizes: tuple[int, ...] = (10, 20, 50)
    market_prob: float = 0.08  # chance a wake-up sends a market order instead
    market_sizes: tuple[int, ...] = (5, 10)
    inside_prob: float = 0.02  # quotes around the mid (can move it); else depth behind the touch


@dataclass
class ValueConfig:
    reversion: float = 0.05  # pull of the fundamental toward its anchor
    volatility: float = 0.5  # tick-scale shock per wake-up
    threshold: int = 5
    size: int = 20


@dataclass
class MomentumConfig:
    short_window: int = 3
    long_window: int = 8
    size: int = 20


@dataclass
class MarketMakerConfig:
    quote_offset: int = 1
    size: int = 600


@dataclass
class BgPopulationConfig:
    n_noise: int = 100
    n_momentum: int = 1
    n_value: int = 2
    n_market_maker: int = 1
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    value: ValueConfig = field(default_factory=ValueConfig)
    momentum: MomentumConfig = field(default_factory=MomentumConfig)
    market_maker: MarketMakerConfig = field(default_factory=MarketMakerConfig)
    seed: int = 0

    def total(self) -> int:
        return self.n_noise + self.n_momentum + self.n_value + self.n_market_maker

    def validate(self) -> None:
        if self.total() < 1:
            raise ValueError("population must contain at least one agent")


def _price_refs(book: Book, fallback: int) -> tuple[int, int]:
    """Per-side integer price anchors: floor(mid) for bids, ceil(mid) for asks."""
    mid = book.mid()
    if mid is None:
        ref = book.last_trade_price if book.last_trade_price is not None else fallback
        return ref, ref
    return math.floor(mid), math.ceil(mid)


class NoiseAgent:
    """Uninformed flow: mostly depth quotes behind the touch, a slice of quotes
    around the mid, and an occasional market order."""

    archetype = "noise"

    def __init__(self, owner: str, cfg: NoiseConfig, fallback_price: int):
        self.owner = owner
        self.cfg = cfg
        self.fallback_price = fallback_price

    def act(self, book: Book, rng: np.random.Generator) -> Order | None:
        kind_draw = rng.random()
        side = Side.BID if rng.random() < 0.5 else Side.ASK
        if kind_draw < self.cfg.market_prob:
            size = int(self.cfg.market_sizes[rng.integers(0, len(self.cfg.market_sizes))])
            return Order(id=0, owner=self.owner, side=side, kind=OrderKind.MARKET,
                         volume=size)
        offset = int(rng.integers(-self.cfg.offset_ticks, self.cfg.offset_ticks + 1))
        size = int(self.cfg.sizes[rng.integers(0, len(self.cfg.sizes))])
        if kind_draw < self.cfg.market_prob + (1 - self.cfg.market_prob) * self.cfg.inside_prob:
            # around-the-mid placement: may land inside the spread or cross
            bid_ref, ask_ref = _price_refs(book, self.fallback_price)
            price = (bid_ref if side is Side.BID else ask_ref) + offset
        else:
            # depth placement: behind this side's best quote, never moves the mid
            best = book.best_bid() if side is Side.BID else book.best_ask()
            if best is None:
                bid_ref, ask_ref = _price_refs(book, self.fallback_price)
                best = bid_ref if side is Side.BID else ask_ref
            away = abs(offset)
            price = (best - away) if side is Side.BID else (best + away)
        if price <= 0:
            return None
        return Order(id=0, owner=self.owner, side=side, kind=OrderKind.LIMIT,
                     price=price, volume=size)


class ValueAgent:
    """Trades toward a mean-reverting private fundamental."""

    archetype = "value"

    def __init__(self, owner: str, cfg: ValueConfig, anchor: float):
        self.owner = owner
        self.cfg = cfg
        self.anchor = float(anchor)
        self.fundamental = float(anchor)

    def act(self, book: Book, rng: np.random.Generator) -> Order | None:
        self.fundamental += self.cfg.reversion * (self.anchor - self.fundamental)
        self.fundamental += self.cfg.volatility * rng.normal()
        mid = book.mid()
        if mid is None:
            return None
        if self.fundamental - mid > self.cfg.threshold:
            price = math.floor(mid)
            side = Side.BID
        elif mid - self.fundamental > self.cfg.threshold:
            price = math.ceil(mid)
            side = Side.ASK
        else:
            return None
        if price <= 0:
            return None
        return Order(id=0, owner=self.owner, side=side, kind=OrderKind.LIMIT,
                     price=price, volume=self.cfg.size)


class MomentumAgent:
    """Moving-average crossover on the mid price; holds on ties."""

    archetype = "momentum"

    def __init__(self, owner: str, cfg: MomentumConfig):
        self.owner = owner
        self.cfg = cfg
        self.mids: list[float] = []

    def act(self, book: Book, rng: np.random.Generator) -> Order | None:
        mid = book.mid()
        if mid is None:
            return None
        self.mids.append(mid)
        if len(self.mids) > self.cfg.long_window:
            self.mids.pop(0)
        short = float(np.mean(self.mids[-self.cfg.short_window:]))
        long = float(np.mean(self.mids))
        if short == long:
            return None
        side = Side.BID if short > long else Side.ASK
        price = math.floor(mid) if side is Side.BID else math.ceil(mid)
        if price <= 0:
            return None
        return Order(id=0, owner=self.owner, side=side, kind=OrderKind.LIMIT,
                     price=price, volume=self.cfg.size)


class MarketMakerAgent:
    """Keeps one quote per side near the mid, refreshing one side per wake-up."""

    archetype = "market_maker"

    def __init__(self, owner: str, cfg: MarketMakerConfig, fallback_price: int):
        self.owner = owner
        self.cfg = cfg
        self.fallback_price = fallback_price
        self._next_side = Side.BID

    def act(self, book: Book, rng: np.random.Generator) -> Order | None:
        side = self._next_side
        self._next_side = side.opposite
        bid_ref, ask_ref = _price_refs(book, self.fallback_price)
        if side is Side.BID:
            price = bid_ref - self.cfg.quote_offset
        else:
            price = ask_ref + self.cfg.quote_offset
        if price <= 0:
            return None
        mine = [o for o in book.resting_orders(self.owner)
                if (o.id in book._index and book._index[o.id][0] is side)]
        if mine:
            stale = mine[0]
            if stale.price == price and stale.volume == self.cfg.size:
                return None
            return Order(id=0, owner=self.owner, side=side, kind=OrderKind.REPLACE,
                         price=price, volume=self.cfg.size, target_id=stale.id)
        return Order(id=0, owner=self.owner, side=side, kind=OrderKind.LIMIT,
                     price=price, volume=self.cfg.size)


BgAgent = NoiseAgent | ValueAgent | MomentumAgent | MarketMakerAgent


def bg_act(agent: BgAgent, book: Book, rng: np.random.Generator) -> Order | None:
    """One wake-up of a background agent; None means the agent sits out."""
    return agent.act(book, rng)


def build_population(cfg: BgPopulationConfig, anchor_price: int) -> list[BgAgent]:
    cfg.validate()
    agents: list[BgAgent] = []
    for i in range(cfg.n_market_maker):
        agents.append(MarketMakerAgent(f"market_maker-{i}", cfg.market_maker, anchor_price))
    for i in range(cfg.n_value):
        agents.append(ValueAgent(f"value-{i}", cfg.value, anchor_price))
    for i in range(cfg.n_momentum):
        agents.append(MomentumAgent(f"momentum-{i}", cfg.momentum))
    for i in range(cfg.n_noise):
        agents.append(NoiseAgent(f"noise-{i}", cfg.noise, anchor_price))
    return agents
