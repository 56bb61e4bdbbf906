"""Limit order book with price-time priority matching and per-snapshot market descriptors.

Prices are integer ticks throughout; ``tick_size`` only matters when rendering
to display currency. Matching never leaves the book crossed, and queues within
a price level are strictly first-in-first-out.
"""
from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import NotLimitError, OwnershipError, UnknownTargetError


class Side(str, Enum):
    BID = "bid"
    ASK = "ask"

    @property
    def opposite(self) -> "Side":
        return Side.ASK if self is Side.BID else Side.BID


class OrderKind(str, Enum):
    LIMIT = "limit"
    MARKET = "market"
    CANCEL = "cancel"
    REPLACE = "replace"


@dataclass
class Order:
    id: int
    owner: str
    side: Side
    kind: OrderKind
    price: int | None = None
    volume: int = 0
    timestamp: int = 0
    target_id: int | None = None

    def validate(self) -> None:
        if self.kind is not OrderKind.CANCEL and self.volume <= 0:
            raise ValueError(f"order {self.id}: volume must be positive")
        if self.kind in (OrderKind.LIMIT, OrderKind.REPLACE):
            if self.price is None or self.price <= 0:
                raise ValueError(f"order {self.id}: limit orders need a positive price")
        if self.kind is OrderKind.MARKET and self.price is not None:
            raise ValueError(f"order {self.id}: market orders carry no price")
        if self.kind in (OrderKind.CANCEL, OrderKind.REPLACE) and self.target_id is None:
            raise ValueError(f"order {self.id}: cancel/replace needs a target id")


@dataclass(frozen=True)
class Execution:
    taker_order_id: int
    maker_order_id: int
    price: int
    volume: int
    event_clock: int


@dataclass
class _Resting:
    """A limit order resting in the book (mutable volume as it fills)."""

    id: int
    owner: str
    price: int
    volume: int
    timestamp: int

    def as_tuple(self) -> tuple[int, str, int, int, int]:
        return (self.id, self.owner, self.price, self.volume, self.timestamp)


class Book:
    """Price-ordered bid/ask ladders of FIFO queues plus an order-id index."""

    def __init__(self, tick_size: int = 1):
        if tick_size <= 0:
            raise ValueError("tick_size must be positive")
        self.tick_size = tick_size
        self.bids: dict[int, deque[_Resting]] = {}
        self.asks: dict[int, deque[_Resting]] = {}
        self._bid_prices: list[int] = []  # ascending; best bid is the last entry
        self._ask_prices: list[int] = []  # ascending; best ask is the first entry
        self._index: dict[int, tuple[Side, int]] = {}
        self._owners: dict[int, str] = {}
        self.last_trade_price: int | None = None
        self.event_clock = 0

    # -- level access -----------------------------------------------------

    def best_bid(self) -> int | None:
        return self._bid_prices[-1] if self._bid_prices else None

    def best_ask(self) -> int | None:
        return self._ask_prices[0] if self._ask_prices else None

    def mid(self) -> float | None:
        bb, ba = self.best_bid(), self.best_ask()
        if bb is None or ba is None:
            return None
        return (bb + ba) / 2

    def spread(self) -> int | None:
        bb, ba = self.best_bid(), self.best_ask()
        if bb is None or ba is None:
            return None
        return ba - bb

    def bid_levels(self, k: int | None = None) -> list[tuple[int, int]]:
        """Best-first (price, total volume) pairs on the bid side."""
        prices = list(reversed(self._bid_prices))
        if k is not None:
            prices = prices[:k]
        return [(p, sum(o.volume for o in self.bids[p])) for p in prices]

    def ask_levels(self, k: int | None = None) -> list[tuple[int, int]]:
        prices = self._ask_prices[:k] if k is not None else list(self._ask_prices)
        return [(p, sum(o.volume for o in self.asks[p])) for p in prices]

    def resting_orders(self, owner: str) -> list[_Resting]:
        """This owner's live orders in arrival order."""
        out = []
        for side_map in (self.bids, self.asks):
            for q in side_map.values():
                out.extend(o for o in q if o.owner == owner)
        out.sort(key=lambda o: o.timestamp)
        return out

    def owner_of(self, order_id: int) -> str | None:
        return self._owners.get(order_id)

    # -- mutation ---------------------------------------------------------

    def submit(self, order: Order) -> list[Execution]:
        """Process one order; returns the executions it triggered.

        Market orders sweep the opposite side by price then time until filled
        or that side empties (any residual is discarded). Limit orders match
        while crossing, then rest. Replace is cancel plus a fresh-timestamp
        insert, so queue priority is lost.
        """
        order.validate()
        self.event_clock += 1
        order.timestamp = self.event_clock
        self._owners[order.id] = order.owner

        if order.kind is OrderKind.MARKET:
            return self._match(order, limit_price=None)
        if order.kind is OrderKind.LIMIT:
            fills = self._match(order, limit_price=order.price)
            if order.volume > 0:
                self._rest(order)
            return fills
        if order.kind is OrderKind.CANCEL:
            self._remove(order.target_id, order.owner)
            return []
        # replace: pull the old order, insert the new one at the back of its level
        self._remove(order.target_id, order.owner)
        fresh = Order(
            id=order.id,
            owner=order.owner,
            side=order.side,
            kind=OrderKind.LIMIT,
            price=order.price,
            volume=order.volume,
            timestamp=self.event_clock,
        )
        fills = self._match(fresh, limit_price=fresh.price)
        if fresh.volume > 0:
            self._rest(fresh)
        return fills

    def _match(self, taker: Order, limit_price: int | None) -> list[Execution]:
        fills: list[Execution] = []
        opposite = self.asks if taker.side is Side.BID else self.bids
        while taker.volume > 0:
            best = self.best_ask() if taker.side is Side.BID else self.best_bid()
            if best is None:
                break
            if limit_price is not None:
                crossed = best <= limit_price if taker.side is Side.BID else best >= limit_price
                if not crossed:
                    break
            queue = opposite[best]
            while queue and taker.volume > 0:
                maker = queue[0]
                vol = min(taker.volume, maker.volume)
                fills.append(
                    Execution(
                        taker_order_id=taker.id,
                        maker_order_id=maker.id,
                        price=maker.price,
                        volume=vol,
                        event_clock=self.event_clock,
                    )
                )
                taker.volume -= vol
                maker.volume -= vol
                self.last_trade_price = maker.price
                if maker.volume == 0:
                    queue.popleft()
                    del self._index[maker.id]
            if not queue:
                self._drop_level(taker.side.opposite, best)
        return fills

    def _rest(self, order: Order) -> None:
        side_map = self.bids if order.side is Side.BID else self.asks
        prices = self._bid_prices if order.side is Side.BID else self._ask_prices
        if order.price not in side_map:
            side_map[order.price] = deque()
            bisect.insort(prices, order.price)
        side_map[order.price].append(
            _Resting(order.id, order.owner, order.price, order.volume, order.timestamp)
        )
        self._index[order.id] = (order.side, order.price)

    def _remove(self, target_id: int, owner: str) -> _Resting:
        loc = self._index.get(target_id)
        if loc is None:
            raise UnknownTargetError(f"no resting order with id {target_id}")
        side, price = loc
        side_map = self.bids if side is Side.BID else self.asks
        queue = side_map[price]
        for i, resting in enumerate(queue):
            if resting.id == target_id:
                if resting.owner != owner:
                    raise OwnershipError(
                        f"order {target_id} belongs to {resting.owner}, not {owner}"
                    )
                del queue[i]
                del self._index[target_id]
                if not queue:
                    self._drop_level(side, price)
                return resting
        raise UnknownTargetError(f"order {target_id} missing from its level")  # pragma: no cover

    def _drop_level(self, side: Side, price: int) -> None:
        side_map = self.bids if side is Side.BID else self.asks
        if price in side_map and not side_map[price]:
            del side_map[price]
            prices = self._bid_prices if side is Side.BID else self._ask_prices
            idx = bisect.bisect_left(prices, price)
            if idx < len(prices) and prices[idx] == price:
                prices.pop(idx)

    # -- equality / copies --------------------------------------------------

    def state_key(self) -> tuple:
        """Canonical value of the full book state; equal keys mean equal books."""
        bid_state = tuple(
            (p, tuple(o.as_tuple() for o in self.bids[p])) for p in reversed(self._bid_prices)
        )
        ask_state = tuple(
            (p, tuple(o.as_tuple() for o in self.asks[p])) for p in self._ask_prices
        )
        return (bid_state, ask_state, self.last_trade_price, self.event_clock, self.tick_size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Book):
            return NotImplemented
        return self.state_key() == other.state_key()

    def clone(self) -> "Book":
        other = Book(self.tick_size)
        other.last_trade_price = self.last_trade_price
        other.event_clock = self.event_clock
        other._owners = dict(self._owners)
        for price in self._bid_prices:
            other.bids[price] = deque(replace(o) for o in self.bids[price])
        for price in self._ask_prices:
            other.asks[price] = deque(replace(o) for o in self.asks[price])
        other._bid_prices = list(self._bid_prices)
        other._ask_prices = list(self._ask_prices)
        other._index = dict(self._index)
        return other


def seed_book(
    tick_size: int,
    mid: int,
    levels: int,
    level_volume: int,
    spread: int = 2,
    start_order_id: int = -1_000_000,
    owner: str = "seed",
) -> Book:
    """Build a symmetric starting book around ``mid`` with ``levels`` per side."""
    book = Book(tick_size)
    half = spread // 2
    oid = start_order_id
    for i in range(levels):
        for side, price in (
            (Side.BID, mid - half - i),
            (Side.ASK, mid + (spread - half) + i),
        ):
            book.submit(
                Order(id=oid, owner=owner, side=side, kind=OrderKind.LIMIT,
                      price=price, volume=level_volume)
            )
            oid += 1
    return book


# -- market descriptors ----------------------------------------------------

ALL_LEVELS = None  # sentinel for "imbalance/volume over every populated level"


def level_key(n: int | None) -> str:
    return "all" if n is None else str(n)


@dataclass(frozen=True)
class StylizedFacts:
    """Per-snapshot descriptors of the book: prices, flows, and shape."""

    available: bool
    mid: float | None
    spread: int | None
    log_return: float
    price_impact: float
    imbalance: dict[str, float]
    volume_bid: dict[str, int]
    volume_ask: dict[str, int]
    volume: dict[str, int]
    direction: int

    def to_dict(self) -> dict:
        return {
            "available": self.available,
            "mid": self.mid,
            "spread": self.spread,
            "log_return": self.log_return,
            "price_impact": self.price_impact,
            "imbalance": dict(self.imbalance),
            "volume_bid": dict(self.volume_bid),
            "volume_ask": dict(self.volume_ask),
            "volume": dict(self.volume),
            "direction": self.direction,
        }

    @staticmethod
    def from_dict(d: dict) -> "StylizedFacts":
        return StylizedFacts(
            available=d["available"],
            mid=d["mid"],
            spread=d["spread"],
            log_return=d["log_return"],
            price_impact=d["price_impact"],
            imbalance={k: float(v) for k, v in d["imbalance"].items()},
            volume_bid={k: int(v) for k, v in d["volume_bid"].items()},
            volume_ask={k: int(v) for k, v in d["volume_ask"].items()},
            volume={k: int(v) for k, v in d["volume"].items()},
            direction=int(d["direction"]),
        )


DEFAULT_LEVELS: tuple[int | None, ...] = (1, 5, 10, ALL_LEVELS)


def snapshot_facts(
    book: Book,
    scenario_start_mid: float,
    prev_mid: float,
    levels: tuple[int | None, ...] = DEFAULT_LEVELS,
) -> StylizedFacts:
    """Compute the descriptor set for the current book.

    When one side is empty the price fields are flagged unavailable and the
    imbalance collapses to 0 (no bids) or 1 (no asks); callers downstream skip
    such snapshots for return-based statistics.
    """
    if scenario_start_mid <= 0 or prev_mid <= 0:
        raise ValueError("reference mids must be positive")
    bid_lv = book.bid_levels()
    ask_lv = book.ask_levels()

    imbalance: dict[str, float] = {}
    volume_bid: dict[str, int] = {}
    volume_ask: dict[str, int] = {}
    volume: dict[str, int] = {}
    for n in levels:
        key = level_key(n)
        vb = sum(v for _, v in (bid_lv if n is None else bid_lv[:n]))
        va = sum(v for _, v in (ask_lv if n is None else ask_lv[:n]))
        volume_bid[key] = vb
        volume_ask[key] = va
        volume[key] = vb + va
        if vb + va == 0:
            imbalance[key] = 0.5
        else:
            imbalance[key] = vb / (vb + va)

    mid = book.mid()
    if mid is None:
        return StylizedFacts(
            available=False,
            mid=None,
            spread=None,
            log_return=0.0,
            price_impact=0.0,
            imbalance=imbalance,
            volume_bid=volume_bid,
            volume_ask=volume_ask,
            volume=volume,
            direction=0,
        )

    log_return = math.log(mid / prev_mid)
    price_impact = math.log(mid / scenario_start_mid)
    direction = (mid > prev_mid) - (mid < prev_mid)
    return StylizedFacts(
        available=True,
        mid=mid,
        spread=book.spread(),
        log_return=log_return,
        price_impact=price_impact,
        imbalance=imbalance,
        volume_bid=volume_bid,
        volume_ask=volume_ask,
        volume=volume,
        direction=direction,
    )


def depth_of(book: Book, order: Order, sign_corrected: bool = True) -> int:
    """Distance in ticks of a limit order's price from its side's best quote.

    The bid side is best_bid - price. For the ask side the sign-corrected form
    price - best_ask is the default; the literal best_ask + price variant is
    kept behind the switch because it is dimensionally inconsistent with the
    bid case.
    """
    if order.kind is not OrderKind.LIMIT:
        raise NotLimitError(f"depth undefined for {order.kind.value} orders")
    if order.side is Side.BID:
        best = book.best_bid()
        if best is None:
            raise ValueError("no bid side to measure depth against")
        return best - order.price
    best = book.best_ask()
    if best is None:
        raise ValueError("no ask side to measure depth against")
    return (order.price - best) if sign_corrected else (best + order.price)


def mean_resting_depth(book: Book) -> float | None:
    """Average sign-corrected depth of every resting order; None if book empty."""
    depths: list[int] = []
    bb, ba = book.best_bid(), book.best_ask()
    if bb is not None:
        for q in book.bids.values():
            depths.extend(bb - o.price for o in q)
    if ba is not None:
        for q in book.asks.values():
            depths.extend(o.price - ba for o in q)
    if not depths:
        return None
    return sum(depths) / len(depths)


# -- CSV export --------------------------------------------------------------

def book_snapshot_header(k: int, levels: tuple[int | None, ...] = DEFAULT_LEVELS) -> list[str]:
    cols = ["event_clock"]
    for i in range(1, k + 1):
        cols += [f"bid_px_{i}", f"bid_vol_{i}"]
    for i in range(1, k + 1):
        cols += [f"ask_px_{i}", f"ask_vol_{i}"]
    cols += ["mid", "spread", "log_return", "price_impact", "direction"]
    for n in levels:
        key = level_key(n)
        cols += [f"imbalance_{key}", f"volume_bid_{key}", f"volume_ask_{key}", f"volume_{key}"]
    return cols


def book_snapshot_row(
    book: Book,
    facts: StylizedFacts,
    k: int,
    levels: tuple[int | None, ...] = DEFAULT_LEVELS,
) -> list:
    row: list = [book.event_clock]
    bid_lv = book.bid_levels(k)
    ask_lv = book.ask_levels(k)
    for i in range(k):
        row += list(bid_lv[i]) if i < len(bid_lv) else ["", ""]
    for i in range(k):
        row += list(ask_lv[i]) if i < len(ask_lv) else ["", ""]
    row += [
        "" if facts.mid is None else facts.mid,
        "" if facts.spread is None else facts.spread,
        facts.log_return,
        facts.price_impact,
        facts.direction,
    ]
    for n in levels:
        key = level_key(n)
        row += [
            facts.imbalance[key],
            facts.volume_bid[key],
            facts.volume_ask[key],
            facts.volume[key],
        ]
    return row
