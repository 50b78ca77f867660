"""Multi-venue continuous double auction with price-time priority.

Prices are integer ticks throughout; no floating point touches the engine,
so fill logs are bit-exact and conservation checks are exact. Matching
trades at the resting order's price, best price first, FIFO within a price
level. Market-order remainders never rest. An iceberg exposes at most its
display quantity; an exhausted tranche refreshes at the back of its price
level with a fresh sequence number.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

from .errors import DUPLICATE_ORDER_ID, REJECTED, UNKNOWN_INSTRUMENT, UNKNOWN_VENUE, ServiceError

BUY = "BUY"
SELL = "SELL"
LIMIT = "LIMIT"
MARKET = "MARKET"
GTC = "GTC"
IOC = "IOC"


@dataclass
class Order:
    order_id: str
    agent_id: str
    venue_id: str
    instrument: str
    side: str
    kind: str
    qty: int
    price: int | None = None
    time_in_force: str = GTC
    display_qty: int | None = None

    def validate(self) -> None:
        if self.side not in (BUY, SELL) or self.kind not in (LIMIT, MARKET):
            raise ServiceError(REJECTED, "bad side or kind")
        if self.time_in_force not in (GTC, IOC):
            raise ServiceError(REJECTED, "bad time_in_force")
        if not isinstance(self.qty, int) or self.qty <= 0:
            raise ServiceError(REJECTED, "qty must be a positive integer")
        if self.kind == LIMIT:
            if not isinstance(self.price, int) or self.price <= 0:
                raise ServiceError(REJECTED, "limit order needs price > 0")
        elif self.price is not None:
            raise ServiceError(REJECTED, "market order must not carry a price")
        if self.display_qty is not None:
            if not isinstance(self.display_qty, int) or self.display_qty <= 0 or self.display_qty > self.qty:
                raise ServiceError(REJECTED, "display_qty must be in 1..qty")


@dataclass
class Fill:
    trade_id: str
    buy_order_id: str
    sell_order_id: str
    price: int
    qty: int
    ts: int

    def to_json(self) -> dict:
        return {
            "trade_id": self.trade_id,
            "buy_order_id": self.buy_order_id,
            "sell_order_id": self.sell_order_id,
            "price": self.price,
            "qty": self.qty,
            "ts": self.ts,
        }


@dataclass
class _Resting:
    order_id: str
    agent_id: str
    side: str
    price: int
    qty: int  # total remaining, hidden included
    visible: int
    display: int | None
    ts: int


@dataclass
class PlaceResult:
    fills: list[Fill]
    resting_qty: int  # 0 when nothing rested


class OrderBook:
    """One venue's book for one instrument."""

    def __init__(self, venue_id: str, instrument: str):
        self.venue_id = venue_id
        self.instrument = instrument
        self._bids: dict[int, list[_Resting]] = {}
        self._asks: dict[int, list[_Resting]] = {}
        self._bid_prices: list[int] = []  # ascending; best bid is the last
        self._ask_prices: list[int] = []  # ascending; best ask is the first
        self._seen_ids: set[str] = set()
        self._seq = 0
        self._trade_seq = 0

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    # -- queries -----------------------------------------------------------

    def best_bid(self) -> tuple[int, int] | None:
        if not self._bid_prices:
            return None
        price = self._bid_prices[-1]
        return price, sum(o.visible for o in self._bids[price])

    def best_ask(self) -> tuple[int, int] | None:
        if not self._ask_prices:
            return None
        price = self._ask_prices[0]
        return price, sum(o.visible for o in self._asks[price])

    def depth(self, side: str) -> list[tuple[int, int]]:
        """Visible quantity per price level, in matching priority order."""
        if side == BUY:
            return [(p, sum(o.visible for o in self._bids[p])) for p in reversed(self._bid_prices)]
        return [(p, sum(o.visible for o in self._asks[p])) for p in self._ask_prices]

    def resting_order_ids(self, agent_id: str | None = None) -> list[str]:
        ids = []
        for levels in (self._bids, self._asks):
            for queue in levels.values():
                for o in queue:
                    if agent_id is None or o.agent_id == agent_id:
                        ids.append(o.order_id)
        return ids

    def resting_qty(self, order_id: str) -> int:
        for levels in (self._bids, self._asks):
            for queue in levels.values():
                for o in queue:
                    if o.order_id == order_id:
                        return o.qty
        return 0

    # -- mutations -----------------------------------------------------------

    def place(self, order: Order) -> PlaceResult:
        order.validate()
        if order.instrument != self.instrument:
            raise ServiceError(UNKNOWN_INSTRUMENT, f"book is for {self.instrument}")
        if order.order_id in self._seen_ids:
            raise ServiceError(DUPLICATE_ORDER_ID, order.order_id)
        self._seen_ids.add(order.order_id)
        arrival_ts = self._next_seq()

        opposite = self._asks if order.side == BUY else self._bids
        fills: list[Fill] = []
        qty_left = order.qty
        while qty_left > 0:
            price = self._best_opposite_price(order.side)
            if price is None or not self._price_crosses(order, price):
                break
            queue = opposite[price]
            head = queue[0]
            take = min(qty_left, head.visible)
            self._trade_seq += 1
            buy_id, sell_id = (order.order_id, head.order_id) if order.side == BUY else (head.order_id, order.order_id)
            fills.append(Fill(f"T{self._trade_seq}", buy_id, sell_id, price, take, arrival_ts))
            qty_left -= take
            head.visible -= take
            head.qty -= take
            if head.visible == 0:
                queue.pop(0)
                if head.qty > 0:  # iceberg refresh: back of the level, new seq
                    head.visible = min(head.display, head.qty)
                    head.ts = self._next_seq()
                    queue.append(head)
                elif not queue:
                    self._drop_level(SELL if order.side == BUY else BUY, price)

        resting_qty = 0
        if qty_left > 0 and order.kind == LIMIT and order.time_in_force == GTC:
            resting = _Resting(
                order_id=order.order_id,
                agent_id=order.agent_id,
                side=order.side,
                price=order.price,
                qty=qty_left,
                visible=min(order.display_qty, qty_left) if order.display_qty else qty_left,
                display=order.display_qty,
                ts=arrival_ts,
            )
            self._add_resting(resting)
            resting_qty = qty_left
        return PlaceResult(fills=fills, resting_qty=resting_qty)

    def cancel(self, order_id: str) -> str:
        """Remove a resting order. Idempotent: NOT_RESTING when absent."""
        for side, levels, prices in ((BUY, self._bids, self._bid_prices), (SELL, self._asks, self._ask_prices)):
            for price, queue in levels.items():
                for i, o in enumerate(queue):
                    if o.order_id == order_id:
                        queue.pop(i)
                        if not queue:
                            self._drop_level(side, price)
                        return "CANCELLED"
        return "NOT_RESTING"

    # -- internals -----------------------------------------------------------

    def _best_opposite_price(self, side: str) -> int | None:
        if side == BUY:
            return self._ask_prices[0] if self._ask_prices else None
        return self._bid_prices[-1] if self._bid_prices else None

    def _price_crosses(self, order: Order, best: int) -> bool:
        if order.kind == MARKET:
            return True
        return best <= order.price if order.side == BUY else best >= order.price

    def _add_resting(self, resting: _Resting) -> None:
        levels = self._bids if resting.side == BUY else self._asks
        prices = self._bid_prices if resting.side == BUY else self._ask_prices
        if resting.price not in levels:
            levels[resting.price] = []
            bisect.insort(prices, resting.price)
        levels[resting.price].append(resting)

    def _drop_level(self, side: str, price: int) -> None:
        levels = self._bids if side == BUY else self._asks
        prices = self._bid_prices if side == BUY else self._ask_prices
        if price in levels and not levels[price]:
            del levels[price]
            prices.pop(bisect.bisect_left(prices, price))

    def assert_uncrossed(self) -> None:
        bid, ask = self.best_bid(), self.best_ask()
        if bid and ask and bid[0] >= ask[0]:
            raise AssertionError(f"crossed book: bid {bid[0]} >= ask {ask[0]}")


class Venue:
    """One venue: an order book per configured instrument."""

    def __init__(self, venue_id: str, instruments: list[str]):
        self.venue_id = venue_id
        self.books = {inst: OrderBook(venue_id, inst) for inst in instruments}

    def book(self, instrument: str) -> OrderBook:
        book = self.books.get(instrument)
        if book is None:
            raise ServiceError(UNKNOWN_INSTRUMENT, f"venue {self.venue_id} does not list {instrument}")
        return book

    def place(self, order: Order) -> PlaceResult:
        return self.book(order.instrument).place(order)

    def cancel(self, instrument: str, order_id: str) -> str:
        return self.book(instrument).cancel(order_id)


class Exchange:
    """All venues together, plus best-execution venue scoring."""

    def __init__(self, venue_ids: list[str], instruments: list[str]):
        self.instruments = list(instruments)
        self.venues = {vid: Venue(vid, instruments) for vid in venue_ids}

    def venue(self, venue_id: str) -> Venue:
        venue = self.venues.get(venue_id)
        if venue is None:
            raise ServiceError(UNKNOWN_VENUE, f"no venue {venue_id}")
        return venue

    def place(self, order: Order) -> PlaceResult:
        return self.venue(order.venue_id).place(order)

    def cancel(self, venue_id: str, instrument: str, order_id: str) -> str:
        return self.venue(venue_id).cancel(instrument, order_id)

    def scan_agent_orders(self, agent_id: str) -> list[tuple[str, str, str]]:
        """(venue, instrument, order_id) for every resting order of an agent."""
        found = []
        for vid in sorted(self.venues):
            for inst, book in sorted(self.venues[vid].books.items()):
                for oid in book.resting_order_ids(agent_id):
                    found.append((vid, inst, oid))
        return found


def venue_score(books: list[OrderBook], side: str, qty: int) -> list[tuple[str, int, int]]:
    """Rank venues for an intent to trade ``qty`` on ``side``.

    Walks the opposite side of each book: fillable quantity first (more is
    better), then notional cost of the walk (cheaper is better for a buyer,
    richer proceeds for a seller), then venue id. Liquidity and price are
    judged together; neither alone decides the ranking.
    """
    if not books:
        raise ServiceError(REJECTED, "venue_score needs at least one book")
    opposite = SELL if side == BUY else BUY
    scored = []
    for book in books:
        fillable = 0
        notional = 0
        for price, level_qty in book.depth(opposite):
            take = min(qty - fillable, level_qty)
            fillable += take
            notional += price * take
            if fillable == qty:
                break
        scored.append((book.venue_id, fillable, notional))
    cost_order = 1 if side == BUY else -1
    scored.sort(key=lambda t: (-t[1], cost_order * t[2], t[0]))
    return scored
