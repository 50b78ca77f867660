"""Trading agent templates and the intention compiler.

Every decide function is pure: same view and params, same order list,
bit for bit. That is what makes seeded sessions replayable. Params arrive
as a flat string map (the registration wire format) and are parsed here.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import BAD_REQUEST, MISSING_PRICE, UNKNOWN_CODE_REF, ServiceError
from .exchange import BUY, GTC, IOC, LIMIT, MARKET, SELL


@dataclass(frozen=True)
class OrderRequest:
    instrument: str
    side: str
    kind: str
    qty: int
    price: int | None = None
    venue_id: str | None = None  # None lets the server route to the best venue
    time_in_force: str = GTC
    display_qty: int | None = None


@dataclass(frozen=True)
class CancelRequest:
    venue_id: str
    instrument: str
    order_id: str


@dataclass
class AgentView:
    """Everything one agent may see: its own book-keeping plus public market
    data. ``charge`` accrues simulated compute cost against the tick budget."""

    tick: int
    position: dict[str, int]
    cash: int
    open_orders: list[dict]
    md: dict[tuple[str, str], dict]  # (venue, instrument) -> market data event
    history: dict[str, tuple[int, ...]]  # instrument -> recent trade prices
    charged_ms: float = 0.0

    def charge(self, ms: float) -> None:
        self.charged_ms += ms

    def best_ask(self, instrument: str) -> tuple[str, int, int] | None:
        """Lowest ask across venues as (venue, price, qty); ties pick the
        lexically first venue."""
        best = None
        for (venue, inst), event in sorted(self.md.items()):
            if inst != instrument or not event.get("best_ask"):
                continue
            price, qty = event["best_ask"]
            if best is None or price < best[1]:
                best = (venue, price, qty)
        return best

    def best_bid(self, instrument: str) -> tuple[str, int, int] | None:
        best = None
        for (venue, inst), event in sorted(self.md.items()):
            if inst != instrument or not event.get("best_bid"):
                continue
            price, qty = event["best_bid"]
            if best is None or price > best[1]:
                best = (venue, price, qty)
        return best


def _p_int(params: dict, key: str, default: int | None = None) -> int:
    if key not in params:
        if default is None:
            raise ServiceError(BAD_REQUEST, f"missing agent param {key}")
        return default
    return int(params[key])

def _p_str(params: dict, key: str, default: str | None = None) -> str:
    if key not in params:
        if default is None:
            raise ServiceError(BAD_REQUEST, f"missing agent param {key}")
        return default
    return str(params[key])


def greedy_decide(view: AgentView, params: dict) -> list:
    """Buy toward a target inventory, taking whatever the best ask shows."""
    instrument = _p_str(params, "instrument")
    target = _p_int(params, "target_qty")
    position = view.position.get(instrument, 0)
    if position >= target:
        return []
    ask = view.best_ask(instrument)
    if ask is None:
        return []
    venue, price, qty = ask
    take = min(target - position, qty)
    if take <= 0:
        return []
    return [OrderRequest(instrument, BUY, LIMIT, take, price=price, venue_id=venue, time_in_force=IOC)]


def value_decide(view: AgentView, params: dict) -> list:
    """Buy below fair value minus the band, sell above it plus the band."""
    instrument = _p_str(params, "instrument")
    fair = _p_int(params, "fair_value")
    band = _p_int(params, "band")
    clip = _p_int(params, "clip")
    if band <= 0:
        raise ServiceError(BAD_REQUEST, "band must be > 0")
    ask = view.best_ask(instrument)
    if ask is not None and ask[1] < fair - band:
        return [OrderRequest(instrument, BUY, LIMIT, clip, price=ask[1], venue_id=ask[0])]
    bid = view.best_bid(instrument)
    if bid is not None and bid[1] > fair + band:
        return [OrderRequest(instrument, SELL, LIMIT, clip, price=bid[1], venue_id=bid[0])]
    return []


def trend_decide(view: AgentView, params: dict) -> list:
    """Chase breakouts: market-buy a fresh high, market-sell a fresh low over
    the last ``window`` trades. Silent until the window has filled."""
    instrument = _p_str(params, "instrument")
    window = _p_int(params, "window")
    clip = _p_int(params, "clip")
    if window < 2:
        raise ServiceError(BAD_REQUEST, "window must be >= 2")
    history = view.history.get(instrument, ())
    if len(history) < window:
        return []
    last = history[-1]
    previous = history[-window:-1]
    if last > max(previous):
        ask = view.best_ask(instrument)
        if ask is None:
            return []
        return [OrderRequest(instrument, BUY, MARKET, clip, venue_id=ask[0])]
    if last < min(previous):
        bid = view.best_bid(instrument)
        if bid is None:
            return []
        return [OrderRequest(instrument, SELL, MARKET, clip, venue_id=bid[0])]
    return []


def maker_decide(view: AgentView, params: dict) -> list:
    """Two-sided quoter around a seeded random walk; replaces its quotes every
    tick. This is what gives a seeded session its price movement."""
    instrument = _p_str(params, "instrument")
    base = _p_int(params, "base_price")
    spread = _p_int(params, "spread", 2)
    qty = _p_int(params, "qty", 10)
    amp = _p_int(params, "amp", 3)
    seed = _p_str(params, "seed", "0")
    venue = params.get("venue")

    wobble = _hash_int(f"{seed}:{view.tick}") % (2 * amp + 1) - amp
    mid = max(spread + 1, base + wobble)
    actions: list = [
        CancelRequest(o["venue_id"], o["instrument"], o["order_id"])
        for o in view.open_orders
        if o["instrument"] == instrument
    ]
    if venue is None:
        venue = min(v for v, _ in view.md) if view.md else None
    if venue is None:
        return actions
    actions.append(OrderRequest(instrument, BUY, LIMIT, qty, price=mid - spread, venue_id=venue))
    actions.append(OrderRequest(instrument, SELL, LIMIT, qty, price=mid + spread, venue_id=venue))
    return actions


def idle_decide(view: AgentView, params: dict) -> list:
    """Never trades on its own; for agents steered manually over the wire."""
    return []


def faulty_decide(view: AgentView, params: dict) -> list:
    raise RuntimeError("template failure (deliberate)")


def sleeper_decide(view: AgentView, params: dict) -> list:
    view.charge(float(params.get("sleep_ms", "1000")))
    return []


AGENT_TEMPLATES = {
    "greedy": greedy_decide,
    "value": value_decide,
    "trend": trend_decide,
    "maker": maker_decide,
    "idle": idle_decide,
    "faulty": faulty_decide,   # test-only: always raises
    "sleeper": sleeper_decide, # test-only: always blows the tick budget
}


def resolve_agent_template(name: str):
    fn = AGENT_TEMPLATES.get(name)
    if fn is None:
        raise ServiceError(UNKNOWN_CODE_REF, f"no agent template {name!r}")
    return fn


def _hash_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


# -- intentions ---------------------------------------------------------------

SHIFT_CLASS = "SHIFT_CLASS"
REBALANCE_SECTOR = "REBALANCE_SECTOR"


@dataclass
class Intention:
    """A higher-level instruction than an order: move between asset classes
    or steer sector weights. Compiled to concrete orders against a price map."""

    kind: str
    from_class: str | None = None
    to_class: str | None = None
    fraction: float | None = None
    targets: dict[str, float] = field(default_factory=dict)
    max_order_qty: int | None = None

    def validate(self) -> None:
        if self.kind == SHIFT_CLASS:
            if not self.from_class or not self.to_class:
                raise ServiceError(BAD_REQUEST, "shift needs from_class and to_class")
            if self.fraction is None or not 0.0 < self.fraction <= 1.0:
                raise ServiceError(BAD_REQUEST, "fraction must be in (0, 1]")
        elif self.kind == REBALANCE_SECTOR:
            if not self.targets:
                raise ServiceError(BAD_REQUEST, "rebalance needs target weights")
            for weight in self.targets.values():
                if not 0.0 < weight <= 1.0:
                    raise ServiceError(BAD_REQUEST, "weights must be in (0, 1]")
            if sum(self.targets.values()) > 1.0 + 1e-9:
                raise ServiceError(BAD_REQUEST, "weights must sum to at most 1")
        else:
            raise ServiceError(BAD_REQUEST, f"unknown intention kind {self.kind!r}")


def compile_intention(intention: Intention, portfolio: dict[str, int], prices: dict[str, int],
                      classes: dict[str, str]) -> list[OrderRequest]:
    """Turn an intention into orders, sells before buys, whole units only,
    clipped per order by ``max_order_qty``. Buys spend only realized proceeds."""
    intention.validate()
    for instrument, qty in portfolio.items():
        if qty != 0 and instrument not in prices:
            raise ServiceError(MISSING_PRICE, f"no price for held {instrument}")

    if intention.kind == SHIFT_CLASS:
        return _compile_shift(intention, portfolio, prices, classes)
    return _compile_rebalance(intention, portfolio, prices, classes)


def _clip(qty: int, intention: Intention) -> int:
    if intention.max_order_qty is not None:
        return min(qty, intention.max_order_qty)
    return qty


def _compile_shift(intention, portfolio, prices, classes) -> list[OrderRequest]:
    orders = []
    proceeds = 0
    for instrument in sorted(portfolio):
        qty = portfolio[instrument]
        if qty <= 0 or classes.get(instrument) != intention.from_class:
            continue
        sell_units = _clip(int(intention.fraction * qty), intention)
        if sell_units <= 0:
            continue
        proceeds += sell_units * prices[instrument]
        orders.append(OrderRequest(instrument, SELL, MARKET, sell_units))
    targets = sorted(i for i, c in classes.items() if c == intention.to_class)
    if not targets or proceeds <= 0:
        return orders
    target = targets[0]
    if target not in prices:
        raise ServiceError(MISSING_PRICE, f"no price for {target}")
    buy_units = _clip(proceeds // prices[target], intention)
    if buy_units > 0:
        orders.append(OrderRequest(target, BUY, MARKET, buy_units))
    return orders


def _compile_rebalance(intention, portfolio, prices, classes) -> list[OrderRequest]:
    total = sum(qty * prices[inst] for inst, qty in portfolio.items() if qty != 0)
    current: dict[str, int] = {}
    for instrument, qty in portfolio.items():
        if qty == 0:
            continue
        sector = classes.get(instrument)
        if sector is not None:
            current[sector] = current.get(sector, 0) + qty * prices[instrument]

    sells: list[OrderRequest] = []
    proceeds = 0
    for sector in sorted(intention.targets):
        target_notional = intention.targets[sector] * total
        excess = current.get(sector, 0) - target_notional
        if excess <= 0:
            continue
        for instrument in sorted(i for i, c in classes.items() if c == sector):
            held = portfolio.get(instrument, 0)
            if held <= 0 or excess <= 0:
                continue
            price = prices[instrument]
            units = _clip(min(held, int(excess // price)), intention)
            if units <= 0:
                continue
            sells.append(OrderRequest(instrument, SELL, MARKET, units))
            proceeds += units * price
            excess -= units * price

    buys: list[OrderRequest] = []
    budget = proceeds
    for sector in sorted(intention.targets):
        target_notional = intention.targets[sector] * total
        shortfall = target_notional - current.get(sector, 0)
        if shortfall <= 0 or budget <= 0:
            continue
        instruments = sorted(i for i, c in classes.items() if c == sector)
        if not instruments:
            continue
        instrument = instruments[0]
        if instrument not in prices:
            raise ServiceError(MISSING_PRICE, f"no price for {instrument}")
        price = prices[instrument]
        units = _clip(int(min(shortfall, budget) // price), intention)
        if units <= 0:
            continue
        buys.append(OrderRequest(instrument, BUY, MARKET, units))
        budget -= units * price
    return sells + buys
