import pytest
from hypothesis import given, settings, strategies as st

from oracles import ReferenceBook
from tradecase.errors import DUPLICATE_ORDER_ID, UNKNOWN_INSTRUMENT, ServiceError
from tradecase.exchange import (
    BUY,
    GTC,
    IOC,
    LIMIT,
    MARKET,
    Order,
    OrderBook,
    SELL,
    venue_score,
)


def mk(order_id, side, kind, qty, price=None, tif=GTC, display=None, agent="a"):
    return Order(order_id=order_id, agent_id=agent, venue_id="V1", instrument="STK",
                 side=side, kind=kind, qty=qty, price=price, time_in_force=tif,
                 display_qty=display)


@pytest.fixture
def book():
    return OrderBook("V1", "STK")


class TestMatching:
    def test_symmetric_cross_empties_book(self, book):
        assert book.place(mk("b1", BUY, LIMIT, 10, 100)).fills == []
        result = book.place(mk("s1", SELL, LIMIT, 10, 100))
        assert len(result.fills) == 1
        fill = result.fills[0]
        assert (fill.price, fill.qty) == (100, 10)
        assert (fill.buy_order_id, fill.sell_order_id) == ("b1", "s1")
        assert book.best_bid() is None and book.best_ask() is None

    def test_market_sweeps_fifo_within_level(self, book):
        book.place(mk("s1", SELL, LIMIT, 5, 100))
        book.place(mk("s2", SELL, LIMIT, 5, 100))
        result = book.place(mk("b1", BUY, MARKET, 7))
        assert [(f.sell_order_id, f.qty, f.price) for f in result.fills] == [
            ("s1", 5, 100), ("s2", 2, 100)]
        assert book.best_ask() == (100, 3)

    def test_no_overlap_rests(self, book):
        book.place(mk("s1", SELL, LIMIT, 10, 100))
        result = book.place(mk("b1", BUY, LIMIT, 10, 99))
        assert result.fills == [] and result.resting_qty == 10
        assert book.best_bid() == (99, 10) and book.best_ask() == (100, 10)

    def test_trades_at_resting_price(self, book):
        book.place(mk("s1", SELL, LIMIT, 10, 100))
        result = book.place(mk("b1", BUY, LIMIT, 10, 105))
        assert result.fills[0].price == 100

    def test_ioc_remainder_cancels(self, book):
        book.place(mk("s1", SELL, LIMIT, 4, 100))
        result = book.place(mk("b1", BUY, LIMIT, 10, 100, tif=IOC))
        assert result.fills[0].qty == 4 and result.resting_qty == 0
        assert book.best_bid() is None

    def test_market_remainder_cancels(self, book):
        result = book.place(mk("b1", BUY, MARKET, 10))
        assert result.fills == [] and result.resting_qty == 0
        assert book.best_bid() is None

    def test_price_priority_before_time(self, book):
        book.place(mk("s1", SELL, LIMIT, 5, 101))
        book.place(mk("s2", SELL, LIMIT, 5, 100))
        result = book.place(mk("b1", BUY, MARKET, 10))
        assert [(f.sell_order_id, f.price) for f in result.fills] == [("s2", 100), ("s1", 101)]

    def test_duplicate_order_id_rejected(self, book):
        book.place(mk("x", BUY, LIMIT, 1, 100))
        with pytest.raises(ServiceError) as err:
            book.place(mk("x", SELL, LIMIT, 1, 101))
        assert err.value.code == DUPLICATE_ORDER_ID

    def test_wrong_instrument_rejected(self, book):
        bad = mk("y", BUY, LIMIT, 1, 100)
        bad.instrument = "BND"
        with pytest.raises(ServiceError) as err:
            book.place(bad)
        assert err.value.code == UNKNOWN_INSTRUMENT


class TestIceberg:
    def test_only_display_qty_visible(self, book):
        book.place(mk("ice", SELL, LIMIT, 30, 100, display=10))
        assert book.best_ask() == (100, 10)

    def test_refresh_goes_to_back_of_level(self, book):
        book.place(mk("ice", SELL, LIMIT, 20, 100, display=10))
        book.place(mk("s2", SELL, LIMIT, 5, 100))
        r1 = book.place(mk("b1", BUY, MARKET, 12))
        # ice shows 10, s2 queued behind; after ice's tranche empties it
        # refreshes BEHIND s2
        assert [(f.sell_order_id, f.qty) for f in r1.fills] == [("ice", 10), ("s2", 2)]
        r2 = book.place(mk("b2", BUY, MARKET, 13))
        assert [(f.sell_order_id, f.qty) for f in r2.fills] == [("s2", 3), ("ice", 10)]

    def test_single_aggressor_eats_through_refreshes(self, book):
        book.place(mk("ice", SELL, LIMIT, 30, 100, display=10))
        result = book.place(mk("b1", BUY, LIMIT, 25, 100))
        assert [f.qty for f in result.fills] == [10, 10, 5]
        assert all(f.sell_order_id == "ice" for f in result.fills)
        assert book.best_ask() == (100, 5)


class TestCancel:
    def test_cancel_resting_updates_quote(self, book):
        book.place(mk("s1", SELL, LIMIT, 10, 100))
        book.place(mk("s2", SELL, LIMIT, 10, 101))
        assert book.cancel("s1") == "CANCELLED"
        assert book.best_ask() == (101, 10)

    def test_cancel_unknown_idempotent(self, book):
        book.place(mk("s1", SELL, LIMIT, 10, 100))
        assert book.cancel("nope") == "NOT_RESTING"
        assert book.cancel("s1") == "CANCELLED"
        assert book.cancel("s1") == "NOT_RESTING"
        assert book.best_ask() is None

    def test_cancel_partially_filled_removes_remainder(self, book):
        book.place(mk("s1", SELL, LIMIT, 10, 100))
        book.place(mk("b1", BUY, LIMIT, 4, 100))
        assert book.resting_qty("s1") == 6
        assert book.cancel("s1") == "CANCELLED"
        assert book.best_ask() is None


class TestVenueScore:
    def test_cheaper_same_liquidity_wins(self):
        x, y = OrderBook("X", "STK"), OrderBook("Y", "STK")
        x.place(mk("a", SELL, LIMIT, 10, 100))
        y.place(mk("b", SELL, LIMIT, 10, 101))
        assert venue_score([x, y], BUY, 10) == [("X", 10, 1000), ("Y", 10, 1010)]

    def test_liquidity_beats_price(self):
        """The combination rule: a venue that can fill everything outranks a
        cheaper venue that cannot."""
        x, y = OrderBook("X", "STK"), OrderBook("Y", "STK")
        x.place(mk("a", SELL, LIMIT, 5, 100))
        y.place(mk("b", SELL, LIMIT, 10, 102))
        assert venue_score([x, y], BUY, 10) == [("Y", 10, 1020), ("X", 5, 500)]

    def test_identical_books_tie_on_venue_id(self):
        x, y = OrderBook("X", "STK"), OrderBook("Y", "STK")
        for book, oid in ((y, "a"), (x, "b")):
            book.place(mk(oid, SELL, LIMIT, 10, 100))
        assert [v for v, _, _ in venue_score([y, x], BUY, 5)] == ["X", "Y"]

    def test_sell_intent_prefers_higher_proceeds(self):
        x, y = OrderBook("X", "STK"), OrderBook("Y", "STK")
        x.place(mk("a", BUY, LIMIT, 10, 99))
        y.place(mk("b", BUY, LIMIT, 10, 100))
        assert venue_score([x, y], SELL, 10) == [("Y", 10, 1000), ("X", 10, 990)]


# -- oracle equivalence ----------------------------------------------------------

def random_events(rng, n_events, prices=(99, 100, 101)):
    events = []
    for i in range(n_events):
        if events and rng.random() < 0.12:
            target = rng.choice(events)
            events.append(("cancel", target[1]))
            continue
        side = rng.choice([BUY, SELL])
        kind = MARKET if rng.random() < 0.2 else LIMIT
        qty = rng.randint(1, 20)
        price = rng.choice(prices) if kind == LIMIT else None
        tif = IOC if kind == LIMIT and rng.random() < 0.2 else GTC
        display = rng.randint(1, qty) if kind == LIMIT and tif == GTC and rng.random() < 0.2 else None
        events.append(("place", f"o{i}", side, kind, qty, price, tif, display))
    return events


def replay_both(events):
    book = OrderBook("V1", "STK")
    ref = ReferenceBook()
    engine_fills = []
    for event in events:
        if event[0] == "cancel":
            assert book.cancel(event[1]) == ref.cancel(event[1])
            continue
        _, oid, side, kind, qty, price, tif, display = event
        result = book.place(Order(order_id=oid, agent_id="a", venue_id="V1",
                                  instrument="STK", side=side, kind=kind, qty=qty,
                                  price=price, time_in_force=tif, display_qty=display))
        ref.place(oid, "a", side, kind, qty, price, tif, display)
        engine_fills.extend(f.to_json() for f in result.fills)
        book.assert_uncrossed()
        bb, ba = book.best_bid(), book.best_ask()
        assert (bb[0] if bb else None) == ref.best_bid()
        assert (ba[0] if ba else None) == ref.best_ask()
    return engine_fills, ref.fills


def test_oracle_equivalence_sample(rng):
    for _ in range(50):
        events = random_events(rng, rng.randint(1, 200))
        engine_fills, ref_fills = replay_both(events)
        assert engine_fills == ref_fills


def test_conservation_per_trade(rng):
    events = random_events(rng, 300)
    engine_fills, _ = replay_both(events)
    for fill in engine_fills:
        assert fill["qty"] > 0
        assert fill["price"] in (99, 100, 101)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([BUY, SELL]), st.integers(99, 101),
                          st.integers(1, 15)), max_size=40))
def test_never_crossed_property(orders):
    book = OrderBook("V1", "STK")
    for i, (side, price, qty) in enumerate(orders):
        book.place(mk(f"h{i}", side, LIMIT, qty, price))
        book.assert_uncrossed()


def test_determinism_same_stream_same_log(rng):
    events = random_events(rng, 150)
    first, _ = replay_both(events)
    second, _ = replay_both(events)
    assert first == second
