import pytest

from oracles import token_bucket_trace
from tradecase.agents import OrderRequest
from tradecase.auth import TokenTable
from tradecase.errors import UNAUTHORIZED, UNKNOWN_AGENT, UNKNOWN_CODE_REF, ServiceError
from tradecase.exchange import BUY, LIMIT, MARKET, SELL
from tradecase.tradeserver import BROKER_ONLY, TradeServer, TradeServerFrontend

TOKENS = TokenTable({
    "tok-alice": ("alice", "owner"),
    "tok-bob": ("bob", "owner"),
    "tok-broker": ("desk", "broker"),
})


def server(**kw):
    kw.setdefault("venues", ["V1", "V2", "V3"])
    kw.setdefault("instruments", ["STK"])
    kw.setdefault("tokens", TOKENS)
    return TradeServer(**kw)


def buy(qty=1, price=100, venue="V1", kind=LIMIT):
    return OrderRequest("STK", BUY, kind, qty, price=price if kind == LIMIT else None, venue_id=venue)


def sell(qty=1, price=100, venue="V1", kind=LIMIT):
    return OrderRequest("STK", SELL, kind, qty, price=price if kind == LIMIT else None, venue_id=venue)


class TestRegistration:
    def test_register_starts_with_full_bucket_and_flat_book(self):
        srv = server()
        h = srv.register_agent("alice", "greedy", {"instrument": "STK", "target_qty": "5"}, 1000)
        assert h.tokens == srv.bucket_capacity
        assert h.position == {} and h.open_orders == {}

    def test_unknown_template_rejected(self):
        with pytest.raises(ServiceError) as err:
            server().register_agent("alice", "wizard", {}, 1000)
        assert err.value.code == UNKNOWN_CODE_REF

    def test_bad_token_rejected_at_frontend(self):
        front = TradeServerFrontend(server())
        reply = front.handle_frame({"type": "REGISTER", "request_id": "r1",
                                    "payload": {"token": "nope", "code_ref": "greedy"}})
        assert reply["type"] == "ERROR" and reply["payload"]["code"] == UNAUTHORIZED


class TestRateLimiting:
    def test_capacity_then_rate_limited(self):
        srv = server()
        h = srv.register_agent("alice", "idle", {}, 10**9)
        results = [srv.submit_order(h.agent_id, buy(price=100 + i))["status"] for i in range(11)]
        assert results[:10] == ["ACK"] * 10
        assert results[10] == "RATE_LIMITED"

    def test_refill_per_tick(self):
        srv = server()
        h = srv.register_agent("alice", "idle", {}, 10**9)
        for i in range(10):
            srv.submit_order(h.agent_id, buy(price=10 + i))
        srv.run_tick()
        results = [srv.submit_order(h.agent_id, buy(price=30 + i))["status"] for i in range(6)]
        assert results == ["ACK"] * 5 + ["RATE_LIMITED"]

    def test_forwarded_counts_match_bucket_oracle(self):
        srv = server(bucket_capacity=10, bucket_refill=5)
        h = srv.register_agent("alice", "idle", {}, 10**12)
        attempts = [12, 0, 3, 9, 9, 1, 14, 7]
        forwarded = []
        for n in attempts:
            srv.run_tick()
            acks = sum(
                srv.submit_order(h.agent_id, buy(price=50 + i))["status"] == "ACK"
                for i in range(n)
            )
            forwarded.append(acks)
        assert forwarded == token_bucket_trace(10, 5, attempts)


class TestOrderValidation:
    def test_zero_qty_rejected(self):
        srv = server()
        h = srv.register_agent("alice", "idle", {}, 1000)
        assert srv.submit_order(h.agent_id, buy(qty=0))["reason"] == "BAD_QTY"

    def test_quarantined_agent_rejected(self):
        srv = server()
        h = srv.register_agent("alice", "faulty", {}, 1000)
        srv.run_tick()  # faults and is quarantined
        result = srv.submit_order(h.agent_id, buy())
        assert result == {"status": "REJECTED", "reason": "QUARANTINED"}

    def test_insufficient_cash_rejected(self):
        srv = server()
        h = srv.register_agent("alice", "idle", {}, 99)
        assert srv.submit_order(h.agent_id, buy(qty=1, price=100))["reason"] == "INSUFFICIENT_CASH"
        assert srv.submit_order(h.agent_id, buy(qty=1, price=99))["status"] == "ACK"

    def test_unknown_instrument_and_venue(self):
        srv = server()
        h = srv.register_agent("alice", "idle", {}, 1000)
        bad_inst = OrderRequest("BTC", BUY, LIMIT, 1, price=1, venue_id="V1")
        assert srv.submit_order(h.agent_id, bad_inst)["reason"] == "UNKNOWN_INSTRUMENT"
        bad_venue = OrderRequest("STK", BUY, LIMIT, 1, price=1, venue_id="V9")
        assert srv.submit_order(h.agent_id, bad_venue)["reason"] == "UNKNOWN_VENUE"


class TestAccounting:
    def test_fills_move_cash_and_position_symmetrically(self):
        srv = server()
        a = srv.register_agent("alice", "idle", {}, 10_000)
        b = srv.register_agent("bob", "idle", {}, 10_000)
        srv.submit_order(a.agent_id, sell(qty=5, price=100))
        srv.submit_order(b.agent_id, buy(qty=5, price=100))
        assert a.position == {"STK": -5} and a.cash == 10_500
        assert b.position == {"STK": 5} and b.cash == 9_500
        assert a.position["STK"] + b.position["STK"] == 0

    def test_cash_changes_only_through_own_fills(self):
        srv = server()
        a = srv.register_agent("alice", "idle", {}, 10_000)
        b = srv.register_agent("bob", "idle", {}, 10_000)
        c = srv.register_agent("bob", "idle", {}, 10_000)
        srv.submit_order(a.agent_id, sell(qty=5, price=100))
        srv.submit_order(b.agent_id, buy(qty=5, price=100))
        for _ in range(3):
            srv.run_tick()
        assert c.cash == 10_000 and c.position == {}


class TestContainment:
    def test_faulty_quarantined_healthy_keeps_trading(self):
        srv = server(venues=["V1"])
        maker = srv.register_agent("alice", "maker",
                                   {"instrument": "STK", "base_price": "100", "seed": "x"}, 10**9)
        faulty = srv.register_agent("bob", "faulty", {}, 1000)
        greedy = srv.register_agent("alice", "greedy",
                                    {"instrument": "STK", "target_qty": "4"}, 10**6)
        r1 = srv.run_tick()
        assert [c["agent_id"] for c in r1["containment"]] == [faulty.agent_id]
        assert faulty.quarantined
        r2 = srv.run_tick()
        assert r2["containment"] == []
        assert greedy.position.get("STK", 0) > 0  # healthy agent actually traded

    def test_sleeper_quarantined_for_timeout(self):
        srv = server()
        sleeper = srv.register_agent("alice", "sleeper", {}, 1000)
        report = srv.run_tick()
        assert report["containment"][0]["reason"] == "TIMEOUT"
        assert sleeper.quarantined

    def test_quarantine_cancels_resting_orders(self):
        srv = server()
        h = srv.register_agent("alice", "faulty", {}, 10**6)
        srv.submit_order(h.agent_id, buy(qty=3, price=90, venue="V1"))
        srv.submit_order(h.agent_id, buy(qty=3, price=91, venue="V2"))
        assert len(h.open_orders) == 2
        report = srv.run_tick()
        assert sorted(report["containment"][0]["cancelled_orders"]) == sorted(
            oid for oid in srv.order_index if srv.order_index[oid] == h.agent_id)
        assert srv.exchange.scan_agent_orders(h.agent_id) == []

    def test_no_agents_empty_tick(self):
        report = server().run_tick()
        assert report["orders"] == 0 and report["containment"] == []


class TestKill:
    def seeded(self, kill_policy="OWNER_OR_BROKER"):
        srv = server(kill_policy=kill_policy)
        h = srv.register_agent("alice", "idle", {}, 10**6)
        for venue, price in (("V1", 90), ("V2", 91), ("V3", 92)):
            srv.submit_order(h.agent_id, buy(qty=2, price=price, venue=venue))
        return srv, h

    def test_owner_kill_cancels_everything(self):
        srv, h = self.seeded()
        report = srv.kill_agent(h.agent_id, "alice", False)
        assert len(report["cancelled_orders"]) == 3
        assert srv.exchange.scan_agent_orders(h.agent_id) == []
        with pytest.raises(ServiceError) as err:
            srv.kill_agent(h.agent_id, "alice", False)
        assert err.value.code == UNKNOWN_AGENT  # unloaded

    def test_broker_only_policy_blocks_owner(self):
        srv, h = self.seeded(kill_policy=BROKER_ONLY)
        with pytest.raises(ServiceError) as err:
            srv.kill_agent(h.agent_id, "alice", False)
        assert err.value.code == UNAUTHORIZED
        report = srv.kill_agent(h.agent_id, "desk", True)
        assert report["agent_id"] == h.agent_id

    def test_other_owner_blocked(self):
        srv, h = self.seeded()
        with pytest.raises(ServiceError) as err:
            srv.kill_agent(h.agent_id, "bob", False)
        assert err.value.code == UNAUTHORIZED

    def test_kill_unknown_agent(self):
        with pytest.raises(ServiceError) as err:
            server().kill_agent("a404", "alice", True)
        assert err.value.code == UNKNOWN_AGENT

    def test_kill_report_published_on_report_stream(self):
        srv, h = self.seeded()
        srv.kill_agent(h.agent_id, "alice", False)
        events, _ = srv.reports_since(h.agent_id, 0)
        assert events[-1]["type"] == "KILL"
        assert events[-1]["final_cash"] == h.cash


class TestReports:
    def trading_pair(self):
        srv = server(venues=["V1"])
        a = srv.register_agent("alice", "maker",
                               {"instrument": "STK", "base_price": "100", "seed": "s"}, 10**9)
        b = srv.register_agent("bob", "greedy", {"instrument": "STK", "target_qty": "8"}, 10**6)
        for _ in range(6):
            srv.run_tick()
        return srv, a, b

    def test_fill_events_carry_position_and_cash(self):
        srv, a, b = self.trading_pair()
        events, _ = srv.reports_since(b.agent_id, 0)
        fills = [e for e in events if e["type"] == "FILL"]
        assert fills, "greedy should have filled against the maker"
        assert fills[0]["side"] == BUY
        assert fills[-1]["position"] == b.position["STK"]
        assert fills[-1]["cash"] == b.cash

    def test_resume_from_cursor_no_gaps_no_overlap(self):
        srv, a, b = self.trading_pair()
        all_events, end = srv.reports_since(b.agent_id, 0)
        head, mid = srv.reports_since(b.agent_id, 0)[0][:2], 2
        part1, c1 = srv.reports_since(b.agent_id, 0)
        part2, c2 = srv.reports_since(b.agent_id, mid)
        assert part1[mid:] == part2
        assert c1 == c2 == end

    def test_owner_check_at_frontend(self):
        srv, a, b = self.trading_pair()
        front = TradeServerFrontend(srv)
        reply = front.handle_frame({"type": "SUBSCRIBE_REPORTS", "request_id": "r1",
                                    "payload": {"token": "tok-alice", "agent_id": b.agent_id}})
        assert reply["type"] == "ERROR" and reply["payload"]["code"] == UNAUTHORIZED
        reply = front.handle_frame({"type": "SUBSCRIBE_REPORTS", "request_id": "r2",
                                    "payload": {"token": "tok-bob", "agent_id": b.agent_id, "cursor": 0}})
        assert reply["type"] == "EVENT" and reply["payload"]["events"]


class TestMarketDataFeed:
    def test_md_published_each_tick_and_bounded(self):
        srv = server(venues=["V1"])
        sub = srv.subscribe_md()
        srv.run_tick()
        events = srv.poll_md(sub)
        assert len(events) == 1 and events[0]["tick"] == 1

    def test_degraded_session_gets_less_md_but_all_reports(self):
        srv = server(venues=["V1"])
        session = srv.sessions.login("alice", 1)
        sub = srv.subscribe_md(session.session_id)
        maker = srv.register_agent("alice", "maker",
                                   {"instrument": "STK", "base_price": "100", "seed": "q"}, 10**9)
        taker = srv.register_agent("alice", "greedy", {"instrument": "STK", "target_qty": "50"}, 10**9)
        for _ in range(30):
            srv.run_tick()  # no heartbeats: degrades to REDUCED then SNAPSHOT_ONLY
        events = srv.poll_md(sub)
        md_events = [e for e in events if e["type"] == "MD"]
        level_events = [e for e in events if e["type"] == "LEVEL"]
        assert len(md_events) < 30  # degradation dropped pushes
        assert [e["level"] for e in level_events] == ["REDUCED", "SNAPSHOT_ONLY"]
        reports, _ = srv.reports_since(taker.agent_id, 0)
        assert [e for e in reports if e["type"] == "FILL"]  # reports never degraded

    def test_tiny_bucket_degrades_gracefully(self):
        srv = server(venues=["V1"], bucket_capacity=2, bucket_refill=1)
        maker = srv.register_agent("alice", "maker",
                                   {"instrument": "STK", "base_price": "100", "seed": "g"}, 10**9)
        for _ in range(10):
            report = srv.run_tick()
            assert report["containment"] == []
        assert not maker.quarantined  # rate-limited orders are just retried


class TestStatusAndParams:
    def test_set_params_applies_next_decide(self):
        srv = server(venues=["V1"])
        maker = srv.register_agent("alice", "maker",
                                   {"instrument": "STK", "base_price": "100", "seed": "s"}, 10**9)
        greedy = srv.register_agent("alice", "greedy", {"instrument": "STK", "target_qty": "2"}, 10**6)
        srv.run_tick()
        srv.run_tick()
        before = greedy.position.get("STK", 0)
        assert before == 2
        srv.set_params(greedy.agent_id, {"target_qty": "6"})
        srv.run_tick()
        assert greedy.position.get("STK", 0) == 6

    def test_status_lists_agents(self):
        srv = server()
        srv.register_agent("alice", "idle", {}, 1)
        status = srv.status()
        assert status["agents"][0]["code_ref"] == "idle"
        assert status["kill_policy"] == "OWNER_OR_BROKER"
