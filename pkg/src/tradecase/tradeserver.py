"""The agent trade server: hosts trading agents next to the exchange,
regulates their traffic with per-agent token buckets, contains their
failures, serves market-data and report feeds, and executes kill requests.

The tick core is single threaded and deterministic: agents run in
registration order against a market-data snapshot taken at the top of the
tick, templates are pure functions, and prices are integer ticks. Replay of
a session log therefore reproduces the fill log bit for bit.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

from .agents import AgentView, CancelRequest, OrderRequest, resolve_agent_template
from .auth import TokenTable
from .errors import UNAUTHORIZED, UNKNOWN_AGENT, ServiceError
from .exchange import BUY, Exchange, LIMIT, MARKET, Order, SELL
from .model import canonical_json
from .roaming import FULL, REDUCED, SNAPSHOT_ONLY, AvailabilityMap, SessionRegistry

OWNER_OR_BROKER = "OWNER_OR_BROKER"
BROKER_ONLY = "BROKER_ONLY"

MD_QUEUE_LIMIT = 4096
REDUCED_MD_PERIOD = 5  # REDUCED sessions get market data every Nth tick


@dataclass
class AgentHandle:
    agent_id: str
    owner_id: str
    code_ref: str
    params: dict[str, str]
    cash: int
    tokens: int
    position: dict[str, int] = field(default_factory=dict)
    open_orders: dict[str, dict] = field(default_factory=dict)  # order_id -> info
    quarantined: bool = False
    report_log: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "owner_id": self.owner_id,
            "code_ref": self.code_ref,
            "cash": self.cash,
            "position": dict(sorted(self.position.items())),
            "open_orders": sorted(self.open_orders),
            "quarantined": self.quarantined,
        }


class TradeServer:
    def __init__(self, seed: int = 0, venues: list[str] | None = None,
                 instruments: list[str] | None = None, bucket_capacity: int = 10,
                 bucket_refill: int = 5, kill_policy: str = OWNER_OR_BROKER,
                 decide_budget_ms: float = 50.0, history_len: int = 32,
                 tokens: TokenTable | None = None):
        self.seed = seed
        self.venue_ids = sorted(venues or ["V1"])
        self.instruments = sorted(instruments or ["STK"])
        self.exchange = Exchange(self.venue_ids, self.instruments)
        self.bucket_capacity = bucket_capacity
        self.bucket_refill = bucket_refill
        self.kill_policy = kill_policy
        self.decide_budget_ms = decide_budget_ms
        self.history_len = history_len
        self.tokens = tokens or TokenTable()

        self.tick = 0
        self.agents: dict[str, AgentHandle] = {}
        self.archive: dict[str, AgentHandle] = {}  # killed agents keep their reports
        self.order_index: dict[str, str] = {}  # order_id -> agent_id
        self.fill_log: list[str] = []  # canonical FILL event lines
        self.session_events: list[dict] = []
        self.availability = AvailabilityMap()
        self.sessions = SessionRegistry()
        self.last_trade: dict[tuple[str, str], tuple[int, int]] = {}
        self.history: dict[str, deque] = {inst: deque(maxlen=history_len) for inst in self.instruments}
        self._md_subs: dict[str, dict] = {}
        self._order_seq = 0
        self._agent_seq = 0
        self._sub_seq = 0
        self._latest_md: dict[tuple[str, str], dict] = {}

    # -- registration and admin -------------------------------------------------

    def register_agent(self, owner_id: str, code_ref: str, params: dict[str, str],
                       cash: int, agent_id: str | None = None) -> AgentHandle:
        resolve_agent_template(code_ref)  # UNKNOWN_CODE_REF on bad template
        if agent_id is None:
            self._agent_seq += 1
            agent_id = f"a{self._agent_seq}"
        if agent_id in self.agents or agent_id in self.archive:
            raise ServiceError("BAD_REQUEST", f"agent id {agent_id} already used")
        handle = AgentHandle(agent_id, owner_id, code_ref,
                             dict(params), cash, tokens=self.bucket_capacity)
        self.agents[agent_id] = handle
        return handle

    def set_params(self, agent_id: str, params: dict[str, str]) -> dict[str, str]:
        handle = self._handle(agent_id)
        handle.params.update(params)
        return dict(handle.params)

    def _handle(self, agent_id: str) -> AgentHandle:
        handle = self.agents.get(agent_id)
        if handle is None:
            raise ServiceError(UNKNOWN_AGENT, f"no agent {agent_id}")
        return handle

    def agent_info(self, agent_id: str) -> AgentHandle:
        handle = self.agents.get(agent_id) or self.archive.get(agent_id)
        if handle is None:
            raise ServiceError(UNKNOWN_AGENT, f"no agent {agent_id}")
        return handle

    # -- order path ---------------------------------------------------------------

    def submit_order(self, agent_id: str, request: OrderRequest) -> dict:
        """Returns {"status": "ACK"|"RATE_LIMITED"|"REJECTED", ...}. Only ACK
        consumes a bucket token; a rate-limited order is never forwarded."""
        handle = self._handle(agent_id)
        if handle.quarantined:
            return {"status": "REJECTED", "reason": "QUARANTINED"}
        problem = self._validate_request(handle, request)
        if problem is not None:
            return {"status": "REJECTED", "reason": problem}
        if handle.tokens <= 0:
            self._log_order(handle, request, None, "RATE_LIMITED")
            return {"status": "RATE_LIMITED"}
        handle.tokens -= 1

        venue_id = request.venue_id or self._route(request)
        self._order_seq += 1
        order_id = f"o{self._order_seq}"
        order = Order(
            order_id=order_id,
            agent_id=agent_id,
            venue_id=venue_id,
            instrument=request.instrument,
            side=request.side,
            kind=request.kind,
            qty=request.qty,
            price=request.price,
            time_in_force=request.time_in_force,
            display_qty=request.display_qty,
        )
        result = self.exchange.place(order)
        self.order_index[order_id] = agent_id
        self._log_order(handle, request, order_id, "ACK", venue_id)
        for fill in result.fills:
            self._apply_fill(venue_id, request.instrument, fill)
        if result.resting_qty > 0:
            handle.open_orders[order_id] = {
                "venue_id": venue_id,
                "instrument": request.instrument,
                "side": request.side,
                "price": request.price,
                "qty": result.resting_qty,
            }
        return {"status": "ACK", "order_id": order_id, "fills": len(result.fills)}

    def cancel_order(self, agent_id: str, order_id: str) -> dict:
        handle = self._handle(agent_id)
        if handle.quarantined:
            return {"status": "REJECTED", "reason": "QUARANTINED"}
        info = handle.open_orders.get(order_id)
        if info is None:
            return {"status": "NOT_RESTING"}
        if handle.tokens <= 0:
            return {"status": "RATE_LIMITED"}
        handle.tokens -= 1
        status = self.exchange.cancel(info["venue_id"], info["instrument"], order_id)
        handle.open_orders.pop(order_id, None)
        self.session_events.append({"type": "CANCEL", "tick": self.tick,
                                    "agent_id": agent_id, "order_id": order_id, "status": status})
        return {"status": status}

    def _validate_request(self, handle: AgentHandle, request: OrderRequest) -> str | None:
        if request.side not in (BUY, SELL) or request.kind not in (LIMIT, MARKET):
            return "BAD_ORDER"
        if not isinstance(request.qty, int) or request.qty <= 0:
            return "BAD_QTY"
        if request.kind == LIMIT and (not isinstance(request.price, int) or request.price <= 0):
            return "BAD_PRICE"
        if request.kind == MARKET and request.price is not None:
            return "BAD_PRICE"
        if request.display_qty is not None and not (0 < request.display_qty <= request.qty):
            return "BAD_DISPLAY"
        if request.instrument not in self.instruments:
            return "UNKNOWN_INSTRUMENT"
        if request.venue_id is not None and request.venue_id not in self.exchange.venues:
            return "UNKNOWN_VENUE"
        if request.side == BUY:
            est = self._estimated_cost(request)
            if est is not None and est > handle.cash:
                return "INSUFFICIENT_CASH"
        return None

    def _estimated_cost(self, request: OrderRequest) -> int | None:
        # Cash floor: limit price, or the current best ask for a market buy.
        if request.kind == LIMIT:
            return request.price * request.qty
        venue = request.venue_id or self._route(request)
        ask = self.exchange.venue(venue).book(request.instrument).best_ask()
        return ask[0] * request.qty if ask else None

    def _route(self, request: OrderRequest) -> str:
        """Best venue by opposite top of book; first venue when no quotes."""
        best_venue, best_price = None, None
        for vid in self.venue_ids:
            book = self.exchange.venue(vid).book(request.instrument)
            quote = book.best_ask() if request.side == BUY else book.best_bid()
            if quote is None:
                continue
            better = (
                best_price is None
                or (request.side == BUY and quote[0] < best_price)
                or (request.side == SELL and quote[0] > best_price)
            )
            if better:
                best_venue, best_price = vid, quote[0]
        return best_venue or self.venue_ids[0]

    def _apply_fill(self, venue_id: str, instrument: str, fill) -> None:
        buy_agent = self.order_index[fill.buy_order_id]
        sell_agent = self.order_index[fill.sell_order_id]
        event = {
            "type": "FILL", "tick": self.tick, "venue_id": venue_id,
            "instrument": instrument, "trade_id": fill.trade_id,
            "buy_order_id": fill.buy_order_id, "sell_order_id": fill.sell_order_id,
            "buy_agent": buy_agent, "sell_agent": sell_agent,
            "price": fill.price, "qty": fill.qty, "ts": fill.ts,
        }
        self.fill_log.append(canonical_json(event))
        self.session_events.append(event)
        self.last_trade[(venue_id, instrument)] = (fill.price, fill.qty)
        self.history[instrument].append(fill.price)
        for agent_id, side, order_id in ((buy_agent, BUY, fill.buy_order_id),
                                         (sell_agent, SELL, fill.sell_order_id)):
            handle = self.agents.get(agent_id) or self.archive.get(agent_id)
            signed = fill.qty if side == BUY else -fill.qty
            handle.position[instrument] = handle.position.get(instrument, 0) + signed
            handle.cash -= signed * fill.price
            open_info = handle.open_orders.get(order_id)
            if open_info is not None:
                open_info["qty"] -= fill.qty
                if open_info["qty"] <= 0:
                    handle.open_orders.pop(order_id, None)
            handle.report_log.append({
                "type": "FILL", "tick": self.tick, "agent_id": agent_id,
                "order_id": order_id, "venue_id": venue_id, "instrument": instrument,
                "side": side, "price": fill.price, "qty": fill.qty,
                "position": handle.position[instrument], "cash": handle.cash,
            })

    def _log_order(self, handle: AgentHandle, request: OrderRequest,
                   order_id: str | None, status: str, venue_id: str | None = None) -> None:
        self.session_events.append({
            "type": "ORDER", "tick": self.tick, "agent_id": handle.agent_id,
            "order_id": order_id, "venue_id": venue_id, "instrument": request.instrument,
            "side": request.side, "kind": request.kind, "price": request.price,
            "qty": request.qty, "tif": request.time_in_force,
            "display_qty": request.display_qty, "status": status,
        })

    # -- tick loop -----------------------------------------------------------------

    def run_tick(self) -> dict:
        """Advance the simulation one tick. Agent failures never escape: a
        throwing or over-budget agent is quarantined, its resting orders are
        cancelled, and everyone else proceeds untouched."""
        self.tick += 1
        for handle in self.agents.values():
            handle.tokens = min(self.bucket_capacity, handle.tokens + self.bucket_refill)
        self._publish_md()

        report = {"tick": self.tick, "orders": 0, "fills": 0, "rate_limited": 0,
                  "rejected": 0, "containment": [], "level_changes": []}
        for agent_id in list(self.agents):
            handle = self.agents.get(agent_id)
            if handle is None or handle.quarantined:
                continue
            # Views are live: an agent sees quotes placed earlier in the same
            # tick. A quarantined agent changes neither books nor history, so
            # healthy agents' inputs are unaffected by contained failures.
            view = AgentView(
                tick=self.tick,
                position=dict(handle.position),
                cash=handle.cash,
                open_orders=[{"order_id": oid, **info} for oid, info in sorted(handle.open_orders.items())],
                md=self._current_md(),
                history={inst: tuple(ring) for inst, ring in self.history.items()},
            )
            decide = resolve_agent_template(handle.code_ref)
            try:
                actions = decide(view, handle.params)
            except Exception as exc:  # containment boundary: nothing propagates
                self._quarantine(handle, "ERROR", repr(exc), report)
                continue
            if view.charged_ms > self.decide_budget_ms:
                self._quarantine(handle, "TIMEOUT",
                                 f"decide charged {view.charged_ms}ms > {self.decide_budget_ms}ms", report)
                continue
            for action in actions:
                if isinstance(action, CancelRequest):
                    self.cancel_order(agent_id, action.order_id)
                    continue
                outcome = self.submit_order(agent_id, action)
                report["orders"] += 1
                if outcome["status"] == "RATE_LIMITED":
                    report["rate_limited"] += 1
                elif outcome["status"] == "REJECTED":
                    report["rejected"] += 1
                else:
                    report["fills"] += outcome.get("fills", 0)

        for event in self.sessions.tick():
            event = {"type": "LEVEL", "tick": self.tick, **event}
            self.session_events.append(event)
            report["level_changes"].append(event)
            # Level changes reach the owner's feed regardless of the level
            # itself; the indicator must never go stale.
            for sub in self._md_subs.values():
                if sub["session_id"] == event["session_id"]:
                    sub["queue"].append(event)
        return report

    def _quarantine(self, handle: AgentHandle, reason: str, detail: str, report: dict) -> None:
        handle.quarantined = True
        cancelled = self._cancel_all_orders(handle)
        event = {"type": "CONTAINMENT", "tick": self.tick, "agent_id": handle.agent_id,
                 "reason": reason, "detail": detail, "cancelled_orders": cancelled}
        self.session_events.append(event)
        handle.report_log.append(event)
        report["containment"].append(event)

    def _cancel_all_orders(self, handle: AgentHandle) -> list[str]:
        cancelled = []
        for order_id, info in sorted(handle.open_orders.items()):
            status = self.exchange.cancel(info["venue_id"], info["instrument"], order_id)
            if status == "CANCELLED":
                cancelled.append(order_id)
        handle.open_orders.clear()
        return cancelled

    def _md_event(self, venue_id: str, instrument: str) -> dict:
        book = self.exchange.venue(venue_id).book(instrument)
        last = self.last_trade.get((venue_id, instrument))
        return {
            "type": "MD", "venue_id": venue_id, "instrument": instrument,
            "best_bid": list(book.best_bid()) if book.best_bid() else None,
            "best_ask": list(book.best_ask()) if book.best_ask() else None,
            "last_trade": list(last) if last else None,
            "tick": self.tick,
        }

    def _current_md(self) -> dict[tuple[str, str], dict]:
        return {
            (vid, inst): self._md_event(vid, inst)
            for vid in self.venue_ids
            for inst in self.instruments
        }

    def _publish_md(self) -> None:
        for venue_id in self.venue_ids:
            for instrument in self.instruments:
                event = self._md_event(venue_id, instrument)
                self._latest_md[(venue_id, instrument)] = event
                self._fan_out_md(event)

    def _fan_out_md(self, event: dict) -> None:
        for sub in self._md_subs.values():
            level = FULL
            if sub["session_id"] is not None:
                try:
                    level = self.sessions.get(sub["session_id"]).level
                except ServiceError:
                    level = FULL
            if level == SNAPSHOT_ONLY:
                continue
            if level == REDUCED and self.tick % REDUCED_MD_PERIOD != 0:
                continue
            sub["queue"].append(event)  # deque(maxlen) drops the oldest

    # -- kill requests ----------------------------------------------------------------

    def kill_agent(self, agent_id: str, requester_owner: str | None,
                   requester_is_broker: bool) -> dict:
        handle = self.agents.get(agent_id)
        if handle is None:
            raise ServiceError(UNKNOWN_AGENT, f"no agent {agent_id}")
        allowed = requester_is_broker or (
            self.kill_policy == OWNER_OR_BROKER and requester_owner == handle.owner_id
        )
        if not allowed:
            raise ServiceError(UNAUTHORIZED, f"kill denied under policy {self.kill_policy}")
        cancelled = self._cancel_all_orders(handle)
        handle.quarantined = True
        del self.agents[agent_id]
        self.archive[agent_id] = handle
        kill_report = {
            "type": "KILL", "tick": self.tick, "agent_id": agent_id,
            "cancelled_orders": cancelled,
            "final_position": dict(sorted(handle.position.items())),
            "final_cash": handle.cash,
        }
        self.session_events.append(kill_report)
        handle.report_log.append(kill_report)
        return kill_report

    # -- feeds --------------------------------------------------------------------------

    def subscribe_md(self, session_id: str | None = None) -> str:
        self._sub_seq += 1
        sub_id = f"md{self._sub_seq}"
        self._md_subs[sub_id] = {"queue": deque(maxlen=MD_QUEUE_LIMIT), "session_id": session_id}
        return sub_id

    def poll_md(self, sub_id: str) -> list[dict]:
        sub = self._md_subs.get(sub_id)
        if sub is None:
            raise ServiceError(UNKNOWN_AGENT, f"no subscription {sub_id}")
        events = list(sub["queue"])
        sub["queue"].clear()
        return events

    def reports_since(self, agent_id: str, cursor: int) -> tuple[list[dict], int]:
        """Resumable report stream: events from ``cursor`` on, plus the next
        cursor. Report events are never dropped."""
        handle = self.agent_info(agent_id)
        cursor = max(0, int(cursor))
        return handle.report_log[cursor:], len(handle.report_log)

    # -- session log and status -----------------------------------------------------------

    def status(self) -> dict:
        return {
            "tick": self.tick,
            "venues": self.venue_ids,
            "instruments": self.instruments,
            "kill_policy": self.kill_policy,
            "agents": [h.summary() for h in self.agents.values()],
            "killed": sorted(self.archive),
        }

    def session_header(self, ticks_planned: int, registrations: list[dict]) -> dict:
        return {
            "type": "SESSION",
            "seed": self.seed,
            "venues": self.venue_ids,
            "instruments": self.instruments,
            "bucket_capacity": self.bucket_capacity,
            "bucket_refill": self.bucket_refill,
            "kill_policy": self.kill_policy,
            "decide_budget_ms": self.decide_budget_ms,
            "ticks": ticks_planned,
            "agents": registrations,
        }

    def write_session_log(self, path: str, header: dict) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(header) + "\n")
            for event in self.session_events:
                fh.write(canonical_json(event) + "\n")


class TradeServerFrontend:
    """Frame protocol wrapper around a TradeServer, with token auth."""

    def __init__(self, server: TradeServer):
        self.server = server

    def handle_frame(self, frame: dict) -> dict:
        from . import frames  # local import keeps the core wire-free

        rid = frame.get("request_id", "")
        p = frame["payload"]
        srv = self.server
        try:
            ftype = frame["type"]
            if ftype == frames.REGISTER:
                owner = srv.tokens.owner(p.get("token"))
                handle = srv.register_agent(owner, p["code_ref"], p.get("params", {}),
                                            int(p.get("cash", 0)), p.get("agent_id"))
                return frames.make_frame(frames.ACK, rid, {"agent_id": handle.agent_id})
            if ftype == frames.ORDER:
                owner = srv.tokens.owner(p.get("token"))
                handle = srv.agent_info(p["agent_id"])
                if handle.owner_id != owner:
                    raise ServiceError(UNAUTHORIZED, "not your agent")
                request = OrderRequest(
                    instrument=p["instrument"], side=p["side"], kind=p["kind"],
                    qty=int(p["qty"]), price=p.get("price"), venue_id=p.get("venue_id"),
                    time_in_force=p.get("time_in_force", "GTC"),
                    display_qty=p.get("display_qty"),
                )
                return frames.make_frame(frames.ACK, rid, srv.submit_order(p["agent_id"], request))
            if ftype == frames.KILL:
                owner = srv.tokens.owner(p.get("token"))
                report = srv.kill_agent(p["agent_id"], owner, srv.tokens.is_broker(p.get("token")))
                return frames.make_frame(frames.ACK, rid, report)
            if ftype == frames.SET_PARAMS:
                owner = srv.tokens.owner(p.get("token"))
                handle = srv.agent_info(p["agent_id"])
                if handle.owner_id != owner:
                    raise ServiceError(UNAUTHORIZED, "not your agent")
                params = srv.set_params(p["agent_id"], p.get("params", {}))
                return frames.make_frame(frames.ACK, rid, {"params": params, "tick": srv.tick})
            if ftype == frames.SUBSCRIBE_MD:
                if "sub_id" in p:
                    return frames.make_frame(frames.EVENT, rid, {"events": srv.poll_md(p["sub_id"])})
                sub_id = srv.subscribe_md(p.get("session_id"))
                return frames.make_frame(frames.ACK, rid, {"sub_id": sub_id})
            if ftype == frames.SUBSCRIBE_REPORTS:
                owner = srv.tokens.owner(p.get("token"))
                handle = srv.agent_info(p["agent_id"])
                if handle.owner_id != owner:
                    raise ServiceError(UNAUTHORIZED, "not your agent")
                events, cursor = srv.reports_since(p["agent_id"], int(p.get("cursor", 0)))
                return frames.make_frame(frames.EVENT, rid,
                                         {"agent_id": p["agent_id"], "events": events, "next_cursor": cursor})
            if ftype == frames.TICK:
                reports = [srv.run_tick() for _ in range(int(p.get("count", 1)))]
                return frames.make_frame(frames.ACK, rid, {"tick": srv.tick, "reports": reports})
            if ftype == frames.STATUS:
                return frames.make_frame(frames.ACK, rid, srv.status())
            if ftype == frames.LOGIN:
                owner = srv.tokens.owner(p.get("token"))
                session = srv.sessions.login(owner, int(p["priority"]))
                return frames.make_frame(frames.ACK, rid, {
                    "session_id": session.session_id, "level": session.level,
                    "priority": session.priority,
                })
            if ftype == frames.HEARTBEAT:
                level = srv.sessions.heartbeat(p["session_id"])
                return frames.make_frame(frames.ACK, rid, {"level": level})
            if ftype == frames.AVAIL_REPORT:
                srv.availability.report(p["member_id"], int(p["bw_now"]),
                                        int(p["bw_forecast"]), float(p["capacity"]), srv.tick)
                return frames.make_frame(frames.ACK, rid, {})
            if ftype == frames.RANK:
                ranking = srv.availability.rank(list(p["group"]), srv.tick)
                return frames.make_frame(frames.ACK, rid,
                                         {"ranking": [[m, s] for m, s in ranking]})
            raise ServiceError("BAD_REQUEST", f"unsupported frame type {ftype}")
        except ServiceError as exc:
            return frames.error_frame(rid, exc)


def run_session(seed: int, venues: list[str], instruments: list[str], ticks: int,
                registrations: list[dict], bucket_capacity: int = 10, bucket_refill: int = 5,
                kill_policy: str = OWNER_OR_BROKER, tokens: TokenTable | None = None) -> TradeServer:
    """Run a complete scripted session: register everything, then tick."""
    server = TradeServer(seed=seed, venues=venues, instruments=instruments,
                         bucket_capacity=bucket_capacity, bucket_refill=bucket_refill,
                         kill_policy=kill_policy, tokens=tokens)
    for reg in registrations:
        server.register_agent(reg["owner_id"], reg["code_ref"], reg["params"],
                              reg["cash"], agent_id=reg.get("agent_id"))
    for _ in range(ticks):
        server.run_tick()
    return server


def replay_session(path: str) -> tuple[str, int, int]:
    """Re-run a session log and compare fill logs.

    Returns (verdict, recorded_fills, recomputed_fills) where verdict is
    IDENTICAL or DIVERGED."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines:
        raise ServiceError("BAD_REQUEST", "empty session log")
    header = json.loads(lines[0])
    if header.get("type") != "SESSION":
        raise ServiceError("BAD_REQUEST", "missing session header")
    recorded = [line for line in lines[1:] if json.loads(line).get("type") == "FILL"]
    server = run_session(
        seed=header["seed"], venues=header["venues"], instruments=header["instruments"],
        ticks=header["ticks"], registrations=header["agents"],
        bucket_capacity=header["bucket_capacity"], bucket_refill=header["bucket_refill"],
        kill_policy=header["kill_policy"],
    )
    verdict = "IDENTICAL" if server.fill_log == recorded else "DIVERGED"
    return verdict, len(recorded), len(server.fill_log)
