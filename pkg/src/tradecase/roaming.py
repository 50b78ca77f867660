"""Roaming-owner support: the work-group availability map with its ranking
formula, and login sessions that degrade gracefully instead of dropping.

Ranking scores are computed with exact rational arithmetic so that ties in
the documented formula are real ties (0.3 + 0.2 equals 0.5 exactly) and the
ordering is invariant under uniform bandwidth scaling.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import INVALID_VALUE, NO_FRESH_RECORDS, UNKNOWN_SESSION, ServiceError

W_NOW = Fraction(1, 2)
W_FORECAST = Fraction(3, 10)
W_CAPACITY = Fraction(1, 5)

FULL = "FULL"
REDUCED = "REDUCED"
SNAPSHOT_ONLY = "SNAPSHOT_ONLY"

REDUCED_AT = 5  # missed heartbeats per priority unit
SNAPSHOT_AT = 15


@dataclass
class AvailabilityRecord:
    member_id: str
    bw_now: int
    bw_forecast: int
    capacity: float
    reported_at: int


class AvailabilityMap:
    """Latest availability report per member; stale records never rank."""

    def __init__(self, ttl_ticks: int = 10):
        self.ttl_ticks = ttl_ticks
        self.records: dict[str, AvailabilityRecord] = {}

    def report(self, member_id: str, bw_now: int, bw_forecast: int, capacity: float, tick: int) -> None:
        if bw_now < 0 or bw_forecast < 0:
            raise ServiceError(INVALID_VALUE, "bandwidth must be nonnegative")
        if not 0.0 <= capacity <= 1.0:
            raise ServiceError(INVALID_VALUE, "capacity must be in [0, 1]")
        self.records[member_id] = AvailabilityRecord(member_id, bw_now, bw_forecast, capacity, tick)

    def _fresh(self, group: list[str], now_tick: int) -> list[AvailabilityRecord]:
        out = []
        for member_id in group:
            rec = self.records.get(member_id)
            if rec is not None and now_tick - rec.reported_at <= self.ttl_ticks:
                out.append(rec)
        return out

    def rank(self, group: list[str], now_tick: int) -> list[tuple[str, float]]:
        """Members ordered best first by
        0.5 * norm(bw_now) + 0.3 * norm(bw_forecast) + 0.2 * capacity,
        each norm dividing by the group maximum (zero maximum norms to zero);
        exact ties break on member id."""
        fresh = self._fresh(group, now_tick)
        if not fresh:
            raise ServiceError(NO_FRESH_RECORDS, "no fresh availability records in group")
        max_now = max(r.bw_now for r in fresh)
        max_forecast = max(r.bw_forecast for r in fresh)

        def norm(value: int, maximum: int) -> Fraction:
            return Fraction(value, maximum) if maximum > 0 else Fraction(0)

        scored = []
        for rec in fresh:
            score = (
                W_NOW * norm(rec.bw_now, max_now)
                + W_FORECAST * norm(rec.bw_forecast, max_forecast)
                + W_CAPACITY * Fraction(rec.capacity)
            )
            scored.append((rec.member_id, score))
        scored.sort(key=lambda t: (-t[1], t[0]))
        return [(member_id, float(score)) for member_id, score in scored]


@dataclass
class Session:
    session_id: str
    owner_id: str
    priority: int  # 1 (highest) .. 3
    level: str = FULL
    missed_heartbeats: int = 0


class SessionRegistry:
    """Sessions are sustained forever; silence only lowers the service level."""

    def __init__(self):
        self.sessions: dict[str, Session] = {}
        self._seq = 0

    def login(self, owner_id: str, priority: int) -> Session:
        if priority not in (1, 2, 3):
            raise ServiceError(INVALID_VALUE, "priority must be 1, 2 or 3")
        self._seq += 1
        session = Session(f"s{self._seq}", owner_id, priority)
        self.sessions[session.session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise ServiceError(UNKNOWN_SESSION, f"no session {session_id}")
        return session

    def heartbeat(self, session_id: str) -> str:
        session = self.get(session_id)
        session.missed_heartbeats = 0
        session.level = FULL
        return session.level

    def tick(self) -> list[dict]:
        """One silent tick for every session; returns level-change events."""
        events = []
        for session in self.sessions.values():
            session.missed_heartbeats += 1
            level = _level_for(session.missed_heartbeats, session.priority)
            if level != session.level:
                session.level = level
                events.append({
                    "session_id": session.session_id,
                    "owner_id": session.owner_id,
                    "level": level,
                    "missed_heartbeats": session.missed_heartbeats,
                })
        return events


def _level_for(missed: int, priority: int) -> str:
    if missed >= SNAPSHOT_AT * priority:
        return SNAPSHOT_ONLY
    if missed >= REDUCED_AT * priority:
        return REDUCED
    return FULL
