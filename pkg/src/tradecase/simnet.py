"""Deterministic in-process network for tests and fault harnesses.

Nodes register a frame handler under a name; calls run synchronously in
arrival order, so a whole multi-server scenario is reproducible. The fault
table maps message indices (every request and every reply is one message
event) to an action: drop the message, crash the receiver before delivery,
or let the receiver process it and crash before the reply leaves. A byte
counter totals every encoded frame put on the wire, dropped or not.
"""

from __future__ import annotations

from .errors import TIMEOUT, ServiceError
from .frames import encode_frame
from .twophase import CrashNow

DROP = "DROP"
CRASH_RECV = "CRASH_RECV"
CRASH_AFTER = "CRASH_AFTER"


class SimNet:
    def __init__(self):
        self.handlers: dict[str, callable] = {}
        self.alive: dict[str, bool] = {}
        self.faults: dict[int, str] = {}
        self.msg_index = 0
        self.bytes_total = 0
        self.frames_total = 0

    def register(self, name: str, handler) -> None:
        self.handlers[name] = handler
        self.alive[name] = True

    def crash(self, name: str) -> None:
        self.alive[name] = False

    def is_alive(self, name: str) -> bool:
        return self.alive.get(name, False)

    def reset_counters(self) -> None:
        self.bytes_total = 0
        self.frames_total = 0

    def transport_for(self, src: str) -> "SimTransport":
        return SimTransport(self, src)

    def _count(self, frame: dict) -> None:
        self.bytes_total += len(encode_frame(frame))
        self.frames_total += 1

    def _next_fault(self) -> str | None:
        fault = self.faults.get(self.msg_index)
        self.msg_index += 1
        return fault

    def call(self, src: str, dst: str, frame: dict, timeout: float = 0.0) -> dict:
        # Request leg.
        self._count(frame)
        fault = self._next_fault()
        if fault == DROP:
            raise ServiceError(TIMEOUT, f"request to {dst} lost")
        if fault == CRASH_RECV:
            self.crash(dst)
            raise ServiceError(TIMEOUT, f"{dst} crashed before delivery")
        if not self.is_alive(dst):
            raise ServiceError(TIMEOUT, f"{dst} is down")
        try:
            reply = self.handlers[dst](frame)
        except CrashNow:
            self.crash(dst)
            raise ServiceError(TIMEOUT, f"{dst} crashed while handling {frame['type']}")
        if fault == CRASH_AFTER:
            self.crash(dst)
            raise ServiceError(TIMEOUT, f"{dst} crashed after handling {frame['type']}")
        # Reply leg.
        self._count(reply)
        fault = self._next_fault()
        if fault == DROP:
            raise ServiceError(TIMEOUT, f"reply from {dst} lost")
        if fault == CRASH_RECV:
            # The caller dies just as the reply arrives.
            self.crash(src)
            raise CrashNow(src)
        return reply


class SimTransport:
    """Per-node view of the network; satisfies the transport contract
    (``call(dst, frame, timeout) -> reply``) used by coordinators."""

    def __init__(self, net: SimNet, src: str):
        self.net = net
        self.src = src

    def call(self, dst: str, frame: dict, timeout: float = 0.0) -> dict:
        return self.net.call(self.src, dst, frame, timeout)
