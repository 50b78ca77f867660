"""Wire protocol: newline-delimited JSON frames shared by every server.

A frame is one JSON object per line with exactly the keys ``type``,
``request_id`` and ``payload``, encoded canonically (sorted keys, no
whitespace) so that recorded frames compare byte-for-byte. Binary blobs
travel base64-encoded inside payloads.
"""

from __future__ import annotations

import base64
import json

from .errors import BAD_REQUEST, ServiceError
from .model import canonical_json

# Briefcase server
CREATE = "CREATE"
GET = "GET"
PUT = "PUT"
DELETE = "DELETE"
SYNC_BEGIN = "SYNC_BEGIN"
SYNC_TRANSFER = "SYNC_TRANSFER"
PREPARE = "PREPARE"
VOTE = "VOTE"
COMMIT = "COMMIT"
ABORT = "ABORT"
ACK = "ACK"
ERROR = "ERROR"

# Service runtime control
LOAD = "LOAD"
TRANSITION = "TRANSITION"
MESSAGE = "MESSAGE"
MIGRATE = "MIGRATE"
SHUTDOWN = "SHUTDOWN"
STATUS = "STATUS"

# Trade server
REGISTER = "REGISTER"
ORDER = "ORDER"
KILL = "KILL"
SET_PARAMS = "SET_PARAMS"
SUBSCRIBE_MD = "SUBSCRIBE_MD"
SUBSCRIBE_REPORTS = "SUBSCRIBE_REPORTS"
EVENT = "EVENT"
TICK = "TICK"

# Roaming
AVAIL_REPORT = "AVAIL_REPORT"
RANK = "RANK"
LOGIN = "LOGIN"
HEARTBEAT = "HEARTBEAT"

FRAME_TYPES = frozenset(
    {
        CREATE, GET, PUT, DELETE, SYNC_BEGIN, SYNC_TRANSFER, PREPARE, VOTE,
        COMMIT, ABORT, ACK, ERROR, LOAD, TRANSITION, MESSAGE, MIGRATE,
        SHUTDOWN, STATUS, REGISTER, ORDER, KILL, SET_PARAMS, SUBSCRIBE_MD,
        SUBSCRIBE_REPORTS, EVENT, TICK, AVAIL_REPORT, RANK, LOGIN, HEARTBEAT,
    }
)


def make_frame(ftype: str, request_id: str, payload: dict | None = None) -> dict:
    return {"type": ftype, "request_id": request_id, "payload": payload or {}}


def error_frame(request_id: str, err: ServiceError) -> dict:
    return make_frame(ERROR, request_id, err.to_payload())


def encode_frame(frame: dict) -> bytes:
    """One canonical JSON line, newline-terminated."""
    return (canonical_json(frame) + "\n").encode("utf-8")


def decode_frame(line: bytes | str) -> dict:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    try:
        frame = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ServiceError(BAD_REQUEST, f"bad frame: {exc}") from exc
    if (
        not isinstance(frame, dict)
        or set(frame) != {"type", "request_id", "payload"}
        or frame["type"] not in FRAME_TYPES
        or not isinstance(frame["payload"], dict)
    ):
        raise ServiceError(BAD_REQUEST, "malformed frame")
    return frame


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"))


def raise_if_error(frame: dict) -> dict:
    """Return the frame, or raise the transported ServiceError."""
    if frame["type"] == ERROR:
        raise ServiceError(frame["payload"]["code"], frame["payload"].get("message", ""))
    return frame
