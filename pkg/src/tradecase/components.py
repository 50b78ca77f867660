"""Service component plugin interface and the built-in template registry.

Components are in-process plugins resolved by code reference against this
registry; no code ever loads over the network. A component sees the world
through its context handle, and every privileged call it makes is checked
against the privileges its user granted at load time.
"""

from __future__ import annotations

import struct

from .errors import UNKNOWN_CODE_REF, ServiceError
from .model import CodeRef


class ServiceComponent:
    """Callback interface every template implements. All hooks default to no-ops."""

    def on_init(self, ctx) -> None:
        pass

    def on_resume(self, state: bytes | None) -> None:
        pass

    def on_suspend(self) -> bytes | None:
        return None

    def on_message(self, sender: str, payload: bytes) -> None:
        pass

    def on_kill(self) -> None:
        pass


class Counter(ServiceComponent):
    """Keeps an integer; any message starting with ``inc`` adds one."""

    def __init__(self):
        self.count = 0

    def on_message(self, sender, payload):
        if payload.startswith(b"inc"):
            self.count += 1

    def on_suspend(self):
        return struct.pack(">q", self.count)

    def on_resume(self, state):
        if state:
            (self.count,) = struct.unpack(">q", state)


class Notepad(ServiceComponent):
    """Remembers the last message payload verbatim; state is that payload."""

    def __init__(self):
        self.note = b""

    def on_message(self, sender, payload):
        self.note = payload

    def on_suspend(self):
        return self.note

    def on_resume(self, state):
        self.note = state or b""


class Echo(ServiceComponent):
    """Sends every payload straight back to its sender."""

    def on_init(self, ctx):
        self.ctx = ctx

    def on_resume(self, state):
        pass

    def on_message(self, sender, payload):
        self.ctx.send(sender, payload)


class Relay(ServiceComponent):
    """Message-passing service: payloads of the form ``dest|data`` are
    forwarded to ``dest``; everything else is kept in the mailbox."""

    def __init__(self):
        self.mailbox: list[bytes] = []

    def on_init(self, ctx):
        self.ctx = ctx

    def on_message(self, sender, payload):
        dest, sep, data = payload.partition(b"|")
        if sep:
            self.ctx.send(dest.decode("utf-8"), data)
        else:
            self.mailbox.append(payload)


_TEMPLATES: dict[tuple[str, str], type[ServiceComponent]] = {
    ("counter", "1"): Counter,
    ("notepad", "1"): Notepad,
    ("echo", "1"): Echo,
    ("relay", "1"): Relay,
}


def resolve_template(code_ref: CodeRef) -> type[ServiceComponent]:
    cls = _TEMPLATES.get((code_ref.name, code_ref.version))
    if cls is None:
        raise ServiceError(UNKNOWN_CODE_REF, f"no component template {code_ref}")
    return cls


def register_template(name: str, version: str, cls: type[ServiceComponent]) -> None:
    _TEMPLATES[(name, version)] = cls


def known_templates() -> list[str]:
    return sorted(f"{n}@{v}" for n, v in _TEMPLATES)
