"""Bearer-token table: opaque tokens mapped to owner ids, optionally with a
broker role. Stands in for out-of-band authenticated channels."""

from __future__ import annotations

from .errors import UNAUTHORIZED, ServiceError


class TokenTable:
    def __init__(self, entries: dict[str, tuple[str, str]] | None = None):
        # token -> (owner_id, role); role is "owner" or "broker"
        self.entries = dict(entries or {})

    @classmethod
    def from_file(cls, path: str) -> "TokenTable":
        """One line per token: ``<token> <owner_id> [broker]``; # comments."""
        entries = {}
        with open(path, "r", encoding="utf-8") as fh:
            for raw in fh:
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) not in (2, 3):
                    raise ValueError(f"bad token line: {raw!r}")
                role = "broker" if len(parts) == 3 and parts[2] == "broker" else "owner"
                entries[parts[0]] = (parts[1], role)
        return cls(entries)

    def owner(self, token: str | None) -> str:
        if token is None or token not in self.entries:
            raise ServiceError(UNAUTHORIZED, "unknown token")
        return self.entries[token][0]

    def is_broker(self, token: str | None) -> bool:
        return token in self.entries and self.entries[token][1] == "broker"

    def require_owner(self, token: str | None, owner_id: str) -> None:
        if self.owner(token) != owner_id:
            raise ServiceError(UNAUTHORIZED, f"token does not belong to {owner_id}")
