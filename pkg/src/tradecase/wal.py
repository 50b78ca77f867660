"""Append-only durable log used by the two-phase commit machines.

Every record is one canonical JSON line, flushed and fsynced before the
append returns, so an acknowledged phase change survives a crash. Replay
tolerates a torn final line (a crash mid-append loses only that record).
"""

from __future__ import annotations

import json
import os

from .model import canonical_json


class DurableLog:
    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)

    def append(self, record: dict) -> None:
        line = canonical_json(record) + "\n"
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())

    def replay(self) -> list[dict]:
        if not os.path.exists(self.path):
            return []
        records = []
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError:
                    break  # torn tail from a crash mid-append
        return records
