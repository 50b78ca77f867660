"""On-disk briefcase store with atomic writes and advisory per-briefcase locks.

Containers are written temp-then-rename with fsync, so a kill at any point
between two API calls leaves either the old or the new container, never a
torn one. Locks are in-memory with a lease: a crashed peer's lock expires
instead of wedging the briefcase forever.
"""

from __future__ import annotations

import os
import secrets
import threading
import time

from .errors import LOCKED, NOT_FOUND, STORAGE_FULL, ServiceError
from .model import ServiceBriefcase, decode_briefcase, empty_briefcase, encode_briefcase

DEFAULT_LOCK_LEASE = 30.0


def atomic_write(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class BriefcaseStore:
    def __init__(self, root_dir: str, lock_lease: float = DEFAULT_LOCK_LEASE, clock=time.monotonic):
        self.root_dir = root_dir
        self.briefcase_dir = os.path.join(root_dir, "briefcases")
        self.staging_dir = os.path.join(root_dir, "staging")
        os.makedirs(self.briefcase_dir, exist_ok=True)
        os.makedirs(self.staging_dir, exist_ok=True)
        self.lock_lease = lock_lease
        self.clock = clock
        self._mutex = threading.RLock()
        self._locks: dict[str, tuple[str, float]] = {}  # briefcase_id -> (txn_id, expires)
        self.fault_staging_full = False  # test hook: staging writes report a full disk
        self._sweep_tmp()

    def _sweep_tmp(self) -> None:
        # Leftover .tmp files are writes that never completed; discard them.
        for d in (self.briefcase_dir, self.staging_dir):
            for name in os.listdir(d):
                if name.endswith(".tmp"):
                    os.unlink(os.path.join(d, name))

    def _path(self, briefcase_id: str) -> str:
        return os.path.join(self.briefcase_dir, briefcase_id + ".svbc")

    # -- basic API ----------------------------------------------------------

    def create(self, owner_id: str, briefcase_id: str | None = None) -> str:
        with self._mutex:
            if briefcase_id is None:
                briefcase_id = "bc-" + secrets.token_hex(6)
            if os.path.exists(self._path(briefcase_id)):
                raise ServiceError(LOCKED, f"briefcase {briefcase_id} already exists")
            atomic_write(self._path(briefcase_id), encode_briefcase(empty_briefcase(briefcase_id, owner_id)))
            return briefcase_id

    def exists(self, briefcase_id: str) -> bool:
        return os.path.exists(self._path(briefcase_id))

    def list_ids(self) -> list[str]:
        return sorted(n[: -len(".svbc")] for n in os.listdir(self.briefcase_dir) if n.endswith(".svbc"))

    def get(self, briefcase_id: str) -> ServiceBriefcase:
        path = self._path(briefcase_id)
        if not os.path.exists(path):
            raise ServiceError(NOT_FOUND, f"briefcase {briefcase_id} not found")
        with open(path, "rb") as fh:
            return decode_briefcase(fh.read())

    def put(self, briefcase_id: str, briefcase: ServiceBriefcase) -> int:
        """Persist atomically; the stored env_version moves strictly forward."""
        with self._mutex:
            self._check_unlocked(briefcase_id)
            current = self.get(briefcase_id)
            stored = briefcase.copy()
            stored.manifest.env_version = max(
                current.manifest.env_version + 1, briefcase.manifest.env_version
            )
            atomic_write(self._path(briefcase_id), encode_briefcase(stored))
            return stored.manifest.env_version

    def install(self, briefcase_id: str, briefcase: ServiceBriefcase) -> None:
        """Store the image exactly as given (sync commit path, no version bump)."""
        with self._mutex:
            atomic_write(self._path(briefcase_id), encode_briefcase(briefcase))

    def delete(self, briefcase_id: str) -> None:
        with self._mutex:
            self._check_unlocked(briefcase_id)
            path = self._path(briefcase_id)
            if not os.path.exists(path):
                raise ServiceError(NOT_FOUND, f"briefcase {briefcase_id} not found")
            os.unlink(path)

    # -- advisory sync locks -------------------------------------------------

    def _live_lock(self, briefcase_id: str) -> tuple[str, float] | None:
        held = self._locks.get(briefcase_id)
        if held is None:
            return None
        if held[1] <= self.clock():
            del self._locks[briefcase_id]
            return None
        return held

    def _check_unlocked(self, briefcase_id: str) -> None:
        held = self._live_lock(briefcase_id)
        if held is not None:
            raise ServiceError(LOCKED, f"briefcase {briefcase_id} locked by txn {held[0]}")

    def lock(self, briefcase_id: str, txn_id: str, lease: float | None = None) -> None:
        with self._mutex:
            held = self._live_lock(briefcase_id)
            if held is not None and held[0] != txn_id:
                raise ServiceError(LOCKED, f"briefcase {briefcase_id} locked by txn {held[0]}")
            self._locks[briefcase_id] = (txn_id, self.clock() + (lease or self.lock_lease))

    def refresh_lock(self, briefcase_id: str, txn_id: str) -> None:
        # A PREPARED participant must hold the lock until the outcome is known.
        self.lock(briefcase_id, txn_id)

    def unlock(self, briefcase_id: str, txn_id: str) -> None:
        with self._mutex:
            held = self._locks.get(briefcase_id)
            if held is not None and held[0] == txn_id:
                del self._locks[briefcase_id]

    def lock_holder(self, briefcase_id: str) -> str | None:
        with self._mutex:
            held = self._live_lock(briefcase_id)
            return held[0] if held else None

    # -- staging (two-phase commit participant side) -------------------------

    def stage_path(self, txn_id: str) -> str:
        return os.path.join(self.staging_dir, txn_id + ".stage")

    def write_stage(self, txn_id: str, data: bytes) -> None:
        if self.fault_staging_full:
            raise ServiceError(STORAGE_FULL, "staging area full")
        atomic_write(self.stage_path(txn_id), data)

    def read_stage(self, txn_id: str) -> bytes | None:
        path = self.stage_path(txn_id)
        if not os.path.exists(path):
            return None
        with open(path, "rb") as fh:
            return fh.read()

    def drop_stage(self, txn_id: str) -> None:
        path = self.stage_path(txn_id)
        if os.path.exists(path):
            os.unlink(path)
