"""Domain model shared by all servers: component records, briefcase manifests,
the briefcase container format, content digests, and briefcase diffing.

All types here are plain values. Nothing in this module performs I/O, so
instances are safe to share read-only across threads.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import BRIEFCASE_ID_MISMATCH, CORRUPT, ServiceError

MAGIC = b"SVBC1"
DIGEST_LEN = 32

_LEN = struct.Struct(">Q")


def canonical_json(obj) -> str:
    """Canonical JSON: sorted keys, no whitespace. Byte-deterministic by construction."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def digest(blob: bytes) -> bytes:
    """SHA-256 content digest of a component state blob."""
    return hashlib.sha256(blob).digest()


class LifecycleState(str, Enum):
    LOADED = "LOADED"
    INITIALIZED = "INITIALIZED"
    ACTIVE = "ACTIVE"
    SUSPENDED = "SUSPENDED"
    KILLED = "KILLED"


class Privilege(str, Enum):
    LOAD_COMPONENT = "LOAD_COMPONENT"
    SUSPEND_COMPONENT = "SUSPEND_COMPONENT"
    RESUME_COMPONENT = "RESUME_COMPONENT"
    KILL_COMPONENT = "KILL_COMPONENT"
    MIGRATE_ENVIRONMENT = "MIGRATE_ENVIRONMENT"
    SHUTDOWN_ENVIRONMENT = "SHUTDOWN_ENVIRONMENT"


@dataclass(frozen=True)
class CodeRef:
    """Name plus version of a component template in the built-in registry."""

    name: str
    version: str

    def __str__(self) -> str:
        return f"{self.name}@{self.version}"

    @classmethod
    def parse(cls, text: str) -> "CodeRef":
        name, sep, version = text.partition("@")
        if not name or not sep or not version:
            raise ServiceError(CORRUPT, f"bad code ref {text!r}, expected name@version")
        return cls(name, version)


@dataclass
class ComponentRecord:
    """One service component's identity, flags, privileges, state and digest.

    ``version`` increases whenever the component's saved state changes;
    ``state_digest`` is present exactly for persistent components.
    """

    component_id: str
    code_ref: CodeRef
    persistent: bool
    mobile: bool
    lifecycle_state: LifecycleState = LifecycleState.LOADED
    privileges: frozenset[Privilege] = frozenset()
    state_digest: bytes | None = None
    version: int = 0

    def validate(self) -> None:
        if self.version < 0:
            raise ValueError(f"{self.component_id}: version must be >= 0")
        if self.persistent and self.state_digest is None:
            raise ValueError(f"{self.component_id}: persistent record needs a state digest")
        if not self.persistent and self.state_digest is not None:
            raise ValueError(f"{self.component_id}: non-persistent record must not carry a digest")
        if self.state_digest is not None and len(self.state_digest) != DIGEST_LEN:
            raise ValueError(f"{self.component_id}: digest must be {DIGEST_LEN} bytes")

    def to_json(self) -> dict:
        return {
            "component_id": self.component_id,
            "code_ref": str(self.code_ref),
            "persistent": self.persistent,
            "mobile": self.mobile,
            "lifecycle_state": self.lifecycle_state.value,
            "privileges": sorted(p.value for p in self.privileges),
            "state_digest": self.state_digest.hex() if self.state_digest else None,
            "version": self.version,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ComponentRecord":
        return cls(
            component_id=obj["component_id"],
            code_ref=CodeRef.parse(obj["code_ref"]),
            persistent=obj["persistent"],
            mobile=obj["mobile"],
            lifecycle_state=LifecycleState(obj["lifecycle_state"]),
            privileges=frozenset(Privilege(p) for p in obj["privileges"]),
            state_digest=bytes.fromhex(obj["state_digest"]) if obj["state_digest"] else None,
            version=obj["version"],
        )

    def copy(self) -> "ComponentRecord":
        return replace(self)


@dataclass
class BriefcaseManifest:
    """Ordered index of the components in one briefcase."""

    briefcase_id: str
    owner_id: str
    env_version: int = 0
    records: list[ComponentRecord] = field(default_factory=list)

    def validate(self) -> None:
        ids = [r.component_id for r in self.records]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate component ids in manifest")
        for r in self.records:
            r.validate()
        if self.records and self.env_version < max(r.version for r in self.records):
            raise ValueError("env_version below max component version")
        if self.env_version < 0:
            raise ValueError("env_version must be >= 0")

    def record(self, component_id: str) -> ComponentRecord | None:
        for r in self.records:
            if r.component_id == component_id:
                return r
        return None

    def to_json(self) -> dict:
        return {
            "briefcase_id": self.briefcase_id,
            "owner_id": self.owner_id,
            "env_version": self.env_version,
            "records": [r.to_json() for r in self.records],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BriefcaseManifest":
        return cls(
            briefcase_id=obj["briefcase_id"],
            owner_id=obj["owner_id"],
            env_version=obj["env_version"],
            records=[ComponentRecord.from_json(r) for r in obj["records"]],
        )

    def copy(self) -> "BriefcaseManifest":
        return BriefcaseManifest(
            briefcase_id=self.briefcase_id,
            owner_id=self.owner_id,
            env_version=self.env_version,
            records=[r.copy() for r in self.records],
        )


@dataclass
class ServiceBriefcase:
    """Persistent, mobile image of a service environment: manifest plus
    content-addressed state blobs for the persistent components."""

    manifest: BriefcaseManifest
    blobs: dict[str, bytes] = field(default_factory=dict)

    def validate(self) -> None:
        self.manifest.validate()
        persistent_ids = {r.component_id for r in self.manifest.records if r.persistent}
        if set(self.blobs) != persistent_ids:
            raise ValueError("blob set does not match persistent records")
        for r in self.manifest.records:
            if r.persistent and digest(self.blobs[r.component_id]) != r.state_digest:
                raise ValueError(f"{r.component_id}: blob digest mismatch")

    def copy(self) -> "ServiceBriefcase":
        return ServiceBriefcase(manifest=self.manifest.copy(), blobs=dict(self.blobs))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ServiceBriefcase):
            return NotImplemented
        return self.manifest == other.manifest and self.blobs == other.blobs


@dataclass(frozen=True)
class DiffReport:
    """Partition of both manifests' component ids for a one-way sync.

    ``to_transfer`` is stale or absent at the receiver, ``to_delete`` is absent
    at the sender, ``unchanged`` is identical on both sides and need not be sent.
    """

    to_transfer: frozenset[str]
    to_delete: frozenset[str]
    unchanged: frozenset[str]

    def to_json(self) -> dict:
        return {
            "to_transfer": sorted(self.to_transfer),
            "to_delete": sorted(self.to_delete),
            "unchanged": sorted(self.unchanged),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DiffReport":
        return cls(
            to_transfer=frozenset(obj["to_transfer"]),
            to_delete=frozenset(obj["to_delete"]),
            unchanged=frozenset(obj["unchanged"]),
        )


def empty_briefcase(briefcase_id: str, owner_id: str) -> ServiceBriefcase:
    return ServiceBriefcase(manifest=BriefcaseManifest(briefcase_id, owner_id))


def encode_briefcase(b: ServiceBriefcase) -> bytes:
    """Container bytes: magic, length-prefixed canonical manifest, then
    length-prefixed blobs in manifest order (persistent components only)."""
    b.validate()
    header = canonical_json(b.manifest.to_json()).encode("utf-8")
    parts = [MAGIC, _LEN.pack(len(header)), header]
    for rec in b.manifest.records:
        if rec.persistent:
            blob = b.blobs[rec.component_id]
            parts.append(_LEN.pack(len(blob)))
            parts.append(blob)
    return b"".join(parts)


def decode_briefcase(data: bytes) -> ServiceBriefcase:
    """Inverse of :func:`encode_briefcase`. Raises CORRUPT on bad magic,
    truncation, trailing bytes, or any blob digest mismatch."""
    if data[: len(MAGIC)] != MAGIC:
        raise ServiceError(CORRUPT, "bad container magic")
    pos = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise ServiceError(CORRUPT, "truncated container")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    (header_len,) = _LEN.unpack(take(_LEN.size))
    try:
        manifest = BriefcaseManifest.from_json(json.loads(take(header_len)))
    except (ValueError, KeyError, TypeError) as exc:
        raise ServiceError(CORRUPT, f"bad manifest: {exc}") from exc

    blobs: dict[str, bytes] = {}
    for rec in manifest.records:
        if rec.persistent:
            (blob_len,) = _LEN.unpack(take(_LEN.size))
            blob = take(blob_len)
            if digest(blob) != rec.state_digest:
                raise ServiceError(CORRUPT, f"{rec.component_id}: blob digest mismatch")
            blobs[rec.component_id] = blob
    if pos != len(data):
        raise ServiceError(CORRUPT, "trailing bytes after blob section")

    briefcase = ServiceBriefcase(manifest=manifest, blobs=blobs)
    try:
        briefcase.validate()
    except ValueError as exc:
        raise ServiceError(CORRUPT, str(exc)) from exc
    return briefcase


def diff_briefcases(receiver: BriefcaseManifest, sender: BriefcaseManifest) -> DiffReport:
    """Compute what must move for the receiver to become the sender's image.

    A component present on both sides counts as unchanged only when its
    (version, state_digest) pair matches exactly; any disagreement transfers
    the sender's record so the receiver converges on the sender, including
    version skew where the receiver is ahead.
    """
    if receiver.briefcase_id != sender.briefcase_id:
        raise ServiceError(
            BRIEFCASE_ID_MISMATCH,
            f"receiver holds {receiver.briefcase_id!r}, sender sent {sender.briefcase_id!r}",
        )
    recv = {r.component_id: r for r in receiver.records}
    send = {r.component_id: r for r in sender.records}

    to_transfer: set[str] = set()
    to_delete: set[str] = set()
    unchanged: set[str] = set()
    for cid, srec in send.items():
        rrec = recv.get(cid)
        if rrec is not None and (rrec.version, rrec.state_digest) == (srec.version, srec.state_digest):
            unchanged.add(cid)
        else:
            to_transfer.add(cid)
    for cid in recv:
        if cid not in send:
            to_delete.add(cid)
    return DiffReport(frozenset(to_transfer), frozenset(to_delete), frozenset(unchanged))
