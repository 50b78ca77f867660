"""Two-phase commit for briefcase synchronization.

The sending server coordinates, the receiving server participates. The
payload is a SyncPlan computed from a briefcase diff, so only changed
components travel. Both sides log every phase change durably before
acknowledging it; recovery replays the log, a PREPARED participant asks the
coordinator for the outcome, and a coordinator that never logged a COMMIT
decision aborts.

Wire sequence (one transaction):

    SYNC_BEGIN -> diff reply        receiver locks and reports the diff
    SYNC_TRANSFER -> ack            plan shipped (in-memory at receiver)
    PREPARE -> VOTE                 receiver stages durably, then votes
    COMMIT/ABORT -> ack             receiver applies or discards atomically
"""

from __future__ import annotations

import logging
import secrets
from dataclasses import dataclass, field
from enum import Enum

from . import frames
from .errors import CORRUPT, LOCKED, STORAGE_FULL, TIMEOUT, UNREACHABLE, ServiceError
from .model import (
    BriefcaseManifest,
    ComponentRecord,
    DiffReport,
    ServiceBriefcase,
    canonical_json,
    diff_briefcases,
    digest,
    empty_briefcase,
)
from .store import BriefcaseStore
from .wal import DurableLog

import json

log = logging.getLogger(__name__)

COMMITTED = "COMMITTED"
ABORTED = "ABORTED"


class Role(str, Enum):
    COORDINATOR = "COORDINATOR"
    PARTICIPANT = "PARTICIPANT"


class Phase(str, Enum):
    INIT = "INIT"
    PREPARED = "PREPARED"
    COMMITTED = "COMMITTED"
    ABORTED = "ABORTED"


_LEGAL_PHASE_STEPS = {
    (Phase.INIT, Phase.PREPARED),
    (Phase.INIT, Phase.ABORTED),
    (Phase.PREPARED, Phase.COMMITTED),
    (Phase.PREPARED, Phase.ABORTED),
}


@dataclass
class TwoPhaseState:
    """In-memory view of one transaction's progress on one side."""

    role: Role
    txn_id: str
    briefcase_id: str
    phase: Phase = Phase.INIT
    staged: "SyncPlan | None" = None
    coordinator: str | None = None

    def advance(self, phase: Phase) -> None:
        if (self.phase, phase) not in _LEGAL_PHASE_STEPS:
            raise ServiceError(CORRUPT, f"illegal phase step {self.phase} -> {phase}")
        self.phase = phase


@dataclass
class SyncPlan:
    """Everything the receiver needs to become the sender's image."""

    briefcase_id: str
    txn_id: str
    owner_id: str
    target_env_version: int
    record_order: list[str]
    diff: DiffReport
    transfers: dict[str, tuple[ComponentRecord, bytes | None]] = field(default_factory=dict)

    def validate(self) -> None:
        if set(self.transfers) != set(self.diff.to_transfer):
            raise ValueError("transfer payload keys must equal diff.to_transfer")
        for cid, (record, blob) in self.transfers.items():
            record.validate()
            if record.persistent:
                if blob is None or digest(blob) != record.state_digest:
                    raise ValueError(f"{cid}: transfer blob missing or digest mismatch")
            elif blob is not None:
                raise ValueError(f"{cid}: non-persistent transfer must not carry a blob")

    def to_json(self) -> dict:
        return {
            "briefcase_id": self.briefcase_id,
            "txn_id": self.txn_id,
            "owner_id": self.owner_id,
            "target_env_version": self.target_env_version,
            "record_order": self.record_order,
            "diff": self.diff.to_json(),
            "transfers": {
                cid: {
                    "record": record.to_json(),
                    "blob_b64": frames.b64(blob) if blob is not None else None,
                }
                for cid, (record, blob) in sorted(self.transfers.items())
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SyncPlan":
        transfers = {}
        for cid, entry in obj["transfers"].items():
            blob = frames.unb64(entry["blob_b64"]) if entry["blob_b64"] is not None else None
            transfers[cid] = (ComponentRecord.from_json(entry["record"]), blob)
        return cls(
            briefcase_id=obj["briefcase_id"],
            txn_id=obj["txn_id"],
            owner_id=obj["owner_id"],
            target_env_version=obj["target_env_version"],
            record_order=list(obj["record_order"]),
            diff=DiffReport.from_json(obj["diff"]),
            transfers=transfers,
        )

    def serialize(self) -> bytes:
        return canonical_json(self.to_json()).encode("utf-8")

    @classmethod
    def deserialize(cls, data: bytes) -> "SyncPlan":
        return cls.from_json(json.loads(data.decode("utf-8")))


def build_plan(sender: ServiceBriefcase, diff: DiffReport, txn_id: str) -> SyncPlan:
    transfers: dict[str, tuple[ComponentRecord, bytes | None]] = {}
    for rec in sender.manifest.records:
        if rec.component_id in diff.to_transfer:
            blob = sender.blobs.get(rec.component_id) if rec.persistent else None
            transfers[rec.component_id] = (rec.copy(), blob)
    plan = SyncPlan(
        briefcase_id=sender.manifest.briefcase_id,
        txn_id=txn_id,
        owner_id=sender.manifest.owner_id,
        target_env_version=sender.manifest.env_version,
        record_order=[r.component_id for r in sender.manifest.records],
        diff=diff,
        transfers=transfers,
    )
    plan.validate()
    return plan


def apply_plan(local: ServiceBriefcase | None, plan: SyncPlan) -> ServiceBriefcase:
    """Merge the plan into the receiver's image, yielding the sender's image."""
    if local is None:
        local = empty_briefcase(plan.briefcase_id, plan.owner_id)
    merged = {r.component_id: r.copy() for r in local.manifest.records}
    blobs = dict(local.blobs)
    for cid in plan.diff.to_delete:
        merged.pop(cid, None)
        blobs.pop(cid, None)
    for cid, (record, blob) in plan.transfers.items():
        merged[cid] = record.copy()
        if record.persistent:
            blobs[cid] = blob
        else:
            blobs.pop(cid, None)
    manifest = BriefcaseManifest(
        briefcase_id=plan.briefcase_id,
        owner_id=plan.owner_id,
        env_version=plan.target_env_version,
        records=[merged[cid] for cid in plan.record_order],
    )
    result = ServiceBriefcase(manifest=manifest, blobs=blobs)
    result.validate()
    return result


class CrashNow(Exception):
    """Raised by an injected crash hook to stop a node at a chosen point."""


class SyncCoordinator:
    """Coordinator side: drives one sync transaction against a participant.

    ``crash_hook(point)`` is a test hook invoked at named internal boundaries;
    it may raise CrashNow to model the coordinator dying there.
    """

    def __init__(self, node_id: str, wal: DurableLog, transport, timeout: float = 5.0,
                 outcome_retries: int = 2, crash_hook=None):
        self.node_id = node_id
        self.wal = wal
        self.transport = transport
        self.timeout = timeout
        self.outcome_retries = outcome_retries
        self.crash_hook = crash_hook
        self._req_seq = 0

    def _crash(self, point: str) -> None:
        if self.crash_hook is not None:
            self.crash_hook(point)

    def _rid(self) -> str:
        self._req_seq += 1
        return f"{self.node_id}-c{self._req_seq}"

    def _call(self, dst: str, ftype: str, payload: dict) -> dict:
        reply = self.transport.call(dst, frames.make_frame(ftype, self._rid(), payload), timeout=self.timeout)
        return frames.raise_if_error(reply)

    def new_txn_id(self) -> str:
        return f"txn-{secrets.token_hex(8)}"

    def sync(self, briefcase: ServiceBriefcase, participant: str, txn_id: str | None = None) -> tuple[str, DiffReport | None]:
        """Run one full sync; returns (outcome, diff). Never raises on a dead
        or voting-NO participant, only reports ABORTED."""
        txn_id = txn_id or self.new_txn_id()
        bid = briefcase.manifest.briefcase_id
        self.wal.append({"txn_id": txn_id, "role": "coordinator", "phase": "BEGIN",
                         "briefcase_id": bid, "participant": participant})
        self._crash("after_begin_log")
        try:
            reply = self._call(participant, frames.SYNC_BEGIN, {
                "briefcase_id": bid,
                "txn_id": txn_id,
                "manifest": briefcase.manifest.to_json(),
            })
            self._crash("after_sync_begin")
            diff = DiffReport.from_json(reply["payload"]["diff"])
            plan = build_plan(briefcase, diff, txn_id)
            self._call(participant, frames.SYNC_TRANSFER, {"txn_id": txn_id, "plan": plan.to_json()})
            self._crash("after_transfer")
            vote_reply = self._call(participant, frames.PREPARE, {"txn_id": txn_id, "coordinator": self.node_id})
            vote = vote_reply["payload"].get("vote")
        except CrashNow:
            raise
        except ServiceError as exc:
            if exc.code not in (TIMEOUT, UNREACHABLE, LOCKED, STORAGE_FULL):
                log.warning("sync %s failed: %s", txn_id, exc)
            self._record_outcome(txn_id, ABORTED)
            self._deliver_outcome(participant, txn_id, ABORTED)
            return ABORTED, None
        self._crash("after_vote")
        outcome = COMMITTED if vote == "YES" else ABORTED
        self._record_outcome(txn_id, outcome)
        self._crash("after_decision_log")
        self._deliver_outcome(participant, txn_id, outcome)
        return outcome, diff

    def _record_outcome(self, txn_id: str, outcome: str) -> None:
        self.wal.append({"txn_id": txn_id, "role": "coordinator", "phase": outcome})

    def _deliver_outcome(self, participant: str, txn_id: str, outcome: str) -> bool:
        ftype = frames.COMMIT if outcome == COMMITTED else frames.ABORT
        for _ in range(1 + self.outcome_retries):
            try:
                self._call(participant, ftype, {"txn_id": txn_id})
            except ServiceError:
                continue
            self.wal.append({"txn_id": txn_id, "role": "coordinator", "phase": "DONE"})
            return True
        return False  # participant will learn the outcome by re-asking

    # -- recovery -------------------------------------------------------------

    def decided_outcomes(self) -> dict[str, str]:
        """txn_id -> final phase, reconstructed from the durable log."""
        outcomes: dict[str, str] = {}
        for rec in self.wal.replay():
            if rec.get("role") != "coordinator":
                continue
            if rec["phase"] in (COMMITTED, ABORTED):
                outcomes[rec["txn_id"]] = rec["phase"]
            elif rec["phase"] == "BEGIN":
                outcomes.setdefault(rec["txn_id"], "BEGIN")
        return outcomes

    def decision_for(self, txn_id: str) -> str:
        """Outcome answer for a re-asking participant. An undecided or unknown
        transaction is decided ABORTED, durably, before answering."""
        outcome = self.decided_outcomes().get(txn_id)
        if outcome in (COMMITTED, ABORTED):
            return outcome
        self._record_outcome(txn_id, ABORTED)
        return ABORTED

    def recover(self) -> None:
        """Finish open transactions after a restart: resend logged COMMIT
        decisions, abort everything that never reached a decision."""
        participants: dict[str, str] = {}
        done: set[str] = set()
        for rec in self.wal.replay():
            if rec.get("role") != "coordinator":
                continue
            if rec["phase"] == "BEGIN":
                participants[rec["txn_id"]] = rec["participant"]
            elif rec["phase"] == "DONE":
                done.add(rec["txn_id"])
        for txn_id, outcome in self.decided_outcomes().items():
            if txn_id in done:
                continue
            if outcome == "BEGIN":
                self._record_outcome(txn_id, ABORTED)
                outcome = ABORTED
            dst = participants.get(txn_id)
            if dst is not None:
                self._deliver_outcome(dst, txn_id, outcome)


class SyncParticipant:
    """Participant side: computes diffs, stages plans durably, votes, and
    applies or discards atomically on the coordinator's decision."""

    def __init__(self, node_id: str, store: BriefcaseStore, wal: DurableLog):
        self.node_id = node_id
        self.store = store
        self.wal = wal
        self.txns: dict[str, TwoPhaseState] = {}
        self._pending_plans: dict[str, SyncPlan] = {}
        self._replay()

    def _replay(self) -> None:
        for rec in self.wal.replay():
            if rec.get("role") != "participant":
                continue
            txn_id = rec["txn_id"]
            state = self.txns.get(txn_id)
            if state is None:
                state = TwoPhaseState(Role.PARTICIPANT, txn_id, rec.get("briefcase_id", ""))
                self.txns[txn_id] = state
            state.phase = Phase(rec["phase"])
            if "coordinator" in rec:
                state.coordinator = rec["coordinator"]
            if "briefcase_id" in rec:
                state.briefcase_id = rec["briefcase_id"]
        for state in self.txns.values():
            # A PREPARED transaction still owns its briefcase lock after restart.
            if state.phase == Phase.PREPARED:
                self.store.lock(state.briefcase_id, state.txn_id)
            # A finished transaction's stage is leftover from a crash window.
            elif state.phase in (Phase.COMMITTED, Phase.ABORTED):
                self.store.drop_stage(state.txn_id)

    # -- message handlers ------------------------------------------------------

    def handle_sync_begin(self, briefcase_id: str, txn_id: str, sender_manifest: BriefcaseManifest) -> DiffReport:
        self.store.lock(briefcase_id, txn_id)  # raises LOCKED if another txn holds it
        if self.store.exists(briefcase_id):
            local = self.store.get(briefcase_id).manifest
        else:
            local = BriefcaseManifest(briefcase_id, sender_manifest.owner_id)
        try:
            diff = diff_briefcases(local, sender_manifest)
        except ServiceError:
            self.store.unlock(briefcase_id, txn_id)
            raise
        self.txns[txn_id] = TwoPhaseState(Role.PARTICIPANT, txn_id, briefcase_id)
        return diff

    def handle_sync_transfer(self, txn_id: str, plan: SyncPlan) -> None:
        state = self.txns.get(txn_id)
        if state is None or state.phase != Phase.INIT:
            raise ServiceError(CORRUPT, f"unexpected transfer for txn {txn_id}")
        plan.validate()
        self._pending_plans[txn_id] = plan

    def handle_prepare(self, txn_id: str, coordinator: str) -> str:
        """Returns the vote. VOTE_YES is only ever returned after the plan is
        staged durably and the PREPARED record is on disk."""
        state = self.txns.get(txn_id)
        plan = self._pending_plans.get(txn_id)
        if state is None or plan is None or state.phase != Phase.INIT:
            return "NO"  # lost the plan (crash between transfer and prepare)
        if self.store.lock_holder(plan.briefcase_id) != txn_id:
            return "NO"  # lease expired and someone else may own the briefcase
        try:
            self.store.write_stage(txn_id, plan.serialize())
        except ServiceError as exc:
            if exc.code != STORAGE_FULL:
                raise
            self._abort(state)
            return "NO"
        self.wal.append({"txn_id": txn_id, "role": "participant", "phase": "PREPARED",
                         "briefcase_id": plan.briefcase_id, "coordinator": coordinator})
        state.advance(Phase.PREPARED)
        state.staged = plan
        state.coordinator = coordinator
        return "YES"

    def handle_commit(self, txn_id: str) -> None:
        state = self.txns.get(txn_id)
        if state is not None and state.phase == Phase.COMMITTED:
            return  # duplicate COMMIT, already applied
        staged = self.store.read_stage(txn_id)
        if state is None or state.phase != Phase.PREPARED or staged is None:
            raise ServiceError(CORRUPT, f"COMMIT for txn {txn_id} that is not prepared")
        plan = SyncPlan.deserialize(staged)
        local = self.store.get(plan.briefcase_id) if self.store.exists(plan.briefcase_id) else None
        self.store.install(plan.briefcase_id, apply_plan(local, plan))
        self.wal.append({"txn_id": txn_id, "role": "participant", "phase": "COMMITTED",
                         "briefcase_id": plan.briefcase_id})
        state.advance(Phase.COMMITTED)
        self.store.drop_stage(txn_id)
        self.store.unlock(plan.briefcase_id, txn_id)
        self._pending_plans.pop(txn_id, None)

    def handle_abort(self, txn_id: str) -> None:
        state = self.txns.get(txn_id)
        if state is None or state.phase in (Phase.COMMITTED, Phase.ABORTED):
            return  # unknown or already final: abort is idempotent
        self._abort(state)

    def _abort(self, state: TwoPhaseState) -> None:
        self.wal.append({"txn_id": state.txn_id, "role": "participant", "phase": "ABORTED",
                         "briefcase_id": state.briefcase_id})
        state.advance(Phase.ABORTED)
        self.store.drop_stage(state.txn_id)
        self.store.unlock(state.briefcase_id, state.txn_id)
        self._pending_plans.pop(state.txn_id, None)

    # -- recovery --------------------------------------------------------------

    def unresolved(self) -> list[TwoPhaseState]:
        return [s for s in self.txns.values() if s.phase == Phase.PREPARED]

    def reask_outcomes(self, transport, timeout: float = 5.0) -> None:
        """For every PREPARED transaction, ask the coordinator how it ended."""
        for state in self.unresolved():
            if state.coordinator is None:
                continue
            frame = frames.make_frame(frames.VOTE, f"{self.node_id}-reask-{state.txn_id}",
                                      {"txn_id": state.txn_id, "vote": "YES", "reask": True})
            try:
                reply = frames.raise_if_error(transport.call(state.coordinator, frame, timeout=timeout))
            except ServiceError:
                continue  # coordinator still down; stay blocked (2PC limitation)
            if reply["type"] == frames.COMMIT:
                self.handle_commit(state.txn_id)
            elif reply["type"] == frames.ABORT:
                self.handle_abort(state.txn_id)
