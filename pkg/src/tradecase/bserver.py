"""The briefcase server node: stores briefcases behind the wire API, runs
diff-based synchronization under two-phase commit, and hosts live service
environments so whole environments can migrate between nodes.

One node plays coordinator when it pushes a briefcase out and participant
when a peer pushes one in. All mutations of one briefcase are serialized
through its advisory lock; the host-level mutex keeps frame handling safe
under the threaded TCP front end.
"""

from __future__ import annotations

import logging
import os
import threading
import time

from . import frames
from .auth import TokenTable
from .errors import (
    BAD_REQUEST,
    DESTINATION_UNREACHABLE,
    NOT_FOUND,
    UNAUTHORIZED,
    ServiceError,
)
from .model import (
    BriefcaseManifest,
    CodeRef,
    LifecycleState,
    Privilege,
    decode_briefcase,
    encode_briefcase,
)
from .runtime import USER, ServiceEnvironment
from .store import BriefcaseStore
from .twophase import COMMITTED, SyncCoordinator, SyncParticipant, SyncPlan
from .wal import DurableLog

log = logging.getLogger(__name__)

MIGRATION_COMPLETED = "COMPLETED"
MIGRATION_ROLLED_BACK = "ROLLED_BACK"


class ServiceHost:
    def __init__(self, node_id: str, data_dir: str, tokens: TokenTable | None = None,
                 transport=None, lock_lease: float = 30.0, clock=time.monotonic,
                 crash_hook=None, rpc_timeout: float = 5.0):
        self.node_id = node_id
        self.data_dir = data_dir
        self.tokens = tokens or TokenTable()
        self.transport = transport
        self.store = BriefcaseStore(data_dir, lock_lease=lock_lease, clock=clock)
        self.wal = DurableLog(os.path.join(data_dir, "txn.log"))
        self.participant = SyncParticipant(node_id, self.store, self.wal)
        self.coordinator = SyncCoordinator(node_id, self.wal, transport,
                                           timeout=rpc_timeout, crash_hook=crash_hook)
        self.environments: dict[str, ServiceEnvironment] = {}
        self._mutex = threading.RLock()

    def recover(self) -> None:
        """Finish whatever a crash interrupted: the coordinator pushes out
        logged decisions, the participant asks after its PREPARED txns."""
        self.coordinator.recover()
        if self.transport is not None:
            self.participant.reask_outcomes(self.transport, timeout=self.coordinator.timeout)

    # -- briefcase API ------------------------------------------------------------

    def create_briefcase(self, owner_id: str, briefcase_id: str | None = None) -> str:
        return self.store.create(owner_id, briefcase_id)

    def _authorize(self, briefcase_id: str, token: str | None) -> None:
        owner = self.tokens.owner(token)
        manifest = self.store.get(briefcase_id).manifest
        if manifest.owner_id != owner:
            raise ServiceError(UNAUTHORIZED, f"briefcase {briefcase_id} belongs to {manifest.owner_id}")

    def get_briefcase(self, briefcase_id: str, token: str | None):
        self._authorize(briefcase_id, token)
        return self.store.get(briefcase_id)

    def put_briefcase(self, briefcase_id: str, briefcase, token: str | None) -> int:
        self._authorize(briefcase_id, token)
        if briefcase.manifest.briefcase_id != briefcase_id:
            raise ServiceError(BAD_REQUEST, "briefcase id mismatch in payload")
        return self.store.put(briefcase_id, briefcase)

    def delete_briefcase(self, briefcase_id: str, token: str | None) -> None:
        self._authorize(briefcase_id, token)
        self.store.delete(briefcase_id)

    def sync_to(self, briefcase_id: str, destination: str) -> tuple[str, dict | None]:
        """Push this node's copy to a peer under two-phase commit."""
        briefcase = self.store.get(briefcase_id)
        outcome, diff = self.coordinator.sync(briefcase, destination)
        return outcome, diff.to_json() if diff is not None else None

    # -- environment hosting ---------------------------------------------------------

    def open_environment(self, briefcase_id: str) -> dict:
        with self._mutex:
            env = self.environments.get(briefcase_id)
            if env is None:
                briefcase = self.store.get(briefcase_id)
                env = ServiceEnvironment.from_briefcase(briefcase, home_server=self.node_id)
                self.environments[briefcase_id] = env
            return env.status()

    def environment(self, briefcase_id: str) -> ServiceEnvironment:
        env = self.environments.get(briefcase_id)
        if env is None:
            raise ServiceError(NOT_FOUND, f"no live environment for {briefcase_id}")
        return env

    def migrate_environment(self, briefcase_id: str, destination: str,
                            requester: str = USER) -> dict:
        """Suspend, snapshot, sync under 2PC, then either hand off or roll back.

        COMPLETED means the destination runs the environment and this node
        dropped its live instance; ROLLED_BACK means every previously active
        component is active here again."""
        with self._mutex:
            env = self.environment(briefcase_id)
            env.check_privilege(requester, Privilege.MIGRATE_ENVIRONMENT)
            previously_active = env.suspend_all()
            snapshot = env.snapshot()
            self.store.put(briefcase_id, snapshot)
            outcome, _diff = self.coordinator.sync(self.store.get(briefcase_id), destination)
            if outcome != COMMITTED:
                env.resume_components(previously_active)
                return {"result": MIGRATION_ROLLED_BACK, "reason": DESTINATION_UNREACHABLE}
            try:
                reply = self.transport.call(
                    destination,
                    frames.make_frame(frames.MIGRATE, f"{self.node_id}-activate-{briefcase_id}",
                                      {"briefcase_id": briefcase_id, "activate": True}),
                    timeout=self.coordinator.timeout,
                )
                frames.raise_if_error(reply)
            except ServiceError:
                env.resume_components(previously_active)
                return {"result": MIGRATION_ROLLED_BACK, "reason": "ACTIVATION_FAILED"}
            env.kill_all()
            del self.environments[briefcase_id]
            return {"result": MIGRATION_COMPLETED, "destination": destination}

    def shutdown_environment(self, briefcase_id: str, requester: str = USER) -> dict:
        """Suspend, snapshot to the home server, kill everything. Idempotent."""
        with self._mutex:
            env = self.environments.get(briefcase_id)
            if env is None:
                return {"result": "SHUT_DOWN"}
            env.check_privilege(requester, Privilege.SHUTDOWN_ENVIRONMENT)
            env.suspend_all()
            snapshot = env.snapshot()
            self.store.put(briefcase_id, snapshot)
            env.kill_all()
            del self.environments[briefcase_id]
            if env.home_server and env.home_server != self.node_id and self.transport is not None:
                try:
                    self.coordinator.sync(self.store.get(briefcase_id), env.home_server)
                except ServiceError:
                    log.warning("could not push final snapshot of %s home", briefcase_id)
            return {"result": "SHUT_DOWN"}

    # -- frame dispatch -----------------------------------------------------------------

    def handle_frame(self, frame: dict) -> dict:
        rid = frame.get("request_id", "")
        try:
            with self._mutex:
                return self._dispatch(frame["type"], rid, frame["payload"])
        except ServiceError as exc:
            return frames.error_frame(rid, exc)

    def _dispatch(self, ftype: str, rid: str, p: dict) -> dict:
        if ftype == frames.CREATE:
            briefcase_id = self.create_briefcase(p["owner_id"], p.get("briefcase_id"))
            return frames.make_frame(frames.ACK, rid, {"briefcase_id": briefcase_id})
        if ftype == frames.GET:
            briefcase = self.get_briefcase(p["briefcase_id"], p.get("token"))
            return frames.make_frame(frames.ACK, rid, {
                "briefcase_b64": frames.b64(encode_briefcase(briefcase)),
                "env_version": briefcase.manifest.env_version,
            })
        if ftype == frames.PUT:
            briefcase = decode_briefcase(frames.unb64(p["briefcase_b64"]))
            env_version = self.put_briefcase(p["briefcase_id"], briefcase, p.get("token"))
            return frames.make_frame(frames.ACK, rid, {"env_version": env_version})
        if ftype == frames.DELETE:
            self.delete_briefcase(p["briefcase_id"], p.get("token"))
            return frames.make_frame(frames.ACK, rid, {})

        # Server-to-server synchronization (participant side).
        if ftype == frames.SYNC_BEGIN:
            diff = self.participant.handle_sync_begin(
                p["briefcase_id"], p["txn_id"], BriefcaseManifest.from_json(p["manifest"]))
            return frames.make_frame(frames.ACK, rid, {"diff": diff.to_json()})
        if ftype == frames.SYNC_TRANSFER:
            self.participant.handle_sync_transfer(p["txn_id"], SyncPlan.from_json(p["plan"]))
            return frames.make_frame(frames.ACK, rid, {})
        if ftype == frames.PREPARE:
            vote = self.participant.handle_prepare(p["txn_id"], p["coordinator"])
            return frames.make_frame(frames.VOTE, rid, {"txn_id": p["txn_id"], "vote": vote})
        if ftype == frames.COMMIT:
            self.participant.handle_commit(p["txn_id"])
            return frames.make_frame(frames.ACK, rid, {"txn_id": p["txn_id"]})
        if ftype == frames.ABORT:
            self.participant.handle_abort(p["txn_id"])
            return frames.make_frame(frames.ACK, rid, {"txn_id": p["txn_id"]})
        if ftype == frames.VOTE:
            # A recovering participant asking how its PREPARED txn ended.
            outcome = self.coordinator.decision_for(p["txn_id"])
            reply_type = frames.COMMIT if outcome == COMMITTED else frames.ABORT
            return frames.make_frame(reply_type, rid, {"txn_id": p["txn_id"]})

        # Runtime control.
        if ftype == frames.LOAD:
            env = self._env_for(p)
            cid = env.load_component(
                CodeRef.parse(p["code_ref"]),
                persistent=bool(p.get("persistent", False)),
                mobile=bool(p.get("mobile", True)),
                privileges=frozenset(Privilege(x) for x in p.get("privileges", [])),
                requester=USER,
            )
            return frames.make_frame(frames.ACK, rid, {"component_id": cid})
        if ftype == frames.TRANSITION:
            env = self._env_for(p)
            state = env.transition(p["component_id"], LifecycleState(p["target"]), USER)
            return frames.make_frame(frames.ACK, rid, {"state": state.value})
        if ftype == frames.MESSAGE:
            env = self._env_for(p)
            receipt = env.send_message(p.get("from", USER), p["to"], frames.unb64(p["payload_b64"]))
            return frames.make_frame(frames.ACK, rid, {"status": receipt.status, "seq": receipt.seq})
        if ftype == frames.MIGRATE:
            if p.get("activate"):
                # Peer handoff after a committed sync: start the environment here.
                status = self.open_environment(p["briefcase_id"])
                return frames.make_frame(frames.ACK, rid, {"status": status})
            self._authorize(p["briefcase_id"], p.get("token"))
            result = self.migrate_environment(p["briefcase_id"], p["destination"])
            return frames.make_frame(frames.ACK, rid, result)
        if ftype == frames.SHUTDOWN:
            self._authorize(p["briefcase_id"], p.get("token"))
            result = self.shutdown_environment(p["briefcase_id"])
            return frames.make_frame(frames.ACK, rid, result)
        if ftype == frames.STATUS:
            self._authorize(p["briefcase_id"], p.get("token"))
            env = self.environments.get(p["briefcase_id"])
            if env is not None:
                return frames.make_frame(frames.ACK, rid, {"live": True, "status": env.status()})
            manifest = self.store.get(p["briefcase_id"]).manifest
            return frames.make_frame(frames.ACK, rid, {"live": False, "status": manifest.to_json()})

        raise ServiceError(BAD_REQUEST, f"unsupported frame type {ftype}")

    def _env_for(self, p: dict) -> ServiceEnvironment:
        self._authorize(p["briefcase_id"], p.get("token"))
        env = self.environments.get(p["briefcase_id"])
        if env is None:
            self.open_environment(p["briefcase_id"])
            env = self.environments[p["briefcase_id"]]
        return env
