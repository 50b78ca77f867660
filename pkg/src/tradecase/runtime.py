"""The service context: hosts one live service environment, drives the
component lifecycle state machine, enforces privileges deny-by-default, and
mediates inter-component messaging.

All operations on one environment are serialized by the caller (one logical
executor per environment); this module itself holds no locks.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .components import ServiceComponent, resolve_template
from .errors import (
    ILLEGAL_TRANSITION,
    NOT_SUSPENDED,
    PRIVILEGE_DENIED,
    QUEUE_FULL,
    UNKNOWN_COMPONENT,
    ServiceError,
)
from .model import (
    BriefcaseManifest,
    CodeRef,
    ComponentRecord,
    LifecycleState,
    Privilege,
    ServiceBriefcase,
    digest,
)

USER = "user"  # sentinel requester: the environment's owner, always allowed

MESSAGE_QUEUE_LIMIT = 1024

LEGAL_TRANSITIONS = frozenset(
    {
        (LifecycleState.LOADED, LifecycleState.INITIALIZED),
        (LifecycleState.INITIALIZED, LifecycleState.ACTIVE),
        (LifecycleState.ACTIVE, LifecycleState.SUSPENDED),
        (LifecycleState.SUSPENDED, LifecycleState.ACTIVE),
        (LifecycleState.ACTIVE, LifecycleState.KILLED),
        (LifecycleState.SUSPENDED, LifecycleState.KILLED),
    }
)


@dataclass
class Receipt:
    status: str  # DELIVERED or QUEUED
    seq: int


@dataclass
class _Live:
    record: ComponentRecord
    instance: ServiceComponent | None
    captured_state: bytes | None = None
    inbox: deque = field(default_factory=deque)  # (sender, payload, seq) while not ACTIVE


class ComponentContext:
    """A component's handle onto its environment. Every call is privilege
    checked with the component itself as requester."""

    def __init__(self, env: "ServiceEnvironment", component_id: str):
        self.env = env
        self.component_id = component_id

    def send(self, to: str, payload: bytes) -> Receipt:
        return self.env.send_message(self.component_id, to, payload)

    def load_component(self, code_ref, persistent=False, mobile=True, privileges=frozenset()):
        return self.env.load_component(code_ref, persistent, mobile, privileges, requester=self.component_id)

    def transition(self, component_id: str, target: LifecycleState):
        return self.env.transition(component_id, target, requester=self.component_id)


class ServiceEnvironment:
    """One user's live service environment."""

    def __init__(self, briefcase_id: str, owner_id: str, home_server: str | None = None,
                 env_version: int = 0):
        self.briefcase_id = briefcase_id
        self.owner_id = owner_id
        self.home_server = home_server
        self.env_version = env_version
        self.components: dict[str, _Live] = {}
        self._load_seq = 0
        self._msg_seq: dict[tuple[str, str], int] = {}
        self.transition_trace: list[tuple[str, LifecycleState, LifecycleState]] = []

    # -- privileges -----------------------------------------------------------

    def check_privilege(self, requester: str, privilege: Privilege) -> None:
        """Deny by default: only the user, or a component granted the exact
        privilege at load time, passes."""
        if requester == USER:
            return
        live = self.components.get(requester)
        if live is None or privilege not in live.record.privileges:
            raise ServiceError(PRIVILEGE_DENIED, f"{requester} lacks {privilege.value}")

    # -- lifecycle -------------------------------------------------------------

    def _apply_transition(self, live: _Live, target: LifecycleState) -> None:
        current = live.record.lifecycle_state
        if (current, target) not in LEGAL_TRANSITIONS:
            raise ServiceError(ILLEGAL_TRANSITION, f"{current.value} -> {target.value}")
        cid = live.record.component_id
        if target == LifecycleState.INITIALIZED:
            live.instance.on_init(ComponentContext(self, cid))
        elif target == LifecycleState.SUSPENDED:
            self._capture_state(live)
        elif target == LifecycleState.ACTIVE and current == LifecycleState.SUSPENDED:
            live.instance.on_resume(live.captured_state)
        elif target == LifecycleState.KILLED:
            if live.instance is not None:
                live.instance.on_kill()
            live.instance = None
            live.inbox.clear()
        live.record.lifecycle_state = target
        self.transition_trace.append((cid, current, target))
        if target == LifecycleState.ACTIVE:
            self._drain_inbox(live)

    def _capture_state(self, live: _Live) -> None:
        state = live.instance.on_suspend()
        live.captured_state = state
        if live.record.persistent:
            new_digest = digest(state or b"")
            if new_digest != live.record.state_digest:
                live.record.state_digest = new_digest
                live.record.version += 1

    def load_component(self, code_ref: CodeRef | str, persistent: bool, mobile: bool,
                       privileges: frozenset[Privilege], requester: str) -> str:
        self.check_privilege(requester, Privilege.LOAD_COMPONENT)
        privileges = frozenset(privileges)
        if requester != USER:
            # Only the user hands out authority; a loading component cannot
            # grant privileges beyond its own.
            own = self.components[requester].record.privileges
            if not privileges <= own:
                raise ServiceError(PRIVILEGE_DENIED, f"{requester} cannot grant {sorted(p.value for p in privileges - own)}")
        if isinstance(code_ref, str):
            code_ref = CodeRef.parse(code_ref)
        template = resolve_template(code_ref)
        self._load_seq += 1
        cid = f"{code_ref.name}-{self._load_seq}"
        record = ComponentRecord(
            component_id=cid,
            code_ref=code_ref,
            persistent=persistent,
            mobile=mobile,
            lifecycle_state=LifecycleState.LOADED,
            privileges=privileges,
            state_digest=digest(b"") if persistent else None,
            version=0,
        )
        live = _Live(record=record, instance=template())
        self.components[cid] = live
        self._apply_transition(live, LifecycleState.INITIALIZED)
        self._apply_transition(live, LifecycleState.ACTIVE)
        return cid

    def restore_component(self, record: ComponentRecord, state: bytes | None) -> str:
        """Bring a component back from a briefcase record: persistent state is
        handed to on_resume, non-persistent components re-initialize fresh."""
        template = resolve_template(record.code_ref)
        rec = record.copy()
        live = _Live(record=rec, instance=template(), captured_state=state)
        self.components[rec.component_id] = live
        self._load_seq = max(self._load_seq, _trailing_number(rec.component_id))
        if rec.persistent:
            rec.lifecycle_state = LifecycleState.SUSPENDED
            self._apply_transition(live, LifecycleState.ACTIVE)
        else:
            rec.lifecycle_state = LifecycleState.LOADED
            self._apply_transition(live, LifecycleState.INITIALIZED)
            self._apply_transition(live, LifecycleState.ACTIVE)
        return rec.component_id

    def transition(self, component_id: str, target: LifecycleState, requester: str) -> LifecycleState:
        live = self.components.get(component_id)
        if live is None:
            raise ServiceError(UNKNOWN_COMPONENT, f"no component {component_id}")
        self.check_privilege(requester, _privilege_for(live.record.lifecycle_state, target))
        self._apply_transition(live, target)
        return live.record.lifecycle_state

    def state_of(self, component_id: str) -> LifecycleState:
        live = self.components.get(component_id)
        if live is None:
            raise ServiceError(UNKNOWN_COMPONENT, f"no component {component_id}")
        return live.record.lifecycle_state

    # -- messaging --------------------------------------------------------------

    def send_message(self, sender: str, recipient: str, payload: bytes) -> Receipt:
        if sender != USER and sender not in self.components:
            raise ServiceError(UNKNOWN_COMPONENT, f"no sender {sender}")
        live = self.components.get(recipient)
        if live is None or live.record.lifecycle_state == LifecycleState.KILLED:
            raise ServiceError(UNKNOWN_COMPONENT, f"no recipient {recipient}")
        key = (sender, recipient)
        seq = self._msg_seq.get(key, 0) + 1
        self._msg_seq[key] = seq
        if live.record.lifecycle_state == LifecycleState.ACTIVE:
            live.instance.on_message(sender, payload)
            return Receipt("DELIVERED", seq)
        if len(live.inbox) >= MESSAGE_QUEUE_LIMIT:
            raise ServiceError(QUEUE_FULL, f"{recipient} inbox full")
        live.inbox.append((sender, payload, seq))
        return Receipt("QUEUED", seq)

    def _drain_inbox(self, live: _Live) -> None:
        while live.inbox:
            sender, payload, _seq = live.inbox.popleft()
            live.instance.on_message(sender, payload)

    # -- snapshot and bulk control ----------------------------------------------

    def snapshot(self) -> ServiceBriefcase:
        """Briefcase image of this environment. Requires every component to be
        suspended or killed; non-mobile components are left out entirely."""
        for live in self.components.values():
            if live.record.lifecycle_state not in (LifecycleState.SUSPENDED, LifecycleState.KILLED):
                raise ServiceError(
                    NOT_SUSPENDED,
                    f"{live.record.component_id} is {live.record.lifecycle_state.value}",
                )
        records = []
        blobs = {}
        for cid, live in self.components.items():
            rec = live.record
            if not rec.mobile or rec.lifecycle_state == LifecycleState.KILLED:
                continue
            records.append(rec.copy())
            if rec.persistent:
                blobs[cid] = live.captured_state or b""
        env_version = max([self.env_version] + [r.version for r in records])
        manifest = BriefcaseManifest(self.briefcase_id, self.owner_id, env_version, records)
        briefcase = ServiceBriefcase(manifest=manifest, blobs=blobs)
        briefcase.validate()
        return briefcase

    def suspend_all(self) -> list[str]:
        """Suspend every ACTIVE component; returns their ids for a later resume."""
        suspended = []
        for cid, live in self.components.items():
            if live.record.lifecycle_state == LifecycleState.ACTIVE:
                self._apply_transition(live, LifecycleState.SUSPENDED)
                suspended.append(cid)
        return suspended

    def resume_components(self, component_ids: list[str]) -> None:
        for cid in component_ids:
            live = self.components.get(cid)
            if live is not None and live.record.lifecycle_state == LifecycleState.SUSPENDED:
                self._apply_transition(live, LifecycleState.ACTIVE)

    def kill_all(self) -> None:
        for live in self.components.values():
            if live.record.lifecycle_state in (LifecycleState.ACTIVE, LifecycleState.SUSPENDED):
                self._apply_transition(live, LifecycleState.KILLED)

    def status(self) -> dict:
        return {
            "briefcase_id": self.briefcase_id,
            "owner_id": self.owner_id,
            "env_version": self.env_version,
            "home_server": self.home_server,
            "components": [live.record.to_json() for live in self.components.values()],
        }

    @classmethod
    def from_briefcase(cls, briefcase: ServiceBriefcase, home_server: str | None = None) -> "ServiceEnvironment":
        env = cls(
            briefcase_id=briefcase.manifest.briefcase_id,
            owner_id=briefcase.manifest.owner_id,
            home_server=home_server,
            env_version=briefcase.manifest.env_version,
        )
        for record in briefcase.manifest.records:
            env.restore_component(record, briefcase.blobs.get(record.component_id))
        return env


def _privilege_for(current: LifecycleState, target: LifecycleState) -> Privilege:
    if target == LifecycleState.SUSPENDED:
        return Privilege.SUSPEND_COMPONENT
    if target == LifecycleState.KILLED:
        return Privilege.KILL_COMPONENT
    if target == LifecycleState.ACTIVE and current == LifecycleState.SUSPENDED:
        return Privilege.RESUME_COMPONENT
    # INITIALIZED and first activation belong to the load flow.
    return Privilege.LOAD_COMPONENT


def _trailing_number(component_id: str) -> int:
    tail = component_id.rsplit("-", 1)[-1]
    return int(tail) if tail.isdigit() else 0
