import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tradecase.model import (
    BriefcaseManifest,
    CodeRef,
    ComponentRecord,
    LifecycleState,
    ServiceBriefcase,
    digest,
)


def make_record(cid: str, version: int = 0, blob: bytes | None = None,
                persistent: bool | None = None, mobile: bool = True) -> ComponentRecord:
    if persistent is None:
        persistent = blob is not None
    return ComponentRecord(
        component_id=cid,
        code_ref=CodeRef("notepad", "1"),
        persistent=persistent,
        mobile=mobile,
        lifecycle_state=LifecycleState.SUSPENDED,
        state_digest=digest(blob if blob is not None else b"") if persistent else None,
        version=version,
    )


def make_briefcase(briefcase_id: str, owner: str, parts: dict[str, tuple[int, bytes | None]],
                   env_version: int | None = None) -> ServiceBriefcase:
    """parts: component_id -> (version, blob or None for non-persistent)."""
    records, blobs = [], {}
    for cid, (version, blob) in parts.items():
        records.append(make_record(cid, version, blob))
        if blob is not None:
            blobs[cid] = blob
    if env_version is None:
        env_version = max([r.version for r in records], default=0)
    manifest = BriefcaseManifest(briefcase_id, owner, env_version, records)
    briefcase = ServiceBriefcase(manifest=manifest, blobs=blobs)
    briefcase.validate()
    return briefcase


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)
