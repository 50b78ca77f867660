"""Operator configuration: a flat ``key=value`` file with flag overrides.

Unknown keys are rejected so a typo fails loudly instead of silently
running with defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import BAD_REQUEST, ServiceError


@dataclass
class Config:
    listen: str = "127.0.0.1:7420"
    data_dir: str = "./data"
    tokens: str | None = None
    seed: int = 0
    venues: int = 1
    instruments: list[str] = field(default_factory=lambda: ["STK"])
    ticks: int = 0
    kill_policy: str = "OWNER_OR_BROKER"
    bucket_capacity: int = 10
    bucket_refill: int = 5
    lock_lease: float = 30.0
    agents: str = ""  # deploy spec: "template:k=v;k=v,template:..." per agent
    session_log: str | None = None

    def venue_ids(self) -> list[str]:
        return [f"V{i + 1}" for i in range(self.venues)]


_INT_KEYS = {"seed", "venues", "ticks", "bucket_capacity", "bucket_refill"}
_FLOAT_KEYS = {"lock_lease"}
_LIST_KEYS = {"instruments"}


def load_config(path: str | None = None, overrides: dict | None = None) -> Config:
    config = Config()
    known = {f.name for f in fields(Config)}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if not sep or key not in known:
                    raise ServiceError(BAD_REQUEST, f"{path}:{lineno}: unknown config key {key!r}")
                _assign(config, key, value)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in known:
            raise ServiceError(BAD_REQUEST, f"unknown config key {key!r}")
        setattr(config, key, value)
    if config.kill_policy not in ("OWNER_OR_BROKER", "BROKER_ONLY"):
        raise ServiceError(BAD_REQUEST, f"bad kill_policy {config.kill_policy!r}")
    return config


def _assign(config: Config, key: str, value: str) -> None:
    if key in _INT_KEYS:
        setattr(config, key, int(value))
    elif key in _FLOAT_KEYS:
        setattr(config, key, float(value))
    elif key in _LIST_KEYS:
        setattr(config, key, [x.strip() for x in value.split(",") if x.strip()])
    else:
        setattr(config, key, value)


def parse_agent_specs(spec: str, owner_id: str, cash: int = 1_000_000) -> list[dict]:
    """``greedy:instrument=STK,target_qty=10;maker:instrument=STK,...`` into
    registration dicts consumed by run_session."""
    registrations = []
    for i, part in enumerate(x for x in spec.split(";") if x.strip()):
        template, sep, params_text = part.strip().partition(":")
        params = {}
        if sep and params_text:
            for pair in params_text.split(","):
                key, psep, value = pair.partition("=")
                if not psep:
                    raise ServiceError(BAD_REQUEST, f"bad agent param {pair!r}")
                params[key.strip()] = value.strip()
        registrations.append({
            "agent_id": f"a{i + 1}",
            "owner_id": owner_id,
            "code_ref": template,
            "params": params,
            "cash": cash,
        })
    return registrations
