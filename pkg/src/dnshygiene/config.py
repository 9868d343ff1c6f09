"""Service configuration file (TOML key-value dialect).

Recognised keys::

    log_dir = "logs"
    feeds = ["feeds/main.csv"]
    override_feeds = ["feeds/local-allow.csv"]   # optional
    exact_feeds = []                             # optional, exact-match only
    heartbeat_s = 60                             # optional

    org.green.listen = "127.0.0.1:5301"
    org.green.group = "treatment"
    org.green.intervention_date = "2018-08-01"   # treatment orgs only

    policy.block_mode = "nxdomain"               # or "sinkhole"
    policy.grey_action = "forward"               # or "block"
    policy.sinkhole_addr = "127.0.0.2"
    policy.sinkhole_ttl = 60
    upstream.addr = "9.9.9.9:53"
    upstream.timeout_ms = 2000

Relative paths are resolved against the directory holding the file.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from .errors import ConfigError
from .firewall import FirewallPolicy, GreyAction, Group, OrgBinding, check_bindings, parse_endpoint
from .wire import BlockMode

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class ServiceConfig:
    bindings: list[OrgBinding]
    policy: FirewallPolicy
    feeds: list[Path]
    log_dir: Path
    override_feeds: list[Path] = field(default_factory=list)
    exact_feeds: list[Path] = field(default_factory=list)
    heartbeat_s: float = 60.0

    def binding(self, org_id: str) -> OrgBinding:
        for b in self.bindings:
            if b.org_id == org_id:
                return b
        raise KeyError(org_id)


def read_toml(path: str | Path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as handle:
            return tomllib.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _date(value) -> date | None:
    if value is None or value == "":
        return None
    if isinstance(value, date):
        return value
    return date.fromisoformat(str(value))


def parse_bindings(orgs: dict) -> list[OrgBinding]:
    bindings = []
    for org_id, spec in orgs.items():
        if not isinstance(spec, dict) or "listen" not in spec:
            raise ConfigError(f"org.{org_id}.listen is required")
        try:
            bindings.append(OrgBinding(
                org_id=org_id,
                listen=parse_endpoint(spec["listen"]),
                group=Group(str(spec.get("group", "treatment")).lower()),
                intervention_date=_date(spec.get("intervention_date")),
            ))
        except ValueError as exc:
            raise ConfigError(f"org.{org_id}: {exc}") from exc
    check_bindings(bindings)
    return bindings


def parse_policy(raw: dict) -> FirewallPolicy:
    policy = raw.get("policy", {})
    upstream = raw.get("upstream", {})
    try:
        return FirewallPolicy(
            grey_action=GreyAction(str(policy.get("grey_action", "forward")).lower()),
            block_mode=BlockMode(str(policy.get("block_mode", "nxdomain")).lower()),
            sinkhole_addr=policy.get("sinkhole_addr"),
            sinkhole_ttl=int(policy.get("sinkhole_ttl", 60)),
            upstream=parse_endpoint(upstream.get("addr", "127.0.0.1:53")),
            upstream_timeout_ms=int(upstream.get("timeout_ms", 2000)),
        )
    except ValueError as exc:
        raise ConfigError(f"policy: {exc}") from exc


def load_config(path: str | Path) -> ServiceConfig:
    path = Path(path)
    raw = read_toml(path)
    base = path.parent

    def resolve(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else base / q

    orgs = raw.get("org", {})
    if not orgs:
        raise ConfigError(f"{path}: at least one org.<id>.listen binding is required")
    if "log_dir" not in raw:
        raise ConfigError(f"{path}: log_dir is required")
    return ServiceConfig(
        bindings=parse_bindings(orgs),
        policy=parse_policy(raw),
        feeds=[resolve(p) for p in raw.get("feeds", [])],
        override_feeds=[resolve(p) for p in raw.get("override_feeds", [])],
        exact_feeds=[resolve(p) for p in raw.get("exact_feeds", [])],
        log_dir=resolve(raw["log_dir"]),
        heartbeat_s=float(raw.get("heartbeat_s", 60)),
    )
