"""Per-query firewall logic: classify, decide, answer or forward, record."""

from __future__ import annotations

import enum
import ipaddress
import socket
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from typing import Callable

from .errors import ConfigError, WireError
from .intel import IntelStore, Status, TrafficClass, Verdict
from .querylog import UNPARSEABLE, Action, QueryRecord, check_org_id
from .wire import (
    QCLASS_IN, RCODE_FORMERR, RCODE_SERVFAIL, BlockMode, QueryView, formerr_for,
    parse_query, parse_response_meta, synthesize_block_response, synthesize_error_response,
)


class Group(str, enum.Enum):
    CONTROL = "control"
    TREATMENT = "treatment"


class GreyAction(str, enum.Enum):
    FORWARD = "forward"
    BLOCK = "block"


Endpoint = tuple[str, int]


def parse_endpoint(text: str) -> Endpoint:
    """``host:port`` or ``[v6]:port``."""
    text = text.strip()
    if text.startswith("["):
        host, _, port = text[1:].partition("]:")
    else:
        host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"endpoint {text!r} is not host:port")
    ipaddress.ip_address(host)
    return host, int(port)


@dataclass(frozen=True)
class OrgBinding:
    org_id: str
    listen: Endpoint
    group: Group = Group.TREATMENT
    intervention_date: date | None = None

    def __post_init__(self) -> None:
        check_org_id(self.org_id)
        if self.group is Group.CONTROL and self.intervention_date is not None:
            raise ConfigError(f"control org {self.org_id} cannot carry an intervention date")


def check_bindings(bindings: list[OrgBinding]) -> None:
    seen: dict[Endpoint, str] = {}
    for b in bindings:
        if b.listen in seen:
            raise ConfigError(f"endpoint {b.listen[0]}:{b.listen[1]} bound to both {seen[b.listen]} and {b.org_id}")
        seen[b.listen] = b.org_id
    ids = [b.org_id for b in bindings]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate org id in bindings")


@dataclass(frozen=True)
class FirewallPolicy:
    block_statuses: frozenset[Status] = frozenset({Status.CONVICTED, Status.BLACKLISTED})
    block_classes: frozenset[TrafficClass] = frozenset({TrafficClass.MALICIOUS})
    grey_action: GreyAction = GreyAction.FORWARD
    block_mode: BlockMode = BlockMode.NXDOMAIN
    sinkhole_addr: str | None = None
    sinkhole_ttl: int = 60
    upstream: Endpoint = ("127.0.0.1", 53)
    upstream_timeout_ms: int = 2000

    def __post_init__(self) -> None:
        if self.upstream_timeout_ms <= 0:
            raise ConfigError("upstream timeout must be positive")
        if self.block_mode is BlockMode.SINKHOLE:
            if not self.sinkhole_addr:
                raise ConfigError("sinkhole mode needs policy.sinkhole_addr")
            ipaddress.IPv4Address(self.sinkhole_addr)


def decide_action(policy: FirewallPolicy, verdict: Verdict) -> bool:
    """True when the verdict should be answered locally instead of forwarded."""
    if verdict.cls is TrafficClass.GREY:
        return policy.grey_action is GreyAction.BLOCK
    if verdict.matched is None:
        return False
    return verdict.cls in policy.block_classes and verdict.matched.status in policy.block_statuses


@dataclass
class Decision:
    """Outcome of the local part of query handling.

    When ``response`` is None and ``forward`` is True the caller must relay
    ``raw`` upstream and finish the record with the upstream rcode.
    """

    query: QueryView | None
    verdict: Verdict
    response: bytes | None
    forward: bool
    record_fields: dict = field(default_factory=dict)

    def record(self, rcode: int) -> QueryRecord:
        return QueryRecord(rcode=rcode, **self.record_fields)


def _fields(binding, now, qname, qtype, verdict, action) -> dict:
    matched = verdict.matched
    hostile = verdict.cls is not TrafficClass.BENIGN
    return dict(
        ts=now.astimezone(timezone.utc).replace(microsecond=0),
        org=binding.org_id,
        qname=qname,
        qtype=qtype,
        cls=verdict.cls,
        action=action,
        matched=str(matched.domain) if hostile and matched is not None else None,
        tags=tuple(sorted(matched.tags)) if hostile and matched is not None else None,
    )


BENIGN = Verdict(TrafficClass.BENIGN)


def decide(binding: OrgBinding, policy: FirewallPolicy, store: IntelStore, raw: bytes, now: datetime) -> Decision:
    try:
        q = parse_query(raw)
    except WireError:
        fields = _fields(binding, now, UNPARSEABLE, 0, BENIGN, Action.BLOCKED)
        return Decision(None, BENIGN, formerr_for(bytes(raw)), False, fields)
    qname = str(q.qname)
    # non-IN classes are relayed untouched and logged benign
    verdict = store.classify(q.qname) if q.qclass == QCLASS_IN else BENIGN
    if decide_action(policy, verdict):
        response = synthesize_block_response(q, policy.block_mode, policy.sinkhole_addr, policy.sinkhole_ttl)
        fields = _fields(binding, now, qname, q.qtype, verdict, Action.BLOCKED)
        return Decision(q, verdict, response, False, fields)
    fields = _fields(binding, now, qname, q.qtype, verdict, Action.FORWARDED)
    return Decision(q, verdict, None, True, fields)


def response_rcode(decision: Decision, response: bytes | None) -> int:
    if response is None:
        return RCODE_FORMERR
    return parse_response_meta(response).rcode


def forward_upstream(raw: bytes, upstream: Endpoint, timeout_ms: int) -> bytes:
    """Relay one query over UDP and return the first reply with a matching id.

    Replies with other ids are ignored; on timeout or socket failure a
    SERVFAIL echoing the question is returned instead.
    """
    deadline = time.monotonic() + timeout_ms / 1000
    query_id = raw[:2]
    family = socket.AF_INET6 if ":" in upstream[0] else socket.AF_INET
    with socket.socket(family, socket.SOCK_DGRAM) as sock:
        try:
            sock.connect(upstream)
            sock.send(raw)
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                sock.settimeout(remaining)
                reply = sock.recv(65535)
                if len(reply) >= 12 and reply[:2] == query_id:
                    return reply
        except OSError:
            # timeout, ICMP refusal or unroutable upstream
            pass
    return servfail_for(raw)


def servfail_for(raw: bytes) -> bytes:
    return synthesize_error_response(parse_query(raw), RCODE_SERVFAIL)


def handle_query(
    binding: OrgBinding,
    policy: FirewallPolicy,
    store: IntelStore,
    raw: bytes,
    now: datetime,
    *,
    forward: Callable[[bytes, Endpoint, int], bytes] = forward_upstream,
) -> tuple[bytes | None, QueryRecord]:
    """Blocking single-query path. Returns ``(response or None, record)``.

    A None response means the datagram should be dropped silently.
    """
    decision = decide(binding, policy, store, raw, now)
    if decision.forward:
        response = forward(raw, policy.upstream, policy.upstream_timeout_ms)
    else:
        response = decision.response
    return response, decision.record(response_rcode(decision, response))
