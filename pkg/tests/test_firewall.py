import time
from datetime import date

import pytest

from dnshygiene.errors import ConfigError
from dnshygiene.firewall import (
    FirewallPolicy, GreyAction, Group, OrgBinding, check_bindings, forward_upstream, handle_query, parse_endpoint,
)
from dnshygiene.intel import TrafficClass
from dnshygiene.querylog import UNPARSEABLE, Action
from dnshygiene.wire import BlockMode, DomainName, QueryView, encode_query, first_a_answer, parse_response_meta

from .conftest import StubUpstream, free_port, ts

GREEN = OrgBinding("green", ("127.0.0.1", 5301), Group.TREATMENT)
NOW = ts(2018, 9, 17, 10)


def q(name: str, qid: int = 42, qtype: int = 1, qclass: int = 1) -> bytes:
    return encode_query(QueryView(qid, DomainName.parse(name), qtype, qclass))


def policy(upstream, **kw) -> FirewallPolicy:
    return FirewallPolicy(upstream=upstream, upstream_timeout_ms=kw.pop("timeout_ms", 500), **kw)


def test_convicted_domain_blocked_without_upstream(demo_store):
    with StubUpstream() as stub:
        resp, record = handle_query(GREEN, policy(stub.endpoint), demo_store, q("x.evil.example"), NOW)
    meta = parse_response_meta(resp)
    assert (meta.id, meta.rcode) == (42, 3)
    assert (record.org, record.cls, record.action, record.rcode) == ("green", TrafficClass.MALICIOUS, Action.BLOCKED, 3)
    assert record.matched == "evil.example" and record.ts == NOW
    assert stub.count == 0


def test_benign_forwarded_transparently(demo_store):
    with StubUpstream() as stub:
        raw = q("www.example.com")
        resp, record = handle_query(GREEN, policy(stub.endpoint), demo_store, raw, NOW)
        assert resp == StubUpstream.reply_for(raw)
        assert stub.qnames() == ["www.example.com"]
    assert (record.cls, record.action, record.rcode) == (TrafficClass.BENIGN, Action.FORWARDED, 0)


def test_upstream_rcode_is_logged(demo_store):
    with StubUpstream("servfail") as stub:
        _, record = handle_query(GREEN, policy(stub.endpoint), demo_store, q("www.example.com"), NOW)
    assert record.rcode == 2 and record.action is Action.FORWARDED


def test_grey_forward_is_alert_only(demo_store):
    with StubUpstream() as stub:
        resp, record = handle_query(GREEN, policy(stub.endpoint), demo_store, q("counter.yadro.ru"), NOW)
        assert stub.count == 1
    assert record.cls is TrafficClass.GREY and record.action is Action.FORWARDED
    assert record.tags == ("adware", "spyware")


def test_grey_block_policy(demo_store):
    with StubUpstream() as stub:
        p = policy(stub.endpoint, grey_action=GreyAction.BLOCK)
        resp, record = handle_query(GREEN, p, demo_store, q("counter.yadro.ru"), NOW)
        assert stub.count == 0
    assert record.action is Action.BLOCKED and parse_response_meta(resp).rcode == 3


def test_sinkhole_mode(demo_store):
    p = policy(("127.0.0.1", free_port()), block_mode=BlockMode.SINKHOLE, sinkhole_addr="127.0.0.2")
    resp, record = handle_query(GREEN, p, demo_store, q("evil.example"), NOW)
    assert first_a_answer(resp) == "127.0.0.2" and record.rcode == 0 and record.action is Action.BLOCKED


def test_non_in_class_forwarded_benign(demo_store):
    with StubUpstream() as stub:
        _, record = handle_query(GREEN, policy(stub.endpoint), demo_store, q("evil.example", qclass=3), NOW)
        assert stub.count == 1
    assert record.cls is TrafficClass.BENIGN and record.action is Action.FORWARDED


def test_unparseable_gets_formerr_or_silence(demo_store):
    p = policy(("127.0.0.1", free_port()))
    resp, record = handle_query(GREEN, p, demo_store, b"\x12\x34\x01\x00\x00\x01" + b"\x00" * 6 + b"\x40", NOW)
    assert parse_response_meta(resp).rcode == 1 and parse_response_meta(resp).id == 0x1234
    assert record.qname == UNPARSEABLE and record.cls is TrafficClass.BENIGN and record.rcode == 1
    resp, record = handle_query(GREEN, p, demo_store, b"\x12", NOW)
    assert resp is None and record.qname == UNPARSEABLE


def test_forward_timeout_servfail():
    port = free_port()
    with StubUpstream("silent") as stub:
        start = time.monotonic()
        resp = forward_upstream(q("www.example.com"), stub.endpoint, 300)
        elapsed = time.monotonic() - start
    assert parse_response_meta(resp).rcode == 2
    assert 0.29 <= elapsed < 0.3 + 0.1
    # nothing listening at all: refused or timed out, SERVFAIL either way
    resp = forward_upstream(q("www.example.com"), ("127.0.0.1", port), 300)
    assert parse_response_meta(resp).rcode == 2


def test_forward_ignores_mismatched_id():
    raw = q("www.example.com", qid=7)
    with StubUpstream("wrong-id") as stub:
        resp = forward_upstream(raw, stub.endpoint, 1000)
    assert resp == StubUpstream.reply_for(raw)


def test_binding_invariants():
    with pytest.raises(ConfigError):
        OrgBinding("red", ("127.0.0.1", 1), Group.CONTROL, date(2018, 8, 1))
    OrgBinding("green", ("127.0.0.1", 1), Group.TREATMENT, date(2018, 8, 1))
    with pytest.raises(ConfigError):
        check_bindings([OrgBinding("a", ("127.0.0.1", 1)), OrgBinding("b", ("127.0.0.1", 1))])


def test_parse_endpoint():
    assert parse_endpoint("127.0.0.1:53") == ("127.0.0.1", 53)
    assert parse_endpoint("[::1]:5353") == ("::1", 5353)
    with pytest.raises(ConfigError):
        parse_endpoint("localhost")


def test_policy_validation():
    with pytest.raises(ConfigError):
        FirewallPolicy(block_mode=BlockMode.SINKHOLE)
    with pytest.raises(ConfigError):
        FirewallPolicy(upstream_timeout_ms=0)
