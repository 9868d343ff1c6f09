import random
import threading
import time

import pytest

from dnshygiene.config import load_config
from dnshygiene.errors import StartupError
from dnshygiene.intel import Status, TrafficClass, write_feed
from dnshygiene.querylog import Action, QueryRecord, read_all
from dnshygiene.replay import replay
from dnshygiene.service import BackgroundService

from .conftest import StubUpstream, entry, write_config, ts

BLOCKED = {"evil.example", "phish.example"}


def records_for(org, names, qtype=1):
    return [QueryRecord(ts(2018, 9, 17, 10, 0, i % 60), org, n, qtype, TrafficClass.BENIGN, Action.FORWARDED, 0)
            for i, n in enumerate(names)]


def mixed_names(rng, n):
    pool = ["www.example.com", "mail.example.org", "counter.yadro.ru", "a.evil.example", "phish.example"]
    return [rng.choice(pool) for _ in range(n)]


def test_two_orgs_logged_and_blocked(tmp_path, demo_feed):
    rng = random.Random(1)
    with StubUpstream() as stub:
        cfg = load_config(write_config(tmp_path, [demo_feed], stub.endpoint))
        green, red = mixed_names(rng, 100), mixed_names(rng, 100)
        with BackgroundService(cfg) as svc:
            eps = svc.endpoints
            stats = replay(records_for("green", green) + records_for("red", red), eps, window=16)
        upstream_names = stub.qnames()
    assert stats.sent == stats.answered == 200 and stats.timeouts == 0
    hostile = sum(1 for n in green + red if n.endswith("evil.example") or n == "phish.example")
    assert stats.blocked == hostile
    assert not any(n.endswith("evil.example") or n == "phish.example" for n in upstream_names)
    assert len(upstream_names) == 200 - hostile
    logged = list(read_all(cfg.log_dir))
    assert len(logged) == 200
    for org, names in (("green", green), ("red", red)):
        mine = [r for r in logged if r.org == org]
        assert sorted(r.qname for r in mine) == sorted(names)
        for r in mine:
            blocked = r.qname.endswith("evil.example") or r.qname == "phish.example"
            assert (r.action is Action.BLOCKED) == blocked
            assert r.cls is (TrafficClass.MALICIOUS if blocked else
                             TrafficClass.GREY if r.qname == "counter.yadro.ru" else TrafficClass.BENIGN)


def test_reload_swaps_snapshot(tmp_path, demo_feed):
    with StubUpstream() as stub:
        cfg = load_config(write_config(tmp_path, [demo_feed], stub.endpoint))
        with BackgroundService(cfg) as svc:
            before = replay(records_for("green", ["new.example"] * 5), svc.endpoints)
            from .conftest import DEMO_ENTRIES
            write_feed(list(DEMO_ENTRIES) + [entry("new.example", Status.CONVICTED, {"malware"})], demo_feed)
            assert svc.reload()
            after = replay(records_for("green", ["new.example"] * 5), svc.endpoints)
            demo_feed.write_text("garbage", encoding="utf-8")
            assert not svc.reload()  # keeps the last good snapshot
            kept = replay(records_for("green", ["new.example"] * 5), svc.endpoints)
    assert (before.blocked, after.blocked, kept.blocked) == (0, 5, 5)


def test_reload_during_traffic_is_consistent(tmp_path, demo_feed):
    from .conftest import DEMO_ENTRIES
    with StubUpstream() as stub:
        cfg = load_config(write_config(tmp_path, [demo_feed], stub.endpoint))
        with BackgroundService(cfg) as svc:
            eps = svc.endpoints
            result = {}
            t = threading.Thread(target=lambda: result.setdefault(
                "s", replay(records_for("green", ["flip.example"] * 400), eps, window=4)), daemon=True)
            t.start()
            time.sleep(0.05)
            write_feed(list(DEMO_ENTRIES) + [entry("flip.example", Status.CONVICTED, {"malware"})], demo_feed)
            svc.reload()
            t.join(30)
    logged = list(read_all(cfg.log_dir))
    assert len(logged) == 400
    # every query saw exactly one snapshot: logged verdicts agree with what the client got
    assert sum(r.action is Action.BLOCKED for r in logged) == result["s"].blocked


def test_stop_flushes_everything(tmp_path, demo_feed):
    with StubUpstream() as stub:
        cfg = load_config(write_config(tmp_path, [demo_feed], stub.endpoint))
        svc = BackgroundService(cfg)
        with svc:
            replay(records_for("green", ["www.example.com"] * 37), svc.endpoints)
        assert svc.exit_code == 0
    assert len(list(read_all(cfg.log_dir))) == 37


def test_upstream_timeout_answers_servfail(tmp_path, demo_feed):
    with StubUpstream("silent") as stub:
        cfg = load_config(write_config(tmp_path, [demo_feed], stub.endpoint, timeout_ms=200))
        with BackgroundService(cfg) as svc:
            stats = replay(records_for("green", ["www.example.com"] * 3), svc.endpoints, timeout_ms=2000)
    assert stats.answered == 3 and stats.max_latency_ms < 200 + 200
    assert all(r.rcode == 2 for r in read_all(cfg.log_dir))


def test_bind_failure_is_startup_error(tmp_path, demo_feed):
    with StubUpstream() as stub:
        cfg = load_config(write_config(tmp_path, [demo_feed], stub.endpoint))
        with BackgroundService(cfg) as first:
            busy = first.endpoints["green"]
            cfg2 = load_config(write_config(tmp_path, [demo_feed], stub.endpoint))
            cfg2.bindings[0] = type(cfg2.bindings[0])("green", busy)
            with pytest.raises(StartupError):
                with BackgroundService(cfg2):
                    pass


def test_missing_feed_is_startup_error(tmp_path):
    cfg = load_config(write_config(tmp_path, [tmp_path / "missing.csv"], ("127.0.0.1", 9)))
    with pytest.raises(StartupError):
        with BackgroundService(cfg):
            pass
