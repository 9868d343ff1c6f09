from __future__ import annotations

import socket
import struct
import threading
from datetime import date, datetime, timezone
from pathlib import Path

import pytest

from dnshygiene.intel import Status, ThreatEntry, merge_feeds, write_feed
from dnshygiene.wire import DomainName


class StubUpstream:
    """UDP resolver stand-in. Counts packets and answers by hand-built reply.

    modes: ``noerror`` echoes the question with QR/RA set and one A answer,
    ``servfail`` replies rcode 2, ``silent`` never replies, ``wrong-id``
    sends a reply with a flipped id before the real one.
    """

    def __init__(self, mode: str = "noerror"):
        self.mode = mode
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(("127.0.0.1", 0))
        self.sock.settimeout(0.05)
        self.endpoint = self.sock.getsockname()[:2]
        self.received: list[bytes] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    @staticmethod
    def reply_for(query: bytes, rcode: int = 0, qid: int | None = None) -> bytes:
        (orig_id,) = struct.unpack_from("!H", query)
        qid = orig_id if qid is None else qid
        question = query[12:]
        if rcode != 0:
            return struct.pack("!HHHHHH", qid, 0x8180 | rcode, 1, 0, 0, 0) + question
        answer = b"\xc0\x0c" + struct.pack("!HHIH", 1, 1, 300, 4) + bytes([93, 184, 216, 34])
        return struct.pack("!HHHHHH", qid, 0x8180, 1, 1, 0, 0) + question + answer

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                data, addr = self.sock.recvfrom(4096)
            except socket.timeout:
                continue
            except OSError:
                return
            with self._lock:
                self.received.append(data)
            if self.mode == "silent":
                continue
            if self.mode == "wrong-id":
                (qid,) = struct.unpack_from("!H", data)
                self.sock.sendto(self.reply_for(data, qid=qid ^ 0xFFFF), addr)
            rcode = 2 if self.mode == "servfail" else 0
            self.sock.sendto(self.reply_for(data, rcode), addr)

    def qnames(self) -> list[str]:
        from dnshygiene.wire import parse_query
        with self._lock:
            return [str(parse_query(d).qname) for d in self.received]

    @property
    def count(self) -> int:
        with self._lock:
            return len(self.received)

    def __enter__(self) -> StubUpstream:
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._stop.set()
        self._thread.join(2)
        self.sock.close()


@pytest.fixture
def stub_upstream():
    with StubUpstream() as stub:
        yield stub


def entry(domain: str, status: Status, tags, source: str = "test", exact_only: bool = False) -> ThreatEntry:
    return ThreatEntry(DomainName.parse(domain), status, frozenset(tags), source, None, exact_only)


DEMO_ENTRIES = [
    entry("evil.example", Status.CONVICTED, {"malware"}),
    entry("phish.example", Status.BLACKLISTED, {"phishing"}),
    entry("counter.yadro.ru", Status.FLAGGED, {"adware", "spyware"}),
    entry("top-fwz1.mail.ru", Status.BLACKLISTED, {"adware", "spyware"}),
    entry("watch.example", Status.FLAGGED, {"malware"}),
]


@pytest.fixture
def demo_store():
    return merge_feeds([DEMO_ENTRIES])


@pytest.fixture
def demo_feed(tmp_path) -> Path:
    path = tmp_path / "demo.csv"
    write_feed(DEMO_ENTRIES, path)
    return path


def free_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def write_config(tmp_path: Path, feeds: list[Path], upstream, orgs: dict[str, str] | None = None,
                 extra: str = "", timeout_ms: int = 500) -> Path:
    """Service TOML with ephemeral ports for each org (org -> group)."""
    orgs = orgs or {"green": "treatment", "red": "control"}
    lines = [
        f'log_dir = "{tmp_path / "logs"}"',
        "feeds = [" + ", ".join(f'"{p}"' for p in feeds) + "]",
        "heartbeat_s = 3600",
        "",
        "[upstream]",
        f'addr = "{upstream[0]}:{upstream[1]}"',
        f"timeout_ms = {timeout_ms}",
        "",
    ]
    for org, group in orgs.items():
        lines += [f"[org.{org}]", f'listen = "127.0.0.1:{free_port()}"', f'group = "{group}"', ""]
    lines.append(extra)
    path = tmp_path / "service.toml"
    path.write_text("\n".join(lines), encoding="utf-8")
    return path


UTC = timezone.utc


def ts(y, m, d, hh=12, mm=0, ss=0) -> datetime:
    return datetime(y, m, d, hh, mm, ss, tzinfo=UTC)


D0 = date(2018, 9, 17)
