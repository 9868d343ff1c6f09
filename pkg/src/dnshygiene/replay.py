"""Replay query records as live DNS traffic against per-org endpoints."""

from __future__ import annotations

import asyncio
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import Unreachable, WireError
from .firewall import Endpoint
from .querylog import QueryRecord
from .wire import RCODE_NXDOMAIN, DomainName, QueryView, encode_query, first_a_answer, parse_response_meta, qtype_code


@dataclass
class ReplayStats:
    sent: int = 0
    answered: int = 0
    blocked: int = 0
    timeouts: int = 0
    max_latency_ms: float = 0.0
    latencies_ms: list[float] = field(default_factory=list, repr=False)


class _Channel(asyncio.DatagramProtocol):
    """One connected socket per endpoint; replies matched by message id."""

    def __init__(self, endpoint: Endpoint):
        self.endpoint = endpoint
        self.pending: dict[int, asyncio.Future] = {}
        self.next_id = 0
        self.refused = False
        self.answered = 0
        self.transport: asyncio.DatagramTransport | None = None

    def connection_made(self, transport):
        self.transport = transport

    def datagram_received(self, data, addr):
        if len(data) < 2:
            return
        fut = self.pending.pop(int.from_bytes(data[:2], "big"), None)
        if fut is not None and not fut.done():
            self.answered += 1
            fut.set_result(data)

    def error_received(self, exc):
        if isinstance(exc, ConnectionRefusedError):
            self.refused = True

    def allocate(self) -> int:
        for _ in range(65536):
            qid = self.next_id
            self.next_id = (self.next_id + 1) & 0xFFFF
            if qid not in self.pending:
                return qid
        raise RuntimeError("no free message ids")


def is_blocked(response: bytes, sinkhole_addr: str | None) -> bool:
    """NXDOMAIN, or an A answer pointing at the sinkhole."""
    try:
        if parse_response_meta(response).rcode == RCODE_NXDOMAIN:
            return True
    except WireError:
        return False
    return sinkhole_addr is not None and first_a_answer(response) == sinkhole_addr


async def replay_async(
    records: Iterable[QueryRecord],
    endpoints: Mapping[str, Endpoint],
    *,
    target: Endpoint | None = None,
    speedup: float = math.inf,
    window: int = 64,
    timeout_ms: int = 2500,
    sinkhole_addr: str | None = None,
) -> ReplayStats:
    """Send each record as a query to its org's endpoint (or ``target``).

    ``speedup`` scales record timestamps into send times; ``inf`` sends as
    fast as the in-flight ``window`` allows. Raises :class:`Unreachable` when
    an endpoint refuses traffic before answering anything.
    """
    if not 0 < window < 65536:
        raise ValueError("window must be in 1..65535")
    loop = asyncio.get_running_loop()
    stats = ReplayStats()
    channels: dict[Endpoint, _Channel] = {}
    slots = asyncio.Semaphore(window)
    tasks: list[asyncio.Task] = []
    t0 = loop.time()
    first_ts = None

    async def channel_for(endpoint: Endpoint) -> _Channel:
        ch = channels.get(endpoint)
        if ch is None:
            try:
                _, ch = await loop.create_datagram_endpoint(lambda: _Channel(endpoint), remote_addr=endpoint)
            except OSError as exc:
                raise Unreachable(f"cannot reach {endpoint[0]}:{endpoint[1]}: {exc}") from exc
            channels[endpoint] = ch
        return ch

    async def one(ch: _Channel, record: QueryRecord) -> None:
        qid = ch.allocate()
        fut = loop.create_future()
        ch.pending[qid] = fut
        q = QueryView(qid, DomainName.parse(record.qname), qtype_code(record.qtype))
        started = time.perf_counter()
        ch.transport.sendto(encode_query(q))
        stats.sent += 1
        try:
            response = await asyncio.wait_for(fut, timeout_ms / 1000)
        except asyncio.TimeoutError:
            ch.pending.pop(qid, None)
            stats.timeouts += 1
        else:
            elapsed = (time.perf_counter() - started) * 1000
            stats.latencies_ms.append(elapsed)
            stats.max_latency_ms = max(stats.max_latency_ms, elapsed)
            stats.answered += 1
            if is_blocked(response, sinkhole_addr):
                stats.blocked += 1
        finally:
            slots.release()

    try:
        for record in records:
            endpoint = endpoints.get(record.org, target)
            if endpoint is None:
                raise Unreachable(f"no endpoint for org {record.org!r}")
            ch = await channel_for(endpoint)
            if ch.refused and ch.answered == 0:
                raise Unreachable(f"{endpoint[0]}:{endpoint[1]} refused queries")
            if math.isfinite(speedup):
                ts = record.ts.timestamp()
                first_ts = ts if first_ts is None else first_ts
                delay = t0 + (ts - first_ts) / speedup - loop.time()
                if delay > 0:
                    await asyncio.sleep(delay)
            await slots.acquire()
            tasks.append(loop.create_task(one(ch, record)))
        if tasks:
            await asyncio.gather(*tasks)
        for ch in channels.values():
            if ch.refused and ch.answered == 0:
                raise Unreachable(f"{ch.endpoint[0]}:{ch.endpoint[1]} refused queries")
    finally:
        for t in tasks:
            t.cancel()
        for ch in channels.values():
            ch.transport.close()
    return stats


def replay(records: Iterable[QueryRecord], endpoints: Mapping[str, Endpoint], **kwargs) -> ReplayStats:
    """Blocking wrapper around :func:`replay_async`."""
    return asyncio.run(replay_async(records, endpoints, **kwargs))
