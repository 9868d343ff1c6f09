"""The long-running firewall: one UDP listener per org, central logging."""

from __future__ import annotations

import asyncio
import logging
import signal
import threading
from collections import Counter
from datetime import datetime, timezone

from .config import ServiceConfig
from .errors import DnsHygieneError, StartupError
from .firewall import Decision, Endpoint, OrgBinding, decide, response_rcode, servfail_for
from .intel import IntelStore, load_store
from .querylog import Action, QueryLogWriter

log = logging.getLogger(__name__)


async def forward_upstream_async(raw: bytes, upstream: Endpoint, timeout_ms: int) -> bytes:
    """Asyncio twin of :func:`firewall.forward_upstream`."""
    loop = asyncio.get_running_loop()
    done: asyncio.Future[bytes] = loop.create_future()
    query_id = raw[:2]

    class _Reply(asyncio.DatagramProtocol):
        def datagram_received(self, data, addr):
            if len(data) >= 12 and data[:2] == query_id and not done.done():
                done.set_result(data)

        def error_received(self, exc):
            if not done.done():
                done.set_result(servfail_for(raw))

    try:
        transport, _ = await loop.create_datagram_endpoint(_Reply, remote_addr=upstream)
    except OSError:
        return servfail_for(raw)
    try:
        transport.sendto(raw)
        return await asyncio.wait_for(done, timeout_ms / 1000)
    except asyncio.TimeoutError:
        return servfail_for(raw)
    finally:
        transport.close()


class _Listener(asyncio.DatagramProtocol):
    """Receives datagrams for one org; logs them in arrival order."""

    def __init__(self, service: FirewallService, binding: OrgBinding):
        self.service = service
        self.binding = binding
        self.queue: asyncio.Queue = asyncio.Queue()
        self.transport: asyncio.DatagramTransport | None = None
        self.drainer: asyncio.Task | None = None

    def connection_made(self, transport):
        self.transport = transport
        self.drainer = asyncio.get_running_loop().create_task(self._drain())

    def datagram_received(self, data: bytes, addr) -> None:
        svc = self.service
        now = datetime.now(timezone.utc)
        decision = decide(self.binding, svc.config.policy, svc.store, data, now)
        if decision.forward:
            task = asyncio.ensure_future(self._forward(data, addr))
        else:
            if decision.response is not None:
                self._send(decision.response, addr)
            task = asyncio.get_running_loop().create_future()
            task.set_result(decision.response)
        self.queue.put_nowait((decision, task))

    async def _forward(self, data: bytes, addr) -> bytes:
        policy = self.service.config.policy
        response = await forward_upstream_async(data, policy.upstream, policy.upstream_timeout_ms)
        self._send(response, addr)
        return response

    def _send(self, response: bytes, addr) -> None:
        if self.transport is not None and not self.transport.is_closing():
            self.transport.sendto(response, addr)

    async def _drain(self) -> None:
        while True:
            item = await self.queue.get()
            if item is None:
                return
            decision, task = item
            response = await task
            self.service.record(decision, response)


class FirewallService:
    def __init__(self, config: ServiceConfig, store: IntelStore | None = None):
        self.config = config
        self.store = store
        self.listeners: list[_Listener] = []
        self.writer: QueryLogWriter | None = None
        self.counters: dict[str, Counter] = {b.org_id: Counter() for b in config.bindings}
        self._tasks: list[asyncio.Task] = []
        self._stopping: asyncio.Event | None = None
        self.fatal: BaseException | None = None

    def load_store(self) -> IntelStore:
        return load_store(
            self.config.feeds,
            override_paths=self.config.override_feeds,
            exact_only_paths=self.config.exact_feeds,
        )

    def reload(self) -> bool:
        """Swap in a freshly loaded snapshot; keeps the old one on failure."""
        try:
            store = self.load_store()
        except DnsHygieneError as exc:
            log.error("feed reload failed, keeping current snapshot: %s", exc)
            return False
        self.store = store
        log.info("feeds reloaded: %d entries", len(store))
        return True

    def record(self, decision: Decision, response: bytes | None) -> None:
        record = decision.record(response_rcode(decision, response))
        try:
            self.writer.append(record)
        except DnsHygieneError as exc:
            self.fatal = exc
            log.critical("%s: %s", exc.code, exc)
            self.request_stop()
            return
        c = self.counters[record.org]
        c["queries"] += 1
        c[record.action.value] += 1
        if record.cls.value != "benign":
            c[record.cls.value] += 1

    async def start(self) -> None:
        if self.store is None:
            try:
                self.store = self.load_store()
            except DnsHygieneError as exc:
                raise StartupError(f"feed load failed: {exc}") from exc
        self.config.log_dir.mkdir(parents=True, exist_ok=True)
        self.writer = QueryLogWriter(self.config.log_dir)
        self._stopping = asyncio.Event()
        loop = asyncio.get_running_loop()
        for binding in self.config.bindings:
            listener = _Listener(self, binding)
            try:
                await loop.create_datagram_endpoint(lambda lst=listener: lst, local_addr=binding.listen)
            except OSError as exc:
                await self._close_listeners()
                raise StartupError(f"cannot bind {binding.org_id} on {binding.listen[0]}:{binding.listen[1]}: {exc}") from exc
            self.listeners.append(listener)
        self._tasks.append(loop.create_task(self._flusher()))
        self._tasks.append(loop.create_task(self._heartbeat()))
        log.info("serving %d org listeners", len(self.listeners))

    @property
    def endpoints(self) -> dict[str, Endpoint]:
        return {lst.binding.org_id: lst.transport.get_extra_info("sockname")[:2] for lst in self.listeners}

    async def _flusher(self) -> None:
        while True:
            await asyncio.sleep(self.writer.flush_interval)
            self.writer.flush()

    async def _heartbeat(self) -> None:
        while True:
            await asyncio.sleep(self.config.heartbeat_s)
            log.info("heartbeat %s", self.heartbeat_line())

    def heartbeat_line(self) -> str:
        parts = []
        for org, c in sorted(self.counters.items()):
            parts.append(f"{org}=q:{c['queries']},blocked:{c[Action.BLOCKED.value]},"
                         f"malicious:{c['malicious']},grey:{c['grey']}")
        return " ".join(parts)

    def request_stop(self) -> None:
        if self._stopping is not None:
            self._stopping.set()

    async def _close_listeners(self) -> None:
        for lst in self.listeners:
            if lst.transport is not None:
                lst.transport.close()

    async def stop(self) -> None:
        """Stop receiving, finish in-flight queries, flush and close the log."""
        await self._close_listeners()
        for lst in self.listeners:
            lst.queue.put_nowait(None)
        drainers = [lst.drainer for lst in self.listeners if lst.drainer is not None]
        if drainers:
            await asyncio.gather(*drainers)
        for task in self._tasks:
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        if self.writer is not None:
            self.writer.close()
        log.info("stopped; final counters %s", self.heartbeat_line())

    async def run(self, install_signals: bool = True, started: threading.Event | None = None) -> int:
        await self.start()
        loop = asyncio.get_running_loop()
        if install_signals:
            loop.add_signal_handler(signal.SIGTERM, self.request_stop)
            loop.add_signal_handler(signal.SIGINT, self.request_stop)
            loop.add_signal_handler(signal.SIGHUP, self.reload)
        if started is not None:
            started.set()
        await self._stopping.wait()
        await self.stop()
        return 1 if self.fatal is not None else 0


def serve(config: ServiceConfig) -> int:
    """Run until SIGTERM/SIGINT; SIGHUP reloads feeds. Returns the exit code."""
    return asyncio.run(FirewallService(config).run())


class BackgroundService:
    """Run a :class:`FirewallService` on its own event-loop thread.

    Used by tests and by in-process replay experiments.
    """

    def __init__(self, config: ServiceConfig, store: IntelStore | None = None):
        self.service = FirewallService(config, store)
        self._loop = asyncio.new_event_loop()
        self._started = threading.Event()
        self._thread = threading.Thread(target=self._main, daemon=True)
        self._error: BaseException | None = None
        self.exit_code: int | None = None

    def _main(self) -> None:
        asyncio.set_event_loop(self._loop)
        try:
            self.exit_code = self._loop.run_until_complete(
                self.service.run(install_signals=False, started=self._started))
        except BaseException as exc:  # surfaced to the starting thread
            self._error = exc
            self._started.set()
        finally:
            self._loop.close()

    def __enter__(self) -> BackgroundService:
        self._thread.start()
        self._started.wait(10)
        if self._error is not None:
            raise self._error
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def endpoints(self) -> dict[str, Endpoint]:
        return self.service.endpoints

    def reload(self) -> bool:
        fut = asyncio.run_coroutine_threadsafe(self._reload(), self._loop)
        return fut.result(10)

    async def _reload(self) -> bool:
        return self.service.reload()

    def stop(self) -> None:
        if self._thread.is_alive():
            self._loop.call_soon_threadsafe(self.service.request_stop)
            self._thread.join(15)
