"""Append-only JSONL query log with per-org daily rotation, plus readers.

Layout: ``<log_dir>/<org>/<YYYY-MM-DD>.jsonl``, one JSON object per line with
keys ``ts, org, qname, qtype, class, action, rcode, matched, tags``.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import re
import time
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import IO, Callable, Iterable, Iterator, Mapping

from .errors import MissingDir, QueryLogError, UnmappedColumn
from .intel import IntelStore, TrafficClass
from .wire import qtype_code

log = logging.getLogger(__name__)

UNPARSEABLE = "<unparseable>"
RECORD_KEYS = ("ts", "org", "qname", "qtype", "class", "action", "rcode", "matched", "tags")
_ORG_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]{0,63}$")


class Action(str, enum.Enum):
    FORWARDED = "forwarded"
    BLOCKED = "blocked"


def check_org_id(org: str) -> str:
    if not _ORG_RE.match(org) or org in (".", ".."):
        raise ValueError(f"org id {org!r} is not a safe directory name")
    return org


def format_ts(ts: datetime) -> str:
    if ts.tzinfo is not timezone.utc:
        ts = ts.astimezone(timezone.utc)
    return f"{ts.year:04d}-{ts.month:02d}-{ts.day:02d}T{ts.hour:02d}:{ts.minute:02d}:{ts.second:02d}Z"


def parse_ts(text: str | int | float) -> datetime:
    """ISO-8601 (naive means UTC) or epoch seconds, truncated to seconds."""
    if isinstance(text, (int, float)):
        return datetime.fromtimestamp(int(text), tz=timezone.utc)
    if len(text) == 20 and text[10] == "T" and text[19] == "Z":
        # canonical log form; the general path below handles everything else
        try:
            return datetime.fromisoformat(text[:19]).replace(tzinfo=timezone.utc)
        except ValueError:
            pass
    text = text.strip()
    if re.fullmatch(r"-?\d+(\.\d+)?", text):
        return datetime.fromtimestamp(int(float(text)), tz=timezone.utc)
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


@dataclass(frozen=True, slots=True)
class QueryRecord:
    ts: datetime
    org: str
    qname: str
    qtype: int
    cls: TrafficClass
    action: Action
    rcode: int
    matched: str | None = None
    tags: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.cls is not TrafficClass.BENIGN and not self.matched:
            raise ValueError(f"{self.cls.value} record for {self.qname} has no matched domain")
        if not 0 <= self.rcode <= 15:
            raise ValueError(f"rcode {self.rcode} outside 0..15")

    @property
    def day(self) -> date:
        return self.ts.date()

    def to_dict(self) -> dict:
        return {
            "ts": format_ts(self.ts),
            "org": self.org,
            "qname": self.qname,
            "qtype": self.qtype,
            "class": self.cls.value,
            "action": self.action.value,
            "rcode": self.rcode,
            "matched": self.matched,
            "tags": list(self.tags) if self.tags is not None else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, obj: Mapping) -> QueryRecord:
        tags = obj.get("tags")
        return cls(
            ts=parse_ts(obj["ts"]),
            org=str(obj["org"]),
            qname=str(obj["qname"]),
            qtype=int(obj["qtype"]),
            cls=TrafficClass(obj["class"]),
            action=Action(obj["action"]),
            rcode=int(obj["rcode"]),
            matched=obj.get("matched"),
            tags=tuple(tags) if tags is not None else None,
        )

    @classmethod
    def from_json(cls, line: str) -> QueryRecord:
        obj = json.loads(line)
        if not isinstance(obj, dict):
            raise ValueError("record line is not a JSON object")
        return cls.from_dict(obj)


class QueryLogWriter:
    """Single-writer appender; flushes every ``flush_every`` records or
    ``flush_interval`` seconds, whichever comes first."""

    def __init__(self, log_dir: str | Path, *, flush_every: int = 100, flush_interval: float = 1.0):
        self.log_dir = Path(log_dir)
        self.flush_every = flush_every
        self.flush_interval = flush_interval
        self._handles: dict[tuple[str, date], IO[str]] = {}
        self._pending = 0
        self._last_flush = time.monotonic()
        self.count = 0

    def path_for(self, org: str, day: date) -> Path:
        return self.log_dir / check_org_id(org) / f"{day.isoformat()}.jsonl"

    def _handle(self, org: str, day: date) -> IO[str]:
        key = (org, day)
        handle = self._handles.get(key)
        if handle is None:
            # one open file per org; a new day closes yesterday's
            for old in [k for k in self._handles if k[0] == org]:
                self._handles.pop(old).close()
            path = self.path_for(org, day)
            path.parent.mkdir(parents=True, exist_ok=True)
            handle = path.open("a", encoding="utf-8")
            self._handles[key] = handle
        return handle

    def append(self, record: QueryRecord) -> None:
        line = record.to_json() + "\n"
        for attempt in (1, 2):
            try:
                self._handle(record.org, record.day).write(line)
                break
            except OSError as exc:
                self._drop(record.org, record.day)
                if attempt == 2:
                    raise QueryLogError(f"cannot append to {self.path_for(record.org, record.day)}: {exc}") from exc
        self.count += 1
        self._pending += 1
        if self._pending >= self.flush_every or time.monotonic() - self._last_flush >= self.flush_interval:
            self.flush()

    def _drop(self, org: str, day: date) -> None:
        handle = self._handles.pop((org, day), None)
        if handle is not None:
            try:
                handle.close()
            except OSError:
                pass

    def flush(self) -> None:
        try:
            for handle in self._handles.values():
                handle.flush()
        except OSError as exc:
            raise QueryLogError(f"flush failed: {exc}") from exc
        self._pending = 0
        self._last_flush = time.monotonic()

    def close(self) -> None:
        self.flush()
        for handle in self._handles.values():
            handle.close()
        self._handles.clear()

    def __enter__(self) -> QueryLogWriter:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def append(writer: QueryLogWriter, record: QueryRecord) -> None:
    writer.append(record)


class RecordStream:
    """Iterable of records that counts what it scanned, skipped and filtered.

    ``returned + skipped + filtered == scanned`` once iteration is exhausted;
    ``filtered`` stays 0 when no filter is given.
    """

    def __init__(self, source: Callable[[RecordStream], Iterator[QueryRecord]]):
        self._source = source
        self.scanned = 0
        self.skipped = 0
        self.filtered = 0
        self.returned = 0

    def __iter__(self) -> Iterator[QueryRecord]:
        for record in self._source(self):
            self.returned += 1
            yield record


def _iter_lines(stream: RecordStream, handle: IO[str]) -> Iterator[QueryRecord]:
    for line in handle:
        if not line.strip():
            continue
        stream.scanned += 1
        try:
            # a line without its newline is a partially written tail
            if not line.endswith("\n"):
                raise ValueError("partial line")
            yield QueryRecord.from_json(line)
        except (ValueError, KeyError, TypeError):
            stream.skipped += 1


def read_range(
    log_dir: str | Path,
    start: date,
    end: date,
    *,
    orgs: Iterable[str] | None = None,
    classes: Iterable[TrafficClass] | None = None,
    predicate: Callable[[QueryRecord], bool] | None = None,
) -> RecordStream:
    """Stream records from files dated ``start..end`` inclusive.

    Files are visited date by date, orgs in sorted order within a date, and
    each file is read line by line, so memory use does not grow with file
    size. Filtered-out records are counted in ``filtered``.
    """
    root = Path(log_dir)
    if not root.is_dir():
        raise MissingDir(f"log directory {root} does not exist")
    if start > end:
        raise ValueError(f"range start {start} is after end {end}")
    org_filter = set(orgs) if orgs is not None else None
    class_filter = set(classes) if classes is not None else None

    def source(stream: RecordStream) -> Iterator[QueryRecord]:
        org_dirs = sorted(p for p in root.iterdir() if p.is_dir())
        if org_filter is not None:
            org_dirs = [p for p in org_dirs if p.name in org_filter]
        day = start
        while day <= end:
            for org_dir in org_dirs:
                path = org_dir / f"{day.isoformat()}.jsonl"
                if not path.is_file():
                    continue
                with path.open(encoding="utf-8", errors="replace") as handle:
                    for record in _iter_lines(stream, handle):
                        if (class_filter is not None and record.cls not in class_filter) or (
                                predicate is not None and not predicate(record)):
                            stream.filtered += 1
                            continue
                        yield record
            day += timedelta(days=1)

    return RecordStream(source)


def log_date_span(log_dir: str | Path) -> tuple[date, date] | None:
    """First and last file dates present under ``log_dir``."""
    root = Path(log_dir)
    if not root.is_dir():
        raise MissingDir(f"log directory {root} does not exist")
    days = []
    for path in root.glob("*/*.jsonl"):
        try:
            days.append(date.fromisoformat(path.stem))
        except ValueError:
            continue
    return (min(days), max(days)) if days else None


def read_all(log_dir: str | Path) -> RecordStream:
    span = log_date_span(log_dir)
    if span is None:
        return RecordStream(lambda stream: iter(()))
    return read_range(log_dir, *span)


def read_jsonl(handle: IO[str]) -> RecordStream:
    """Stream native records from an open text handle (e.g. stdin)."""
    return RecordStream(lambda stream: _iter_lines(stream, handle))


# -- external CSV import ----------------------------------------------------

REQUIRED_FIELDS = ("ts", "org", "qname")
OPTIONAL_FIELDS = ("qtype", "class", "action", "rcode")


def import_external(
    path: str | Path | IO[str],
    mapping: Mapping[str, str],
    store: IntelStore,
    *,
    policy=None,
) -> RecordStream:
    """Stream records from a foreign CSV export.

    ``mapping`` maps record fields (``ts``, ``org``, ``qname`` and optionally
    ``qtype``, ``class``, ``action``, ``rcode``) to CSV column names. Missing
    classes come from ``store``; a missing action is what ``policy`` (default
    firewall policy) would have done.
    """
    from .firewall import FirewallPolicy, decide_action

    policy = policy or FirewallPolicy()
    unknown = set(mapping) - set(REQUIRED_FIELDS) - set(OPTIONAL_FIELDS)
    if unknown:
        raise UnmappedColumn(f"unknown record fields in mapping: {sorted(unknown)}")
    for name in REQUIRED_FIELDS:
        if name not in mapping:
            raise UnmappedColumn(f"no column mapped for required field {name!r}")

    handle = path if isinstance(path, io.TextIOBase) else Path(path).open(newline="", encoding="utf-8")
    reader = csv.DictReader(handle)
    header = reader.fieldnames or []
    for name, column in mapping.items():
        if column not in header:
            handle.close()
            raise UnmappedColumn(f"column {column!r} (for {name}) not in CSV header {header}")

    def source(stream: RecordStream) -> Iterator[QueryRecord]:
        with handle:
            for rowno, row in enumerate(reader, start=2):
                stream.scanned += 1
                try:
                    yield _import_row(row, mapping, store, policy, decide_action)
                except (ValueError, KeyError, TypeError) as exc:
                    stream.skipped += 1
                    log.debug("import row %d skipped: %s", rowno, exc)

    return RecordStream(source)


def _import_row(row, mapping, store, policy, decide_action) -> QueryRecord:
    qname = row[mapping["qname"]].strip().rstrip(".").lower()
    if not qname:
        raise ValueError("empty qname")
    verdict = store.classify(qname)
    if "class" in mapping:
        cls = TrafficClass(row[mapping["class"]].strip().lower())
    else:
        cls = verdict.cls
    matched = str(verdict.matched.domain) if verdict.matched is not None else None
    tags = tuple(sorted(verdict.matched.tags)) if verdict.matched is not None else None
    if cls is not TrafficClass.BENIGN and matched is None:
        matched = qname
    if "action" in mapping:
        action = Action(row[mapping["action"]].strip().lower())
    else:
        action = Action.BLOCKED if decide_action(policy, verdict) else Action.FORWARDED
    if "rcode" in mapping:
        rcode = int(row[mapping["rcode"]])
    else:
        rcode = 3 if action is Action.BLOCKED else 0
    qtype = qtype_code(row[mapping["qtype"]]) if "qtype" in mapping else 1
    return QueryRecord(
        ts=parse_ts(row[mapping["ts"]]),
        org=check_org_id(row[mapping["org"]].strip()),
        qname=qname,
        qtype=qtype,
        cls=cls,
        action=action,
        rcode=rcode,
        matched=matched,
        tags=tags,
    )
