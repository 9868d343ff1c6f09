"""Threat-intelligence feeds, the merged suffix store, and classification."""

from __future__ import annotations

import csv
import enum
import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

from ._accel import longest_match
from .errors import EmptyFeed, FileUnreadable, WireError
from .wire import DomainName

log = logging.getLogger(__name__)

FEED_COLUMNS = ("domain", "status", "tags", "source", "first_seen")

MALICIOUS_TAGS = frozenset({"malware", "botnet", "virus", "phishing", "malicious", "c2"})
GREY_TAGS = frozenset({"adware", "spyware", "tracker", "pup"})


class Status(enum.IntEnum):
    """Feed status; the integer value is the severity."""

    ALLOWED = 0
    FLAGGED = 1
    BLACKLISTED = 2
    CONVICTED = 3

    @classmethod
    def parse(cls, text: str) -> Status:
        return cls[text.strip().upper()]

    @property
    def label(self) -> str:
        return self.name.lower()


class TrafficClass(str, enum.Enum):
    MALICIOUS = "malicious"
    GREY = "grey"
    BENIGN = "benign"

    @property
    def rank(self) -> int:
        return _CLASS_RANK[self]


_CLASS_RANK = {TrafficClass.BENIGN: 0, TrafficClass.GREY: 1, TrafficClass.MALICIOUS: 2}


@dataclass(frozen=True)
class ThreatEntry:
    domain: DomainName
    status: Status
    tags: frozenset[str]
    source: str
    first_seen: date | None = None
    exact_only: bool = False


@dataclass(frozen=True)
class Verdict:
    cls: TrafficClass
    matched: ThreatEntry | None = None
    match_depth: int = 0


class FeedEntries(list):
    """List of loaded entries that also remembers the rows it skipped."""

    def __init__(self, entries=(), skipped=()):
        super().__init__(entries)
        self.skipped: list[tuple[int, str]] = list(skipped)


def entry_class(
    entry: ThreatEntry,
    malicious_tags: frozenset[str] = MALICIOUS_TAGS,
    grey_tags: frozenset[str] = GREY_TAGS,
) -> TrafficClass:
    """Map one entry to a traffic class.

    Malicious needs a hostile status *and* a hostile tag; grey-tagged entries
    are grey whatever their status.
    """
    if entry.status >= Status.BLACKLISTED and entry.tags & malicious_tags:
        return TrafficClass.MALICIOUS
    if entry.tags & grey_tags:
        return TrafficClass.GREY
    return TrafficClass.BENIGN


def _parse_tags(text: str) -> frozenset[str]:
    return frozenset(t.strip().lower() for t in text.split(";") if t.strip())


def load_feed(path: str | Path, source: str | None = None, *, exact_only: bool = False) -> FeedEntries:
    """Read a feed CSV with header ``domain,status,tags,source,first_seen``.

    Malformed rows are skipped with a warning naming the row number (the
    header is row 1). ``source`` defaults to the file stem and is used when a
    row leaves its own source column empty.
    """
    path = Path(path)
    source = source or path.stem
    entries: list[ThreatEntry] = []
    skipped: list[tuple[int, str]] = []
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header is None or [h.strip().lower() for h in header[:5]] != list(FEED_COLUMNS):
                raise FileUnreadable(f"{path}: expected header {','.join(FEED_COLUMNS)}")
            for rowno, row in enumerate(reader, start=2):
                if not row or all(not cell.strip() for cell in row):
                    continue
                try:
                    entries.append(_parse_row(row, source, exact_only))
                except (ValueError, KeyError) as exc:
                    reason = str(exc) or type(exc).__name__
                    skipped.append((rowno, reason))
                    log.warning("%s row %d skipped: %s", path, rowno, reason)
    except FileUnreadable:
        raise
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise FileUnreadable(f"{path}: {exc}") from exc
    if not entries:
        raise EmptyFeed(f"{path}: no well-formed rows")
    return FeedEntries(entries, skipped)


def _parse_row(row: list[str], default_source: str, exact_only: bool) -> ThreatEntry:
    if len(row) != len(FEED_COLUMNS):
        raise ValueError(f"expected {len(FEED_COLUMNS)} columns, got {len(row)}")
    domain_text, status_text, tags_text, source_text, seen_text = (c.strip() for c in row)
    try:
        domain = DomainName.parse(domain_text)
    except WireError as exc:
        raise ValueError(f"bad domain: {exc}") from None
    if not domain.labels:
        raise ValueError("empty domain")
    try:
        status = Status.parse(status_text)
    except KeyError:
        raise ValueError(f"unknown status {status_text!r}") from None
    tags = _parse_tags(tags_text)
    if status is not Status.ALLOWED and not tags:
        raise ValueError(f"{status.label} entry without tags")
    first_seen = date.fromisoformat(seen_text) if seen_text else None
    return ThreatEntry(domain, status, tags, source_text or default_source, first_seen, exact_only)


def write_feed(entries: Iterable[ThreatEntry], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(FEED_COLUMNS)
        for e in entries:
            writer.writerow([
                str(e.domain), e.status.label, ";".join(sorted(e.tags)), e.source,
                e.first_seen.isoformat() if e.first_seen else "",
            ])


def merge_entries(entries: Sequence[ThreatEntry]) -> ThreatEntry:
    """Merge records for one exact domain; the result is order-independent."""
    first = entries[0]
    sources = sorted({s for e in entries for s in e.source.split(";") if s})
    seen = [e.first_seen for e in entries if e.first_seen is not None]
    return ThreatEntry(
        domain=first.domain,
        status=max(e.status for e in entries),
        tags=frozenset().union(*(e.tags for e in entries)),
        source=";".join(sources),
        first_seen=min(seen) if seen else None,
        exact_only=all(e.exact_only for e in entries),
    )


@dataclass(frozen=True)
class StoreStats:
    total: int
    statuses: dict[str, int]
    tags: dict[str, int]


@dataclass(eq=False)
class IntelStore:
    """Immutable-by-convention snapshot of merged feeds.

    ``entries`` maps each exact domain to its merged entry; the trie indexes
    the same entries by reversed label path. Override entries (local
    allow-list) live in a second trie and win at equal or greater depth.
    """

    entries: dict[DomainName, ThreatEntry]
    overrides: dict[DomainName, ThreatEntry] = field(default_factory=dict)
    malicious_tags: frozenset[str] = MALICIOUS_TAGS
    grey_tags: frozenset[str] = GREY_TAGS

    def __post_init__(self) -> None:
        self._trie = self._build(self.entries.values())
        self._override_trie = self._build(self.overrides.values())
        self.status_counts = Counter(e.status for e in self.entries.values())
        self.tag_counts = Counter(t for e in self.entries.values() for t in e.tags)

    def _build(self, entries: Iterable[ThreatEntry]) -> dict:
        root: dict = {}
        for entry in entries:
            node = root
            for label in reversed(entry.domain.labels):
                node = node.setdefault(label, {})
            node[""] = (entry, entry_class(entry, self.malicious_tags, self.grey_tags), entry.exact_only)
        return root

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IntelStore):
            return NotImplemented
        return (
            self.entries == other.entries
            and self.overrides == other.overrides
            and self.malicious_tags == other.malicious_tags
            and self.grey_tags == other.grey_tags
        )

    def classify(self, name: DomainName | str) -> Verdict:
        labels = DomainName.coerce(name).labels
        depth, payload = longest_match(self._trie, labels)
        if self.overrides:
            o_depth, o_payload = longest_match(self._override_trie, labels)
            if o_payload is not None and o_depth >= depth:
                return Verdict(TrafficClass.BENIGN, o_payload[0], o_depth)
        if payload is None:
            return Verdict(TrafficClass.BENIGN)
        return Verdict(payload[1], payload[0], depth)


def _group(entries: Iterable[ThreatEntry]) -> dict[DomainName, ThreatEntry]:
    by_domain: dict[DomainName, list[ThreatEntry]] = {}
    for entry in entries:
        by_domain.setdefault(entry.domain, []).append(entry)
    return {d: merge_entries(group) for d, group in by_domain.items()}


def merge_feeds(
    feeds: Iterable[Iterable[ThreatEntry]],
    *,
    overrides: Iterable[ThreatEntry] = (),
    malicious_tags: Iterable[str] = MALICIOUS_TAGS,
    grey_tags: Iterable[str] = GREY_TAGS,
) -> IntelStore:
    merged = _group(e for feed in feeds for e in feed)
    allowed = _group(e for e in overrides if e.status is Status.ALLOWED)
    return IntelStore(
        entries=dict(sorted(merged.items(), key=lambda kv: kv[0].labels[::-1])),
        overrides=allowed,
        malicious_tags=frozenset(malicious_tags),
        grey_tags=frozenset(grey_tags),
    )


def classify(store: IntelStore, name: DomainName | str) -> Verdict:
    return store.classify(name)


def store_stats(store: IntelStore) -> StoreStats:
    statuses = {s.label: store.status_counts.get(s, 0) for s in Status}
    tags = dict(sorted(store.tag_counts.items()))
    return StoreStats(total=len(store), statuses=statuses, tags=tags)


def load_store(
    paths: Iterable[str | Path],
    *,
    override_paths: Iterable[str | Path] = (),
    exact_only_paths: Iterable[str | Path] = (),
) -> IntelStore:
    """Load and merge feed files into a fresh snapshot."""
    feeds = [load_feed(p) for p in paths]
    feeds += [load_feed(p, exact_only=True) for p in exact_only_paths]
    overrides = [e for p in override_paths for e in load_feed(p)]
    return merge_feeds(feeds, overrides=overrides)
