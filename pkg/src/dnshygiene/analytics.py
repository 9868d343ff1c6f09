"""Batch analytics over query-record streams.

All functions are pure. Day boundaries are UTC unless a fixed
``utc_offset_hours`` is passed where supported.
"""

from __future__ import annotations

import enum
import math
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterable, Mapping, Sequence

from .errors import InsufficientData
from .firewall import Group, OrgBinding
from .intel import TrafficClass
from .querylog import QueryRecord

ALL = "ALL"
WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")


@dataclass(frozen=True)
class DailyAggregate:
    date: date
    org_id: str
    total: int
    malicious: int
    grey: int
    benign: int
    distinct_qnames: int

    def count(self, cls: TrafficClass | str) -> int:
        return getattr(self, TrafficClass(cls).value)


@dataclass(frozen=True)
class Point:
    """One value of a daily series; ``value`` is None when undefined."""

    date: date
    scope: str
    metric: str
    value: float | int | None

    @property
    def defined(self) -> bool:
        return self.value is not None


ProportionPoint = Point


class Scope(str, enum.Enum):
    ORG = "org"
    GROUP = "group"
    ALL = "all"


def _day_of(record: QueryRecord, offset: timedelta | None) -> date:
    return (record.ts + offset).date() if offset else record.ts.date()


def _offset(hours: float) -> timedelta | None:
    return timedelta(hours=hours) if hours else None


def days_between(start: date, end: date) -> list[date]:
    return [start + timedelta(days=i) for i in range((end - start).days + 1)]


def daily_aggregate(records: Iterable[QueryRecord], *, utc_offset_hours: float = 0) -> list[DailyAggregate]:
    """One aggregate per (org, date) seen, sorted by org then date."""
    offset = _offset(utc_offset_hours)
    counts: dict[tuple[str, date], list[int]] = {}
    names: dict[tuple[str, date], set[str]] = defaultdict(set)
    idx = {TrafficClass.MALICIOUS: 0, TrafficClass.GREY: 1, TrafficClass.BENIGN: 2}
    for r in records:
        key = (r.org, _day_of(r, offset))
        slot = counts.get(key)
        if slot is None:
            slot = counts[key] = [0, 0, 0]
        slot[idx[r.cls]] += 1
        names[key].add(r.qname)
    return [
        DailyAggregate(day, org, sum(c), c[0], c[1], c[2], len(names[(org, day)]))
        for (org, day), c in sorted(counts.items())
    ]


def _groups(bindings: Iterable[OrgBinding] | Mapping[str, Group | str]) -> dict[str, str]:
    if isinstance(bindings, Mapping):
        return {org: Group(g).value for org, g in bindings.items()}
    return {b.org_id: b.group.value for b in bindings}


def _scope_key(by: Scope, org: str, groups: dict[str, str] | None) -> str:
    if by is Scope.ORG:
        return org
    if by is Scope.ALL:
        return ALL
    try:
        return groups[org]
    except KeyError:
        raise ValueError(f"org {org!r} has no group binding") from None


def pooled_counts(
    aggs: Sequence[DailyAggregate],
    by: Scope | str = Scope.ORG,
    bindings: Iterable[OrgBinding] | Mapping[str, Group | str] | None = None,
) -> dict[tuple[str, date], dict[str, int]]:
    """Sum aggregates within (scope, date); the exact pooling used everywhere."""
    by = Scope(by)
    groups = _groups(bindings) if by is Scope.GROUP else None
    if by is Scope.GROUP and bindings is None:
        raise ValueError("group pooling needs bindings")
    pooled: dict[tuple[str, date], dict[str, int]] = {}
    for a in aggs:
        key = (_scope_key(by, a.org_id, groups), a.date)
        slot = pooled.setdefault(key, {"total": 0, "malicious": 0, "grey": 0, "benign": 0})
        slot["total"] += a.total
        slot["malicious"] += a.malicious
        slot["grey"] += a.grey
        slot["benign"] += a.benign
    return pooled


def _span(aggs: Sequence[DailyAggregate]) -> list[date]:
    if not aggs:
        return []
    return days_between(min(a.date for a in aggs), max(a.date for a in aggs))


def proportion_series(
    aggs: Sequence[DailyAggregate],
    cls: TrafficClass | str,
    by: Scope | str = Scope.ORG,
    bindings: Iterable[OrgBinding] | Mapping[str, Group | str] | None = None,
) -> list[Point]:
    """Daily class share per scope over the full date span of ``aggs``.

    Days with no traffic in a scope are emitted undefined rather than 0.
    """
    cls = TrafficClass(cls)
    pooled = pooled_counts(aggs, by, bindings)
    scopes = sorted({s for s, _ in pooled})
    metric = f"{cls.value}_proportion"
    out = []
    for scope in scopes:
        for day in _span(aggs):
            slot = pooled.get((scope, day))
            if slot is None or slot["total"] == 0:
                out.append(Point(day, scope, metric, None))
            else:
                out.append(Point(day, scope, metric, slot[cls.value] / slot["total"]))
    return out


def count_series(
    aggs: Sequence[DailyAggregate],
    metric: str = "total",
    by: Scope | str = Scope.ALL,
    bindings: Iterable[OrgBinding] | Mapping[str, Group | str] | None = None,
) -> list[Point]:
    """Zero-filled daily counts (``total``/``malicious``/``grey``/``benign``)."""
    pooled = pooled_counts(aggs, by, bindings)
    scopes = sorted({s for s, _ in pooled})
    out = []
    for scope in scopes:
        for day in _span(aggs):
            slot = pooled.get((scope, day))
            out.append(Point(day, scope, metric, slot[metric] if slot else 0))
    return out


def series_for(points: Iterable[Point], scope: str, metric: str | None = None) -> list[Point]:
    return [p for p in points if p.scope == scope and (metric is None or p.metric == metric)]


# -- per-qname tallies ------------------------------------------------------

@dataclass
class DomainSeries:
    dates: list[date]
    counts: dict[tuple[str, str | None], list[int]]

    def points(self, metric: str = "count") -> list[Point]:
        out = []
        for (qname, org), values in sorted(self.counts.items(), key=lambda kv: (kv[0][0], kv[0][1] or "")):
            scope = qname if org is None else f"{qname}@{org}"
            out.extend(Point(d, scope, metric, v) for d, v in zip(self.dates, values))
        return out


class QnameTally:
    """Counts per (qname, org, day) from a single pass over records."""

    def __init__(self, utc_offset_hours: float = 0):
        self.offset = _offset(utc_offset_hours)
        self.counts: Counter = Counter()
        self.classes: dict[str, TrafficClass] = {}
        self.first: date | None = None
        self.last: date | None = None

    def add(self, record: QueryRecord) -> None:
        day = _day_of(record, self.offset)
        self.counts[(record.qname, record.org, day)] += 1
        self.classes[record.qname] = record.cls
        if self.first is None or day < self.first:
            self.first = day
        if self.last is None or day > self.last:
            self.last = day

    @classmethod
    def from_records(cls, records: Iterable[QueryRecord], utc_offset_hours: float = 0) -> QnameTally:
        tally = cls(utc_offset_hours)
        for r in records:
            tally.add(r)
        return tally

    def totals(self) -> Counter:
        totals: Counter = Counter()
        for (qname, _org, _day), n in self.counts.items():
            totals[qname] += n
        return totals

    def top(self, n: int, exclude: Iterable[str] = (), cls: TrafficClass | None = None) -> list[tuple[str, int]]:
        """Highest-count qnames, ties broken by name; ``cls`` filters by last-seen class."""
        if n < 1:
            raise ValueError("n must be >= 1")
        skip = {q.lower().rstrip(".") for q in exclude}
        pool = ((q, c) for q, c in self.totals().items()
                if q not in skip and (cls is None or self.classes[q] == cls))
        return sorted(pool, key=lambda qc: (-qc[1], qc[0]))[:n]

    def series(self, qnames: Iterable[str], by_org: bool = False) -> DomainSeries:
        wanted = {q.lower().rstrip(".") for q in qnames}
        if not wanted:
            raise ValueError("qnames must be non-empty")
        dates = days_between(self.first, self.last) if self.first is not None else []
        index = {d: i for i, d in enumerate(dates)}
        counts: dict[tuple[str, str | None], list[int]] = {}
        if not by_org:
            for q in wanted:
                counts[(q, None)] = [0] * len(dates)
        for (qname, org, day), n in self.counts.items():
            if qname not in wanted:
                continue
            key = (qname, org if by_org else None)
            row = counts.get(key)
            if row is None:
                row = counts[key] = [0] * len(dates)
            row[index[day]] += n
        return DomainSeries(dates, counts)


def top_domains(records: Iterable[QueryRecord], n: int, exclude: Iterable[str] = ()) -> list[tuple[str, int]]:
    """Top ``n`` qnames by count, ties broken by name, after exclusions."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return QnameTally.from_records(records).top(n, exclude)


def domain_series(records: Iterable[QueryRecord], qnames: Iterable[str], by_org: bool = False) -> DomainSeries:
    """Daily counts per qname (optionally per org) over the observed span."""
    qnames = list(qnames)
    if not qnames:
        raise ValueError("qnames must be non-empty")
    return QnameTally.from_records(records).series(qnames, by_org)


# -- spikes ------------------------------------------------------------------

class SpikeMode(str, enum.Enum):
    GLOBAL_PEAK = "global-peak"
    ROLLING_MEDIAN = "rolling-median"


class SpikeMetric(str, enum.Enum):
    MALICIOUS_COUNT = "malicious"
    GREY_COUNT = "grey"
    MALICIOUS_PROPORTION = "malicious_proportion"


@dataclass(frozen=True)
class SpikeFinding:
    date: date
    scope: str
    metric: str
    value: float
    baseline: float
    ratio: float


def detect_spikes(
    series: Sequence[Point],
    threshold: float = 2.0,
    mode: SpikeMode | str = SpikeMode.GLOBAL_PEAK,
    *,
    window: int = 7,
    floor: float = 10,
    metric: str | None = None,
) -> list[SpikeFinding]:
    """Flag unusually high days in one series (undefined days are skipped).

    GLOBAL_PEAK flags ``value >= threshold * max(all other days)``.
    ROLLING_MEDIAN compares with the median of the preceding ``window``
    defined days; when that median is 0 a day is flagged only if its value
    exceeds ``floor``. Nothing is flagged against a zero baseline unless the
    value is positive.
    """
    if threshold < 1:
        raise ValueError("threshold ratio must be >= 1")
    mode = SpikeMode(mode)
    pts = [p for p in series if p.defined]
    findings = []
    if mode is SpikeMode.GLOBAL_PEAK:
        if len(pts) < 2:
            raise InsufficientData("global-peak detection needs at least 2 defined days")
        values = [p.value for p in pts]
        # top two values give max(all other days) in O(1) per day
        order = sorted(range(len(values)), key=values.__getitem__, reverse=True)
        top, second = order[0], order[1]
        for i, p in enumerate(pts):
            baseline = values[second] if i == top else values[top]
            if _flag(p.value, baseline, threshold, None):
                findings.append(_finding(p, baseline, metric))
    else:
        if len(pts) < window + 1:
            raise InsufficientData(f"rolling-median detection needs at least {window + 1} defined days")
        for i in range(window, len(pts)):
            baseline = statistics.median(p.value for p in pts[i - window:i])
            if _flag(pts[i].value, baseline, threshold, floor):
                findings.append(_finding(pts[i], baseline, metric))
    return findings


def _flag(value: float, baseline: float, threshold: float, floor: float | None) -> bool:
    if baseline > 0:
        return value >= threshold * baseline
    if value <= 0:
        return False
    return floor is None or value > floor


def _finding(p: Point, baseline: float, metric: str | None) -> SpikeFinding:
    ratio = p.value / baseline if baseline > 0 else math.inf
    return SpikeFinding(p.date, p.scope, metric or p.metric, p.value, baseline, ratio)


# -- weekly pattern ----------------------------------------------------------

@dataclass(frozen=True)
class WeekdayProfile:
    scope: str
    means: dict[str, float | None]
    workweek_ratio: float | None
    n_days: int

    @property
    def workweek_ratio_defined(self) -> bool:
        return self.workweek_ratio is not None


def weekday_profile(series: Sequence[Point], scope: str | None = None) -> WeekdayProfile:
    """Per-weekday means and the Mon-Fri : Sat-Sun ratio of daily values."""
    pts = [p for p in series if p.defined and (scope is None or p.scope == scope)]
    if len(pts) < 14:
        raise InsufficientData(f"weekday profile needs >= 14 defined days, got {len(pts)}")
    by_day: dict[int, list[float]] = defaultdict(list)
    for p in pts:
        by_day[p.date.weekday()].append(p.value)
    means = {WEEKDAYS[i]: (statistics.fmean(by_day[i]) if by_day[i] else None) for i in range(7)}
    work = [v for i in range(5) for v in by_day[i]]
    rest = [v for i in (5, 6) for v in by_day[i]]
    ratio = None
    if work and rest and statistics.fmean(rest) > 0:
        ratio = statistics.fmean(work) / statistics.fmean(rest)
    return WeekdayProfile(scope or (pts[0].scope if pts else ALL), means, ratio, len(pts))


# -- control vs treatment ----------------------------------------------------

@dataclass(frozen=True)
class GroupSummary:
    group: str
    mean_malicious_proportion: float | None
    mean_grey_proportion: float | None
    days_with_zero_malicious: int
    defined_days: int
    total: int
    malicious: int
    grey: int


@dataclass
class GroupReport:
    daily: list[Point]
    malicious: list[Point]
    grey: list[Point]
    summary: dict[str, GroupSummary] = field(default_factory=dict)


def _mean_defined(points: Iterable[Point]) -> float | None:
    vals = [p.value for p in points if p.defined]
    return statistics.fmean(vals) if vals else None


def group_report(
    aggs: Sequence[DailyAggregate],
    bindings: Iterable[OrgBinding] | Mapping[str, Group | str],
) -> GroupReport:
    groups = _groups(bindings)
    present = {groups.get(a.org_id) for a in aggs}
    for g in Group:
        if g.value not in present:
            raise InsufficientData(f"no aggregates for the {g.value} group")
    daily = []
    for metric in ("total", "malicious", "grey", "benign"):
        daily.extend(count_series(aggs, metric, Scope.GROUP, groups))
    malicious = proportion_series(aggs, TrafficClass.MALICIOUS, Scope.GROUP, groups)
    grey = proportion_series(aggs, TrafficClass.GREY, Scope.GROUP, groups)
    pooled = pooled_counts(aggs, Scope.GROUP, groups)
    summary = {}
    for g in sorted(Group, key=lambda g: g.value):
        mal = series_for(malicious, g.value)
        slots = [v for (scope, _), v in pooled.items() if scope == g.value]
        summary[g.value] = GroupSummary(
            group=g.value,
            mean_malicious_proportion=_mean_defined(mal),
            mean_grey_proportion=_mean_defined(series_for(grey, g.value)),
            days_with_zero_malicious=sum(1 for p in mal if p.defined and p.value == 0),
            defined_days=sum(1 for p in mal if p.defined),
            total=sum(s["total"] for s in slots),
            malicious=sum(s["malicious"] for s in slots),
            grey=sum(s["grey"] for s in slots),
        )
    return GroupReport(daily, malicious, grey, summary)
