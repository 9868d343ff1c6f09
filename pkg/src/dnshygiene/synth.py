"""Deterministic synthetic DNS traffic.

Generation happens in two stages that use separate RNG streams:

1. :func:`simulate_daily` draws per-org, per-day class counts plus the
   injected burst/peak volumes. This is cheap and is all the intervention
   experiments need.
2. :func:`generate` expands those counts into individual query records with
   qnames and business-hour timestamps.

Because stage 2 never changes a count, ``daily_aggregate(generate(...))``
reproduces stage 1 exactly.

Regular traffic for an org on day *d* is Poisson with mean
``n_users * per_user_daily_rate * (weekday_amplitude if Mon-Fri else 1)``,
split into classes by the average per-user class mix (bad-egg users
reweight their own mix). An intervention multiplies the grey/malicious
emission *rates* from its date onward; removed queries are not replaced.
"""

from __future__ import annotations

import heapq
import math
import zlib
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .config import read_toml
from .errors import ConfigError
from .firewall import FirewallPolicy, Group, decide_action
from .intel import Status, ThreatEntry, TrafficClass, Verdict, entry_class, merge_feeds
from .querylog import Action, QueryRecord
from .wire import DomainName

CLASSES = (TrafficClass.BENIGN, TrafficClass.GREY, TrafficClass.MALICIOUS)
BENIGN, GREY, MALICIOUS = range(3)

DEFAULT_START = date(2018, 4, 1)
DEFAULT_END = date(2018, 11, 30)
BUSINESS_START_S = 8 * 3600
BUSINESS_END_S = 18 * 3600
PEAK_WINDOW_S = (10 * 3600, 15 * 3600)


@dataclass(frozen=True)
class PoolDomain:
    qname: str
    cls: TrafficClass
    weight: float = 1.0
    status: Status | None = None
    tags: frozenset[str] = frozenset()

    def entry(self) -> ThreatEntry | None:
        if self.cls is TrafficClass.BENIGN:
            return None
        return ThreatEntry(DomainName.parse(self.qname), self.status, self.tags, "synthetic")


@dataclass(frozen=True)
class BadEgg:
    user: int
    grey_weight_multiplier: float = 1.0
    malicious_weight_multiplier: float = 1.0


@dataclass(frozen=True)
class Burst:
    """``n_days`` of extra queries for one qname.

    Days are drawn at random unless ``start`` pins a consecutive run.
    """

    qname: str
    n_days: int
    min_per_day: int
    max_per_day: int
    start: date | None = None


@dataclass(frozen=True)
class Intervention:
    date: date
    grey_multiplier: float = 1.0
    malicious_multiplier: float = 1.0


@dataclass(frozen=True)
class Peak:
    """Tops up malicious queries on ``date`` so the all-org malicious count
    that day is ``ceil(factor * max over every other day)``."""

    date: date
    qnames: tuple[str, ...]
    factor: float = 2.0


@dataclass(frozen=True)
class SynthProfile:
    org_id: str
    group: Group
    n_users: int
    per_user_daily_rate: float
    weekday_amplitude: float
    pools: tuple[PoolDomain, ...]
    bad_eggs: tuple[BadEgg, ...] = ()
    bursts: tuple[Burst, ...] = ()
    intervention: Intervention | None = None
    peaks: tuple[Peak, ...] = ()

    def __post_init__(self) -> None:
        if self.n_users < 1 or self.per_user_daily_rate <= 0 or self.weekday_amplitude <= 0:
            raise ConfigError(f"{self.org_id}: users, rate and amplitude must be positive")
        if any(p.weight < 0 for p in self.pools):
            raise ConfigError(f"{self.org_id}: pool weights must be >= 0")
        for egg in self.bad_eggs:
            if not 0 <= egg.user < self.n_users:
                raise ConfigError(f"{self.org_id}: bad egg user {egg.user} out of range")
            if egg.grey_weight_multiplier <= 0 or egg.malicious_weight_multiplier <= 0:
                raise ConfigError(f"{self.org_id}: multipliers must be > 0")
        if self.intervention is not None and (
            self.intervention.grey_multiplier <= 0 or self.intervention.malicious_multiplier <= 0
        ):
            raise ConfigError(f"{self.org_id}: intervention multipliers must be > 0")
        for burst in self.bursts:
            if burst.n_days < 1 or not 0 <= burst.min_per_day <= burst.max_per_day:
                raise ConfigError(f"{self.org_id}: bad burst {burst}")
        for peak in self.peaks:
            for q in peak.qnames:
                if self.pool_class(q) is not TrafficClass.MALICIOUS:
                    raise ConfigError(f"{self.org_id}: peak qname {q} is not in the malicious pool")

    def pool(self, cls: TrafficClass) -> list[PoolDomain]:
        return [p for p in self.pools if p.cls is cls and p.weight > 0]

    def pool_class(self, qname: str) -> TrafficClass:
        for p in self.pools:
            if p.qname == qname:
                return p.cls
        return TrafficClass.BENIGN

    def class_weights(self) -> np.ndarray:
        return np.array([sum(p.weight for p in self.pool(c)) for c in CLASSES], dtype=float)

    def class_shares(self) -> np.ndarray:
        """Average per-user class mix (benign, grey, malicious)."""
        weights = self.class_weights()
        mult = np.ones((self.n_users, 3))
        for egg in self.bad_eggs:
            mult[egg.user, GREY] *= egg.grey_weight_multiplier
            mult[egg.user, MALICIOUS] *= egg.malicious_weight_multiplier
        per_user = weights * mult
        totals = per_user.sum(axis=1, keepdims=True)
        per_user = np.divide(per_user, totals, out=np.zeros_like(per_user), where=totals > 0)
        return per_user.mean(axis=0)


@dataclass
class Injection:
    qname: str
    cls: TrafficClass
    count: int
    peak: bool = False


@dataclass
class OrgDays:
    """Stage-1 output for one org."""

    org_id: str
    dates: list[date]
    base: np.ndarray  # (n_days, 3) regular-traffic class counts
    injections: list[list[Injection]] = field(default_factory=list)

    def class_totals(self) -> np.ndarray:
        totals = self.base.copy()
        for i, day in enumerate(self.injections):
            for inj in day:
                totals[i, CLASSES.index(inj.cls)] += inj.count
        return totals


def _org_key(org_id: str) -> int:
    return zlib.crc32(org_id.encode("utf-8"))


def _rng(seed: int, org_id: str, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, _org_key(org_id), stream])


def date_range(start: date, end: date) -> list[date]:
    if end < start:
        raise ValueError(f"empty date range {start}..{end}")
    return [start + timedelta(days=i) for i in range((end - start).days + 1)]


def expected_class_rates(profile: SynthProfile, dates: Sequence[date]) -> np.ndarray:
    """Mean regular-traffic counts per day and class, shape (n_days, 3)."""
    weekday = np.array([d.weekday() < 5 for d in dates])
    volume = profile.n_users * profile.per_user_daily_rate * np.where(weekday, profile.weekday_amplitude, 1.0)
    rates = volume[:, None] * profile.class_shares()[None, :]
    iv = profile.intervention
    if iv is not None:
        after = np.array([d >= iv.date for d in dates])
        rates[after, GREY] *= iv.grey_multiplier
        rates[after, MALICIOUS] *= iv.malicious_multiplier
    return rates


def _simulate_org(profile: SynthProfile, dates: list[date], seed: int) -> OrgDays:
    rng = _rng(seed, profile.org_id, 0)
    base = rng.poisson(expected_class_rates(profile, dates)).astype(np.int64)
    injections: list[list[Injection]] = [[] for _ in dates]
    index = {d: i for i, d in enumerate(dates)}
    for burst in profile.bursts:
        if burst.n_days > len(dates):
            raise ConfigError(f"{profile.org_id}: burst of {burst.n_days} days exceeds {len(dates)}-day range")
        if burst.start is not None:
            days = [index[d] for d in date_range(burst.start, burst.start + timedelta(days=burst.n_days - 1)) if d in index]
        else:
            days = sorted(rng.choice(len(dates), size=burst.n_days, replace=False).tolist())
        cls = profile.pool_class(burst.qname)
        for i in days:
            count = int(rng.integers(burst.min_per_day, burst.max_per_day + 1))
            injections[i].append(Injection(burst.qname, cls, count))
    return OrgDays(profile.org_id, dates, base, injections)


def _apply_peaks(profiles: Sequence[SynthProfile], orgs: list[OrgDays], seed: int) -> None:
    dates = orgs[0].dates
    index = {d: i for i, d in enumerate(dates)}
    for profile, org in zip(profiles, orgs):
        rng = _rng(seed, profile.org_id, 2)
        for peak in profile.peaks:
            if peak.date not in index:
                continue
            i = index[peak.date]
            malicious = sum(o.class_totals()[:, MALICIOUS] for o in orgs)
            others = np.delete(malicious, i)
            target = math.ceil(peak.factor * int(others.max())) if len(others) else 0
            extra = max(target - int(malicious[i]), 0)
            if extra == 0:
                continue
            split = rng.multinomial(extra, [1 / len(peak.qnames)] * len(peak.qnames))
            for qname, count in zip(peak.qnames, split):
                if count:
                    org.injections[i].append(Injection(qname, TrafficClass.MALICIOUS, int(count), peak=True))


def simulate_daily(
    profiles: Sequence[SynthProfile], start: date, end: date, seed: int
) -> list[OrgDays]:
    dates = date_range(start, end)
    orgs = [_simulate_org(p, dates, seed) for p in profiles]
    _apply_peaks(profiles, orgs, seed)
    return orgs


# -- stage 2: records -------------------------------------------------------

@dataclass(frozen=True)
class _QnameInfo:
    cls: TrafficClass
    action: Action
    rcode: int
    matched: str | None
    tags: tuple[str, ...] | None


def _qname_info(profile: SynthProfile, policy: FirewallPolicy) -> dict[str, _QnameInfo]:
    info = {}
    names = {p.qname for p in profile.pools} | {b.qname for b in profile.bursts}
    names |= {q for peak in profile.peaks for q in peak.qnames}
    by_name = {p.qname: p for p in profile.pools}
    for qname in names:
        pd_ = by_name.get(qname)
        entry = pd_.entry() if pd_ is not None else None
        if entry is None:
            info[qname] = _QnameInfo(TrafficClass.BENIGN, Action.FORWARDED, 0, None, None)
            continue
        verdict = Verdict(entry_class(entry), entry, len(entry.domain))
        blocked = decide_action(policy, verdict)
        info[qname] = _QnameInfo(
            verdict.cls,
            Action.BLOCKED if blocked else Action.FORWARDED,
            3 if blocked else 0,
            qname if verdict.cls is not TrafficClass.BENIGN else None,
            tuple(sorted(entry.tags)) if verdict.cls is not TrafficClass.BENIGN else None,
        )
    return info


def _expand_org(profile: SynthProfile, org: OrgDays, seed: int, policy: FirewallPolicy) -> Iterator[QueryRecord]:
    rng = _rng(seed, profile.org_id, 1)
    info = _qname_info(profile, policy)
    pools = []
    for cls in CLASSES:
        members = profile.pool(cls)
        names = [p.qname for p in members]
        w = np.array([p.weight for p in members], dtype=float)
        pools.append((names, w / w.sum() if len(w) else w))
    epoch = datetime(1970, 1, 1, tzinfo=timezone.utc)
    for i, day in enumerate(org.dates):
        day_start = int((datetime(day.year, day.month, day.day, tzinfo=timezone.utc) - epoch).total_seconds())
        names_today: list[str] = []
        secs_today: list[np.ndarray] = []
        for c in range(3):
            k = int(org.base[i, c])
            if k == 0:
                continue
            names, p = pools[c]
            if not names:
                raise ConfigError(f"{profile.org_id}: {CLASSES[c].value} traffic drawn from an empty pool")
            picks = rng.choice(len(names), size=k, p=p)
            names_today.extend(names[j] for j in picks)
            secs_today.append(rng.integers(BUSINESS_START_S, BUSINESS_END_S, size=k))
        for inj in org.injections[i]:
            lo, hi = PEAK_WINDOW_S if inj.peak else (BUSINESS_START_S, BUSINESS_END_S)
            names_today.extend([inj.qname] * inj.count)
            secs_today.append(rng.integers(lo, hi, size=inj.count))
        if not names_today:
            continue
        secs = np.concatenate(secs_today)
        order = np.argsort(secs, kind="stable")
        for j in order.tolist():
            qname = names_today[j]
            meta = info[qname]
            yield QueryRecord(
                ts=datetime.fromtimestamp(day_start + int(secs[j]), tz=timezone.utc),
                org=profile.org_id,
                qname=qname,
                qtype=1,
                cls=meta.cls,
                action=meta.action,
                rcode=meta.rcode,
                matched=meta.matched,
                tags=meta.tags,
            )


def generate(
    profiles: Sequence[SynthProfile],
    start: date = DEFAULT_START,
    end: date = DEFAULT_END,
    seed: int = 0,
    *,
    policy: FirewallPolicy | None = None,
) -> Iterator[QueryRecord]:
    """Chronologically ordered records for all profiles.

    Records with equal timestamps keep profile order, so output depends only
    on the inputs and the seed.
    """
    policy = policy or FirewallPolicy()
    orgs = simulate_daily(profiles, start, end, seed)
    streams = [_expand_org(p, o, seed, policy) for p, o in zip(profiles, orgs)]
    return heapq.merge(*streams, key=lambda r: r.ts)


def synthetic_feed(profiles: Iterable[SynthProfile]) -> list[ThreatEntry]:
    """Feed entries for every grey/malicious pool domain, one per name."""
    seen: dict[str, ThreatEntry] = {}
    for profile in profiles:
        for p in profile.pools:
            entry = p.entry()
            if entry is not None and p.qname not in seen:
                seen[p.qname] = entry
    return [seen[k] for k in sorted(seen)]


def synthetic_store(profiles: Iterable[SynthProfile]):
    return merge_feeds([synthetic_feed(profiles)])


# -- default six-org preset -------------------------------------------------

_ADWARE = frozenset({"adware", "spyware"})
_MALWARE = frozenset({"malware"})

# Well-known names are illustrative stand-ins; their weights and labels are invented.
CATALOG: tuple[PoolDomain, ...] = (
    PoolDomain("www.google.com", TrafficClass.BENIGN, 120),
    PoolDomain("clients4.google.com", TrafficClass.BENIGN, 60),
    PoolDomain("outlook.office365.com", TrafficClass.BENIGN, 90),
    PoolDomain("login.microsoftonline.com", TrafficClass.BENIGN, 50),
    PoolDomain("www.facebook.com", TrafficClass.BENIGN, 70),
    PoolDomain("graph.facebook.com", TrafficClass.BENIGN, 30),
    PoolDomain("mail.ru", TrafficClass.BENIGN, 40),
    PoolDomain("yandex.ru", TrafficClass.BENIGN, 60),
    PoolDomain("vk.com", TrafficClass.BENIGN, 45),
    PoolDomain("www.youtube.com", TrafficClass.BENIGN, 55),
    PoolDomain("i.ytimg.com", TrafficClass.BENIGN, 35),
    PoolDomain("ctldl.windowsupdate.com", TrafficClass.BENIGN, 25),
    PoolDomain("settings-win.data.microsoft.com", TrafficClass.BENIGN, 30),
    PoolDomain("ocsp.digicert.com", TrafficClass.BENIGN, 20),
    PoolDomain("www.wikipedia.org", TrafficClass.BENIGN, 15),
    PoolDomain("api.telegram.org", TrafficClass.BENIGN, 25),
    PoolDomain("web.whatsapp.com", TrafficClass.BENIGN, 30),
    PoolDomain("www.kaspersky.com", TrafficClass.BENIGN, 8),
    PoolDomain("news.example-kz.org", TrafficClass.BENIGN, 12),
    PoolDomain("cdn.example-cso.org", TrafficClass.BENIGN, 18),
    PoolDomain("counter.yadro.ru", TrafficClass.GREY, 4, Status.FLAGGED, _ADWARE),
    PoolDomain("top-fwz1.mail.ru", TrafficClass.GREY, 4, Status.BLACKLISTED, _ADWARE),
    PoolDomain("mc.tracker-example.net", TrafficClass.GREY, 2, Status.FLAGGED, frozenset({"tracker"})),
    PoolDomain("ads.pup-example.com", TrafficClass.GREY, 1, Status.FLAGGED, frozenset({"pup", "adware"})),
    PoolDomain("chaturbate.org", TrafficClass.MALICIOUS, 1, Status.CONVICTED, _MALWARE),
    PoolDomain("cams.com", TrafficClass.MALICIOUS, 1, Status.BLACKLISTED, _MALWARE),
    PoolDomain("utorrent.com", TrafficClass.MALICIOUS, 1, Status.BLACKLISTED, frozenset({"malware", "pup"})),
    PoolDomain("mininova.org", TrafficClass.MALICIOUS, 1, Status.BLACKLISTED, _MALWARE),
    PoolDomain("www.odnoklassniki.ru", TrafficClass.MALICIOUS, 1, Status.BLACKLISTED, frozenset({"malicious"})),
    PoolDomain("dbk589trlnxim.cloudfront.net", TrafficClass.MALICIOUS, 0.5, Status.CONVICTED, frozenset({"malware", "adware"})),
    PoolDomain("update.c2-example.biz", TrafficClass.MALICIOUS, 0.2, Status.CONVICTED, frozenset({"c2", "botnet"})),
)

BURST_DOMAIN = "ciip-my.sharepoint.com"
PEAK_DATE = date(2018, 9, 17)
PEAK_QNAMES = ("chaturbate.org", "cams.com", "utorrent.com", "mininova.org")


def _pools(weights: dict[str, float] | None = None) -> tuple[PoolDomain, ...]:
    weights = weights or {}
    return tuple(replace(p, weight=weights.get(p.qname, p.weight)) for p in CATALOG)


def default_profiles() -> list[SynthProfile]:
    """Six-org preset: two small, quiet control orgs and four treatment orgs.

    Green and Blue have bad-egg users heavy on grey traffic (Green on
    counter.yadro.ru, Blue on top-fwz1.mail.ru); Pink has a one-week grey
    episode; Green carries the malicious bursts and the single double-height
    malicious day; Turquoise owns the sporadic high-volume sharepoint burst.
    Volumes are plausible fictions sized for ~10^6 records over the range.
    """
    quiet = {"counter.yadro.ru": 0.02, "top-fwz1.mail.ru": 0.02, "mc.tracker-example.net": 0.05,
             "ads.pup-example.com": 0.01}
    quiet.update({p.qname: 0.002 for p in CATALOG if p.cls is TrafficClass.MALICIOUS})
    return [
        SynthProfile("red", Group.CONTROL, 4, 15.0, 2.5, _pools(quiet)),
        SynthProfile("yellow", Group.CONTROL, 3, 15.0, 2.5, _pools(quiet)),
        SynthProfile(
            "green", Group.TREATMENT, 12, 35.0, 4.0,
            _pools({"counter.yadro.ru": 8, "top-fwz1.mail.ru": 3}),
            bad_eggs=(BadEgg(0, 40.0, 60.0),),
            bursts=(
                Burst("www.odnoklassniki.ru", 3, 300, 500, date(2018, 8, 7)),
                Burst("dbk589trlnxim.cloudfront.net", 3, 150, 250, date(2018, 8, 7)),
                Burst("www.odnoklassniki.ru", 2, 250, 400, date(2018, 9, 3)),
                Burst("utorrent.com", 2, 80, 150, date(2018, 9, 3)),
            ),
            peaks=(Peak(PEAK_DATE, PEAK_QNAMES, 2.0),),
        ),
        SynthProfile(
            "blue", Group.TREATMENT, 10, 35.0, 4.0,
            _pools({"counter.yadro.ru": 3, "top-fwz1.mail.ru": 8}),
            bad_eggs=(BadEgg(0, 30.0, 20.0),),
        ),
        SynthProfile(
            "turquoise", Group.TREATMENT, 8, 30.0, 3.5, _pools(),
            bad_eggs=(BadEgg(1, 8.0, 4.0),),
            bursts=(Burst(BURST_DOMAIN, 30, 2000, 20000),),
        ),
        SynthProfile(
            "pink", Group.TREATMENT, 6, 30.0, 3.0, _pools(),
            bursts=(
                Burst("counter.yadro.ru", 7, 150, 300, date(2018, 11, 5)),
                Burst("top-fwz1.mail.ru", 7, 100, 200, date(2018, 11, 5)),
            ),
        ),
    ]


def group_map(profiles: Iterable[SynthProfile]) -> dict[str, Group]:
    return {p.org_id: p.group for p in profiles}


# -- profile files ----------------------------------------------------------

def _d(value) -> date:
    return value if isinstance(value, date) else date.fromisoformat(str(value))


def load_profiles(path: str | Path) -> tuple[list[SynthProfile], date, date]:
    """Read profiles from the TOML dialect used by the service config.

    Top-level ``[[pool]]`` tables define the domain catalogue; each
    ``[org.<id>]`` table may override pool weights via ``weights``.
    """
    raw = read_toml(path)
    try:
        catalog = tuple(
            PoolDomain(
                qname=str(DomainName.parse(p["qname"])),
                cls=TrafficClass(p.get("class", "benign")),
                weight=float(p.get("weight", 1.0)),
                status=Status.parse(p["status"]) if p.get("status") else None,
                tags=frozenset(t.lower() for t in p.get("tags", [])),
            )
            for p in raw.get("pool", [])
        ) or CATALOG
        for p in catalog:
            if p.cls is not TrafficClass.BENIGN and (p.status is None or (p.status is not Status.ALLOWED and not p.tags)):
                raise ConfigError(f"pool domain {p.qname} needs status and tags")
        profiles = []
        for org_id, spec in raw.get("org", {}).items():
            weights = spec.get("weights", {})
            pools = tuple(replace(p, weight=float(weights.get(p.qname, p.weight))) for p in catalog)
            iv = spec.get("intervention")
            profiles.append(SynthProfile(
                org_id=org_id,
                group=Group(spec.get("group", "treatment")),
                n_users=int(spec["n_users"]),
                per_user_daily_rate=float(spec["per_user_daily_rate"]),
                weekday_amplitude=float(spec.get("weekday_amplitude", 1.0)),
                pools=pools,
                bad_eggs=tuple(BadEgg(int(e["user"]), float(e.get("grey_weight_multiplier", 1.0)),
                                      float(e.get("malicious_weight_multiplier", 1.0)))
                               for e in spec.get("bad_egg", [])),
                bursts=tuple(Burst(b["qname"], int(b["n_days"]), int(b["min_per_day"]), int(b["max_per_day"]),
                                   _d(b["start"]) if b.get("start") else None)
                             for b in spec.get("burst", [])),
                intervention=Intervention(_d(iv["date"]), float(iv.get("grey_multiplier", 1.0)),
                                          float(iv.get("malicious_multiplier", 1.0))) if iv else None,
                peaks=tuple(Peak(_d(p["date"]), tuple(p["qnames"]), float(p.get("factor", 2.0)))
                            for p in spec.get("peak", [])),
            ))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: bad profile: {exc}") from exc
    if not profiles:
        raise ConfigError(f"{path}: no [org.<id>] profiles")
    start = _d(raw["start"]) if "start" in raw else DEFAULT_START
    end = _d(raw["end"]) if "end" in raw else DEFAULT_END
    return profiles, start, end


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, date):
        return value.isoformat()
    if isinstance(value, (list, tuple, frozenset, set)):
        items = sorted(value) if isinstance(value, (frozenset, set)) else value
        return "[" + ", ".join(_toml_value(v) for v in items) + "]"
    return '"' + str(value).replace("\\", "\\\\").replace('"', '\\"') + '"'


def dump_profiles(profiles: Sequence[SynthProfile], start: date = DEFAULT_START, end: date = DEFAULT_END) -> str:
    """Inverse of :func:`load_profiles` (catalogue taken from the first profile)."""
    lines = [f"start = {start.isoformat()}", f"end = {end.isoformat()}", ""]
    catalog = {p.qname: p for p in profiles[0].pools}
    for p in catalog.values():
        lines.append("[[pool]]")
        lines.append(f"qname = {_toml_value(p.qname)}")
        lines.append(f"class = {_toml_value(p.cls.value)}")
        lines.append(f"weight = {_toml_value(float(p.weight))}")
        if p.status is not None:
            lines.append(f"status = {_toml_value(p.status.label)}")
            lines.append(f"tags = {_toml_value(p.tags)}")
        lines.append("")
    for prof in profiles:
        key = f"org.{prof.org_id}"
        lines.append(f"[{key}]")
        lines.append(f"group = {_toml_value(prof.group.value)}")
        lines.append(f"n_users = {prof.n_users}")
        lines.append(f"per_user_daily_rate = {_toml_value(float(prof.per_user_daily_rate))}")
        lines.append(f"weekday_amplitude = {_toml_value(float(prof.weekday_amplitude))}")
        overrides = {p.qname: p.weight for p in prof.pools if catalog.get(p.qname) is None or catalog[p.qname].weight != p.weight}
        if overrides:
            body = ", ".join(f"{_toml_value(k)} = {_toml_value(float(v))}" for k, v in overrides.items())
            lines.append(f"weights = {{ {body} }}")
        if prof.intervention is not None:
            iv = prof.intervention
            lines.append(f"intervention = {{ date = {iv.date.isoformat()}, grey_multiplier = {float(iv.grey_multiplier)!r}, "
                         f"malicious_multiplier = {float(iv.malicious_multiplier)!r} }}")
        lines.append("")
        for egg in prof.bad_eggs:
            lines += [f"[[{key}.bad_egg]]", f"user = {egg.user}",
                      f"grey_weight_multiplier = {float(egg.grey_weight_multiplier)!r}",
                      f"malicious_weight_multiplier = {float(egg.malicious_weight_multiplier)!r}", ""]
        for b in prof.bursts:
            lines += [f"[[{key}.burst]]", f"qname = {_toml_value(b.qname)}", f"n_days = {b.n_days}",
                      f"min_per_day = {b.min_per_day}", f"max_per_day = {b.max_per_day}"]
            if b.start is not None:
                lines.append(f"start = {b.start.isoformat()}")
            lines.append("")
        for pk in prof.peaks:
            lines += [f"[[{key}.peak]]", f"date = {pk.date.isoformat()}", f"qnames = {_toml_value(pk.qnames)}",
                      f"factor = {float(pk.factor)!r}", ""]
    return "\n".join(lines)


def with_intervention(profile: SynthProfile, intervention: Intervention | None) -> SynthProfile:
    return replace(profile, intervention=intervention)
