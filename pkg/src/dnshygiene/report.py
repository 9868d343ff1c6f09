"""Figure-analogue report bundle: CSV series, SVG charts, summary JSON.

Series files (``<name>.csv``, columns ``date,scope,metric,value,defined``):

==========================  ===============================================
total_requests              all-org daily query count
benign_vs_malicious         all-org daily benign and malicious counts
malicious_proportion        all-org daily malicious share
top_domains                 daily counts of the top-N qnames
top_domains_excluded        the same after removing ``--exclude`` names
tracked_domains_by_org      tracked (default: top grey) qnames per org
org_breakdown               per-org daily total/benign/malicious/grey
grey_proportion_by_org      per-org daily grey share
group_malicious_proportion  pooled control vs treatment malicious share
group_grey_proportion       pooled control vs treatment grey share
==========================  ===============================================

Each non-empty series also gets ``<name>.svg``; ``summary.json`` carries
top-domain rankings, spike findings, weekday profiles and group summaries.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import svg
from .analytics import (
    ALL, Point, QnameTally, Scope, count_series, daily_aggregate, detect_spikes,
    group_report, proportion_series, weekday_profile,
)
from .errors import InsufficientData, QueryLogError
from .firewall import Group
from .intel import TrafficClass
from .querylog import QueryRecord

log = logging.getLogger(__name__)

CSV_HEADER = ("date", "scope", "metric", "value", "defined")
METHOD_NOTE = (
    "Proportions are per-day class shares; days without traffic are undefined, not zero. "
    "Spike findings use the global-peak rule on all-org malicious counts."
)


@dataclass(frozen=True)
class FigureSpec:
    name: str
    title: str
    y_label: str
    kind: str = "line"  # "line" or "grid" (one panel per scope)


FIGURES = (
    FigureSpec("total_requests", "Total observed requests over time", "requests"),
    FigureSpec("benign_vs_malicious", "Benign and malicious requests", "requests"),
    FigureSpec("malicious_proportion", "Proportion of requests which are malicious", "share"),
    FigureSpec("top_domains", "Most requested FQDNs", "requests"),
    FigureSpec("top_domains_excluded", "Most requested FQDNs, anomalous entries removed", "requests"),
    FigureSpec("tracked_domains_by_org", "Tracked domains by organisation", "requests"),
    FigureSpec("org_breakdown", "Requests by organisation", "requests", "grid"),
    FigureSpec("grey_proportion_by_org", "Grey share by organisation", "share", "grid"),
    FigureSpec("group_malicious_proportion", "Malicious share: control vs treatment", "share"),
    FigureSpec("group_grey_proportion", "Grey share: control vs treatment", "share"),
)


@dataclass
class Report:
    series: dict[str, list[Point]]
    summary: dict = field(default_factory=dict)
    figures: tuple[FigureSpec, ...] = FIGURES

    @classmethod
    def empty(cls) -> Report:
        return cls({f.name: [] for f in FIGURES})


def _tap(records: Iterable[QueryRecord], tally: QnameTally) -> Iterable[QueryRecord]:
    for r in records:
        tally.add(r)
        yield r


def build_report(
    records: Iterable[QueryRecord],
    groups: Mapping[str, Group | str] | None = None,
    *,
    top_n: int = 15,
    exclude: Iterable[str] = (),
    track: Sequence[str] | None = None,
    spike_threshold: float = 2.0,
    utc_offset_hours: float = 0,
) -> Report:
    """Compute every figure series from a single pass over ``records``."""
    exclude = sorted({q.lower().rstrip(".") for q in exclude})
    tally = QnameTally(utc_offset_hours)
    aggs = daily_aggregate(_tap(records, tally), utc_offset_hours=utc_offset_hours)
    report = Report.empty()
    if not aggs:
        report.summary = {"records": 0}
        return report
    s = report.series
    s["total_requests"] = count_series(aggs, "total", Scope.ALL)
    s["benign_vs_malicious"] = count_series(aggs, "benign", Scope.ALL) + count_series(aggs, "malicious", Scope.ALL)
    s["malicious_proportion"] = proportion_series(aggs, TrafficClass.MALICIOUS, Scope.ALL)

    top = tally.top(top_n)
    top_ex = tally.top(top_n, exclude)
    s["top_domains"] = tally.series([q for q, _ in top]).points()
    s["top_domains_excluded"] = tally.series([q for q, _ in top_ex]).points()
    if track is None:
        track = [q for q, _ in tally.top(2, cls=TrafficClass.GREY)]
    if track:
        s["tracked_domains_by_org"] = tally.series(track, by_org=True).points()

    for metric in ("total", "benign", "malicious", "grey"):
        s["org_breakdown"] += count_series(aggs, metric, Scope.ORG)
    s["grey_proportion_by_org"] = proportion_series(aggs, TrafficClass.GREY, Scope.ORG)

    summary: dict = {
        "records": sum(a.total for a in aggs),
        "first_date": min(a.date for a in aggs).isoformat(),
        "last_date": max(a.date for a in aggs).isoformat(),
        "orgs": sorted({a.org_id for a in aggs}),
        "top_domains": top,
        "top_domains_excluded": top_ex,
        "exclusions": exclude,
        "tracked_domains": list(track),
        "method": METHOD_NOTE,
    }
    malicious_all = count_series(aggs, "malicious", Scope.ALL)
    try:
        summary["spikes"] = [_jsonable(asdict(f)) for f in detect_spikes(malicious_all, spike_threshold)]
    except InsufficientData as exc:
        summary["spikes"] = []
        summary["spikes_note"] = str(exc)
    profiles = {}
    for org in summary["orgs"]:
        grey = [p for p in count_series(aggs, "grey", Scope.ORG) if p.scope == org]
        try:
            wp = weekday_profile(grey, org)
        except InsufficientData:
            continue
        profiles[org] = {"means": wp.means, "workweek_ratio": wp.workweek_ratio, "n_days": wp.n_days}
    summary["grey_weekday_profiles"] = profiles

    if groups:
        known = {org: Group(g) for org, g in groups.items()}
        missing = sorted({a.org_id for a in aggs} - set(known))
        if missing:
            summary["groups_note"] = f"no group for orgs {missing}; group comparison skipped"
        else:
            try:
                gr = group_report(aggs, known)
            except InsufficientData as exc:
                summary["groups_note"] = str(exc)
            else:
                s["group_malicious_proportion"] = gr.malicious
                s["group_grey_proportion"] = gr.grey
                summary["groups"] = {k: asdict(v) for k, v in gr.summary.items()}
    report.summary = summary
    return report


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, date):
        return obj.isoformat()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    return obj


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _parse_value(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        return float(text)


def write_series_csv(points: Sequence[Point], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for p in points:
            writer.writerow([p.date.isoformat(), p.scope, p.metric, _format_value(p.value),
                             "true" if p.defined else "false"])


def read_series_csv(path: str | Path) -> list[Point]:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        out = []
        for row in reader:
            value = _parse_value(row["value"]) if row["defined"] == "true" else None
            out.append(Point(date.fromisoformat(row["date"]), row["scope"], row["metric"], value))
        return out


def _figure_svg(spec: FigureSpec, points: Sequence[Point]) -> str:
    metrics = sorted({p.metric for p in points})
    if spec.kind == "grid":
        panels: dict[str, dict[str, list]] = {}
        for p in points:
            panels.setdefault(p.scope, {}).setdefault(p.metric, []).append((p.date, p.value))
        return svg.grid_chart(panels, spec.title, spec.y_label)
    lines: dict[str, list] = {}
    for p in points:
        label = p.scope if len(metrics) == 1 else (p.metric if p.scope == ALL else f"{p.scope} {p.metric}")
        lines.setdefault(label, []).append((p.date, p.value))
    return svg.line_chart(lines, spec.title, spec.y_label)


def emit_report(report: Report, out_dir: str | Path, formats: Iterable[str] = ("csv", "svg")) -> list[Path]:
    """Write the bundle; returns the paths written."""
    formats = set(formats)
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for spec in report.figures:
            points = report.series.get(spec.name, [])
            if "csv" in formats:
                path = out / f"{spec.name}.csv"
                write_series_csv(points, path)
                written.append(path)
            if "svg" in formats and points:
                path = out / f"{spec.name}.svg"
                path.write_text(_figure_svg(spec, points), encoding="utf-8")
                written.append(path)
        path = out / "summary.json"
        path.write_text(json.dumps(_jsonable(report.summary), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(path)
    except OSError as exc:
        raise QueryLogError(f"cannot write report to {out}: {exc}") from exc
    return written
