"""``dnshygiene`` command-line entry point.

Exit codes: 0 success, 1 runtime error (stderr line ``CODE: message``),
2 usage error. Data goes to stdout or files, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict
from datetime import date
from pathlib import Path
from typing import Sequence

from . import __version__
from .errors import ConfigError, DnsHygieneError, InsufficientData

log = logging.getLogger("dnshygiene")

DEFAULT_LOG_DIR = "logs"
DEFAULT_REPORT_DIR = "report"


def _date(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {text!r}") from None


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _mapping(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key or not value:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), value.strip()


def _out(path: str | None):
    return sys.stdout if path in (None, "-") else open(path, "w", encoding="utf-8", newline="")


# -- shared helpers -----------------------------------------------------------

def _load_store(args):
    from .intel import load_store
    if not args.feeds:
        raise ConfigError("no feed files given (use --feeds)")
    return load_store(args.feeds, override_paths=args.override or (), exact_only_paths=args.exact or ())


def _groups(args) -> dict:
    """Org -> group from --config, then --group flags, else the synthetic preset."""
    from .firewall import Group
    groups = {}
    if getattr(args, "config", None):
        from .config import load_config
        groups = {b.org_id: b.group for b in load_config(args.config).bindings}
    for org, g in getattr(args, "group", None) or ():
        try:
            groups[org] = Group(g.lower())
        except ValueError:
            raise ConfigError(f"unknown group {g!r} for {org}") from None
    if not groups:
        from .synth import default_profiles, group_map
        groups = group_map(default_profiles())
        log.info("no group mapping given; using the synthetic preset's groups")
    return groups


def _records(args):
    from .querylog import log_date_span, read_all, read_range
    if args.start is None and args.end is None:
        return read_all(args.log_dir)
    span = log_date_span(args.log_dir)
    if span is None:
        return read_all(args.log_dir)
    return read_range(args.log_dir, args.start or span[0], args.end or span[1])


def _aggregates(args):
    from .analytics import daily_aggregate
    stream = _records(args)
    aggs = daily_aggregate(stream, utc_offset_hours=getattr(args, "utc_offset", 0))
    if stream.skipped:
        log.warning("skipped %d unreadable log lines", stream.skipped)
    return aggs


def _write_csv(handle, header: Sequence[str], rows) -> None:
    w = csv.writer(handle, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else v for v in row])


# -- subcommands --------------------------------------------------------------

def cmd_serve(args) -> int:
    from .config import load_config
    from .service import serve
    return serve(load_config(args.config))


def cmd_feed_stats(args) -> int:
    from .intel import store_stats
    stats = store_stats(_load_store(args))
    if args.json:
        print(json.dumps({"total": stats.total, "statuses": stats.statuses, "tags": stats.tags}, sort_keys=True))
    else:
        print(f"total {stats.total}")
        for k, v in stats.statuses.items():
            print(f"status {k} {v}")
        for k, v in sorted(stats.tags.items()):
            print(f"tag {k} {v}")
    return 0


def cmd_classify(args) -> int:
    store = _load_store(args)
    for name in args.names:
        v = store.classify(name)
        tags = ";".join(sorted(v.matched.tags)) if v.matched is not None and v.matched.tags else "-"
        line = f"{v.cls.value} {tags} depth={v.match_depth}"
        if v.matched is not None:
            line += f" matched={v.matched.domain}"
        print(line)
    return 0


def cmd_ingest(args) -> int:
    from .querylog import QueryLogWriter, import_external, read_jsonl
    if args.stdin:
        stream = read_jsonl(sys.stdin)
    elif args.jsonl:
        handle = open(args.jsonl, encoding="utf-8")
        stream = read_jsonl(handle)
    else:
        if not args.map:
            raise ConfigError("--csv needs --map FIELD=COLUMN entries")
        store = _load_store(args)
        stream = import_external(args.csv, dict(args.map), store)
    with QueryLogWriter(args.log_dir, flush_every=10000, flush_interval=5.0) as writer:
        for record in stream:
            writer.append(record)
    print(json.dumps({"ingested": writer.count, "skipped": stream.skipped, "scanned": stream.scanned}))
    return 0


def cmd_report(args) -> int:
    from .report import build_report, emit_report
    report = build_report(
        _records(args), _groups(args), top_n=args.top, exclude=args.exclude or (), track=args.track,
        spike_threshold=args.spike_threshold, utc_offset_hours=args.utc_offset)
    paths = emit_report(report, args.out, args.format.split(","))
    for p in paths:
        print(p)
    return 0


def cmd_top(args) -> int:
    from .analytics import QnameTally
    stream = _records(args)
    tally = QnameTally.from_records(r for r in stream if args.org is None or r.org == args.org)
    _write_csv(sys.stdout, ("rank", "qname", "count"),
               ((i, q, n) for i, (q, n) in enumerate(tally.top(args.n, args.exclude or ()), start=1)))
    return 0


def _metric_series(aggs, metric: str, scope: str, groups=None):
    from .analytics import Scope, count_series, proportion_series
    if metric.endswith("_proportion"):
        return proportion_series(aggs, metric.removesuffix("_proportion"), Scope(scope), groups)
    return count_series(aggs, metric, Scope(scope), groups)


def cmd_spikes(args) -> int:
    from .analytics import detect_spikes
    aggs = _aggregates(args)
    series = _metric_series(aggs, args.metric, args.scope)
    findings = []
    for scope in sorted({p.scope for p in series}):
        pts = [p for p in series if p.scope == scope]
        findings += detect_spikes(pts, args.threshold, args.mode, window=args.window, floor=args.floor)
    _write_csv(sys.stdout, ("date", "scope", "metric", "value", "baseline", "ratio"),
               ((f.date.isoformat(), f.scope, f.metric, f.value, f.baseline, f.ratio) for f in findings))
    return 0


def cmd_weekly(args) -> int:
    from .analytics import WEEKDAYS, weekday_profile
    aggs = _aggregates(args)
    series = _metric_series(aggs, args.metric, args.scope)
    scopes = sorted({p.scope for p in series})
    if args.org:
        scopes = [s for s in scopes if s == args.org]
        if not scopes:
            raise InsufficientData(f"no data for org {args.org!r}")
    rows = []
    for scope in scopes:
        wp = weekday_profile(series, scope)
        rows.append([scope, args.metric, wp.n_days, wp.workweek_ratio] + [wp.means[d] for d in WEEKDAYS])
    _write_csv(sys.stdout, ("scope", "metric", "n_days", "workweek_ratio") + WEEKDAYS, rows)
    return 0


def cmd_compare(args) -> int:
    from .analytics import group_report
    gr = group_report(_aggregates(args), _groups(args))
    rows = [asdict(s) for s in gr.summary.values()]
    _write_csv(sys.stdout, tuple(rows[0]), (r.values() for r in rows))
    if args.out:
        from .report import write_series_csv
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_series_csv(gr.malicious, Path(args.out) / "group_malicious_proportion.csv")
        write_series_csv(gr.grey, Path(args.out) / "group_grey_proportion.csv")
    return 0


def _its_config(args):
    from .intervention import ItsConfig
    return ItsConfig(
        metric=f"{args.metric}_proportion", pre_window=args.pre, post_window=args.post,
        use_control_covariate=not args.no_control, weekday_dummies=not args.no_weekday,
        n_permutations=args.permutations, alpha=args.alpha, rng_seed=args.seed)


def cmd_its(args) -> int:
    from .analytics import Scope, proportion_series
    from .firewall import Group
    from .intervention import estimate_effect, write_effect_csv
    cfg = _its_config(args)
    aggs = _aggregates(args)
    if not aggs:
        raise InsufficientData("no query records in the log directory")
    treated = [p for p in proportion_series(aggs, cfg.metric.cls, Scope.ORG) if p.scope == args.org]
    if not treated:
        raise InsufficientData(f"no records for org {args.org!r}")
    control = None
    if cfg.use_control_covariate:
        groups = _groups(args)
        ctrl_orgs = {o for o, g in groups.items() if Group(g) is Group.CONTROL and o != args.org}
        ctrl_aggs = [a for a in aggs if a.org_id in ctrl_orgs]
        if not ctrl_aggs:
            raise InsufficientData("no control-group records for the covariate (use --no-control)")
        control = proportion_series(ctrl_aggs, cfg.metric.cls, Scope.ALL)
    est = estimate_effect(treated, control, args.date, cfg, first_date=min(a.date for a in aggs))
    out = {"org": args.org, "metric": cfg.metric.value, "intervention_date": args.date.isoformat()}
    out.update(asdict(est))
    print(json.dumps(out, sort_keys=True))
    if args.out:
        write_effect_csv([(args.org, cfg.metric, args.date, est)], args.out)
    return 0


def _profiles(args):
    from .synth import DEFAULT_END, DEFAULT_START, default_profiles, load_profiles
    if getattr(args, "profiles", None):
        profiles, start, end = load_profiles(args.profiles)
    else:
        profiles, start, end = default_profiles(), DEFAULT_START, DEFAULT_END
    return profiles, args.start or start, args.end or end


def cmd_power(args) -> int:
    from .intervention import Experiment, power_analysis, write_power_csv
    profiles, _, _ = _profiles(args)
    exp = Experiment(args.org, args.date, args.start or Experiment.start, args.end or Experiment.end)
    cfg = _its_config(args)
    report = power_analysis(profiles, args.grid, args.trials, cfg, experiment=exp, seed=args.seed)
    write_power_csv(report, sys.stdout if args.out == "-" else args.out)
    return 0


def cmd_synth_generate(args) -> int:
    from .synth import generate
    profiles, start, end = _profiles(args)
    handle = _out(args.out)
    try:
        write = handle.write
        for record in generate(profiles, start, end, args.seed):
            write(record.to_json() + "\n")
    finally:
        if handle is not sys.stdout:
            handle.close()
        else:
            handle.flush()
    return 0


def cmd_synth_feed(args) -> int:
    from .intel import write_feed
    from .synth import synthetic_feed
    profiles, _, _ = _profiles(args)
    write_feed(synthetic_feed(profiles), args.out)
    return 0


def cmd_synth_profiles(args) -> int:
    from .synth import DEFAULT_END, DEFAULT_START, default_profiles, dump_profiles
    with _out(args.out) as handle:
        handle.write(dump_profiles(default_profiles(), DEFAULT_START, DEFAULT_END))
    return 0


def cmd_synth_replay(args) -> int:
    from .querylog import read_jsonl
    from .replay import replay
    endpoints = {}
    sinkhole = args.sinkhole
    if args.config:
        from .config import load_config
        cfg = load_config(args.config)
        endpoints = {b.org_id: b.listen for b in cfg.bindings}
        sinkhole = sinkhole or cfg.policy.sinkhole_addr
    from .firewall import parse_endpoint
    for org, ep in args.endpoint or ():
        endpoints[org] = parse_endpoint(ep)
    target = parse_endpoint(args.target) if args.target else None
    handle = sys.stdin if args.input in (None, "-") else open(args.input, encoding="utf-8")
    with handle:
        stream = read_jsonl(handle)
        stats = replay(stream, endpoints, target=target, speedup=args.speedup, window=args.window,
                       timeout_ms=args.timeout_ms, sinkhole_addr=sinkhole)
    out = {k: v for k, v in asdict(stats).items() if k != "latencies_ms"}
    out["skipped"] = stream.skipped
    print(json.dumps(out, sort_keys=True))
    return 0


# -- parser -------------------------------------------------------------------

class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults, except for unset options and help that names its own."""

    def _get_help_string(self, action):
        text = action.help or ""
        if action.default is None or action.default is False or "default" in text:
            return text
        return super()._get_help_string(action)


def _add_feed_args(p) -> None:
    p.add_argument("--feeds", nargs="+", metavar="CSV", default=[], help="threat-intel feed files")
    p.add_argument("--override", nargs="+", metavar="CSV", default=[], help="allow-list override feeds")
    p.add_argument("--exact", nargs="+", metavar="CSV", default=[], help="feeds matched exactly (no subdomains)")


def _add_log_args(p, range_args: bool = True) -> None:
    p.add_argument("--log-dir", default=DEFAULT_LOG_DIR, help="query log directory")
    if range_args:
        p.add_argument("--start", type=_date, default=None, help="first day (default: first logged day)")
        p.add_argument("--end", type=_date, default=None, help="last day (default: last logged day)")
        p.add_argument("--utc-offset", type=float, default=0.0, help="hours added to UTC before bucketing days")


def _add_group_args(p) -> None:
    p.add_argument("--config", default=None, help="service config supplying org groups")
    p.add_argument("--group", type=_mapping, action="append", metavar="ORG=GROUP",
                   help="org group (control|treatment); repeatable")


def _add_its_args(p) -> None:
    p.add_argument("--metric", choices=("grey", "malicious"), default="grey", help="proportion analysed")
    p.add_argument("--pre", type=int, default=90, help="pre-window days")
    p.add_argument("--post", type=int, default=60, help="post-window days")
    p.add_argument("--no-control", action="store_true", help="drop the control-series covariate")
    p.add_argument("--no-weekday", action="store_true", help="drop weekday dummy terms")
    p.add_argument("--permutations", type=int, default=1000, help="placebo draws")
    p.add_argument("--alpha", type=float, default=0.05, help="significance level")
    p.add_argument("--seed", type=int, default=0, help="RNG seed")


def _add_profile_args(p) -> None:
    p.add_argument("--profiles", default=None, help="profile TOML file (default: built-in six-org preset)")
    p.add_argument("--defaults", action="store_true", help="use the built-in preset (the default)")
    p.add_argument("--start", type=_date, default=None, help="first simulated day")
    p.add_argument("--end", type=_date, default=None, help="last simulated day")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dnshygiene", description="DNS firewall and hygiene analytics",
                                     formatter_class=_Formatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(subparsers, name, func, help_text):
        p = subparsers.add_parser(name, help=help_text, description=help_text, formatter_class=_Formatter)
        p.set_defaults(func=func)
        return p

    p = add(sub, "serve", cmd_serve, "run the DNS firewall until SIGTERM/SIGINT (SIGHUP reloads feeds)")
    p.add_argument("--config", required=True, help="service config file (TOML)")

    feed = sub.add_parser("feed", help="feed inspection", formatter_class=_Formatter)
    feed_sub = feed.add_subparsers(dest="feed_command", required=True, metavar="ACTION")
    p = add(feed_sub, "stats", cmd_feed_stats, "entry counts by status and tag")
    _add_feed_args(p)
    p.add_argument("--json", action="store_true", help="print one JSON object")

    p = add(sub, "classify", cmd_classify, "classify names against feeds")
    p.add_argument("names", nargs="+", metavar="NAME")
    _add_feed_args(p)

    p = add(sub, "ingest", cmd_ingest, "append records to the query log directory")
    _add_log_args(p, range_args=False)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--stdin", action="store_true", help="read native JSONL records from stdin")
    src.add_argument("--jsonl", default=None, help="read native JSONL records from a file")
    src.add_argument("--csv", default=None, help="import a foreign CSV export")
    p.add_argument("--map", type=_mapping, action="append", metavar="FIELD=COLUMN",
                   help="CSV column for a record field (ts, org, qname, qtype, class, action, rcode)")
    _add_feed_args(p)

    p = add(sub, "report", cmd_report, "write the figure bundle (CSV, SVG, summary.json)")
    _add_log_args(p)
    _add_group_args(p)
    p.add_argument("--out", default=DEFAULT_REPORT_DIR, help="output directory")
    p.add_argument("--top", type=_positive_int, default=15, help="top-N domains")
    p.add_argument("--exclude", nargs="+", metavar="QNAME", default=[], help="names removed from the excluded ranking")
    p.add_argument("--track", nargs="+", metavar="QNAME", default=None, help="names tracked per org (default: top 2 grey)")
    p.add_argument("--spike-threshold", type=float, default=2.0, help="global-peak ratio")
    p.add_argument("--format", default="csv,svg", help="comma list of csv, svg")

    p = add(sub, "top", cmd_top, "most requested names")
    _add_log_args(p)
    p.add_argument("-n", type=_positive_int, default=15, help="how many names")
    p.add_argument("--exclude", nargs="+", metavar="QNAME", default=[], help="names to leave out")
    p.add_argument("--org", default=None, help="restrict to one org")

    p = add(sub, "spikes", cmd_spikes, "flag spike days in a daily series")
    _add_log_args(p)
    p.add_argument("--metric", default="malicious", help="daily series to scan",
                   choices=("total", "malicious", "grey", "benign", "malicious_proportion", "grey_proportion"))
    p.add_argument("--scope", choices=("all", "org"), default="all", help="pool all orgs or one series per org")
    p.add_argument("--mode", choices=("global-peak", "rolling-median"), default="global-peak",
                   help="baseline: max of other days, or median of the preceding window")
    p.add_argument("--threshold", type=float, default=2.0, help="ratio to the baseline")
    p.add_argument("--window", type=int, default=7, help="rolling-median window (days)")
    p.add_argument("--floor", type=float, default=10.0, help="minimum value when the rolling baseline is 0")

    p = add(sub, "weekly", cmd_weekly, "weekday means and workweek:weekend ratio")
    _add_log_args(p)
    p.add_argument("--metric", default="grey", help="daily series to profile",
                   choices=("total", "malicious", "grey", "benign", "malicious_proportion", "grey_proportion"))
    p.add_argument("--scope", choices=("all", "org"), default="org", help="pool all orgs or one row per org")
    p.add_argument("--org", default=None, help="only this org")

    p = add(sub, "compare", cmd_compare, "control vs treatment group summary")
    _add_log_args(p)
    _add_group_args(p)
    p.add_argument("--out", default=None, help="also write the group proportion CSVs here")

    p = add(sub, "its", cmd_its, "estimate an intervention effect for one org")
    _add_log_args(p)
    _add_group_args(p)
    p.add_argument("--org", required=True, help="treated org")
    p.add_argument("--date", type=_date, required=True, help="intervention date")
    _add_its_args(p)
    p.add_argument("--out", default="effect.csv", help="effect CSV path ('' to skip)")

    p = add(sub, "power", cmd_power, "simulated detection power over an effect grid")
    p.add_argument("--profiles", default=None, help="profile TOML file (default: built-in preset)")
    p.add_argument("--org", default="green", help="treated org")
    p.add_argument("--date", type=_date, default=date(2019, 1, 30), help="intervention date")
    p.add_argument("--start", type=_date, default=date(2018, 4, 1), help="first simulated day")
    p.add_argument("--end", type=_date, default=date(2019, 3, 31), help="last simulated day")
    p.add_argument("--grid", type=_float_list, default=[1.0, 0.9, 0.75, 0.5], help="rate multipliers")
    p.add_argument("--trials", type=int, default=100, help="datasets per grid point")
    _add_its_args(p)
    p.add_argument("--out", default="power.csv", help="power CSV path ('-' for stdout)")

    synth = sub.add_parser("synth", help="synthetic traffic", formatter_class=_Formatter)
    synth_sub = synth.add_subparsers(dest="synth_command", required=True, metavar="ACTION")
    p = add(synth_sub, "generate", cmd_synth_generate, "write synthetic records as JSONL")
    _add_profile_args(p)
    p.add_argument("--seed", type=int, default=0, help="RNG seed")
    p.add_argument("--out", default="-", help="output file ('-' for stdout)")

    p = add(synth_sub, "replay", cmd_synth_replay, "send JSONL records as live queries")
    p.add_argument("--input", default="-", help="JSONL file ('-' for stdin)")
    p.add_argument("--config", default=None, help="service config supplying org endpoints")
    p.add_argument("--endpoint", type=_mapping, action="append", metavar="ORG=IP:PORT", help="org endpoint; repeatable")
    p.add_argument("--target", default=None, help="endpoint for orgs without one")
    p.add_argument("--speedup", type=float, default=math.inf, help="time compression (inf: no pacing)")
    p.add_argument("--window", type=int, default=64, help="queries in flight")
    p.add_argument("--timeout-ms", type=int, default=2500, help="per-query timeout")
    p.add_argument("--sinkhole", default=None, help="sinkhole address counted as blocked")

    p = add(synth_sub, "feed", cmd_synth_feed, "write the feed matching the synthetic pools")
    _add_profile_args(p)
    p.add_argument("--out", required=True, help="feed CSV path")

    p = add(synth_sub, "profiles", cmd_synth_profiles, "write the built-in preset as a profile file")
    p.add_argument("--out", default="-", help="output file ('-' for stdout)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=max(level, logging.DEBUG), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DnsHygieneError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"INVALID_ARGUMENT: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 0
    except OSError as exc:
        print(f"IO_ERROR: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
