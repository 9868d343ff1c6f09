import json
from datetime import date, timedelta

import pytest

from dnshygiene.analytics import Point
from dnshygiene.errors import QueryLogError
from dnshygiene.report import CSV_HEADER, FIGURES, build_report, emit_report, read_series_csv, write_series_csv
from dnshygiene.synth import generate, group_map

from .test_synth import small_profiles


def test_empty_input_gives_header_only_csvs(tmp_path):
    rep = build_report([])
    written = emit_report(rep, tmp_path)
    csvs = sorted(tmp_path.glob("*.csv"))
    assert len(csvs) == len(FIGURES)
    for path in csvs:
        assert path.read_text().splitlines() == [",".join(CSV_HEADER)]
    assert not list(tmp_path.glob("*.svg"))
    assert json.loads((tmp_path / "summary.json").read_text())["records"] == 0
    assert tmp_path / "summary.json" in written


def test_series_csv_round_trip(tmp_path):
    pts = [Point(date(2018, 9, 1) + timedelta(days=i), "green", "grey_proportion", v)
           for i, v in enumerate([0.25, None, 1 / 3, 0.0])]
    pts.append(Point(date(2018, 9, 1), "ALL", "total", 17))
    path = tmp_path / "s.csv"
    write_series_csv(pts, path)
    assert read_series_csv(path) == pts
    assert path.read_text().splitlines()[2] == "2018-09-02,green,grey_proportion,,false"


def test_bad_header_rejected(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n")
    with pytest.raises(ValueError):
        read_series_csv(path)


def test_small_synthetic_report(tmp_path):
    profiles = small_profiles()
    records = list(generate(profiles, date(2018, 9, 3), date(2018, 9, 30), seed=1))
    rep = build_report(records, group_map(profiles), top_n=5, exclude=["www.google.com"])
    assert rep.summary["records"] == len(records)
    assert "www.google.com" not in dict(rep.summary["top_domains_excluded"])
    total = sum(p.value for p in rep.series["total_requests"] if p.scope == "ALL")
    assert total == len(records)
    paths = emit_report(rep, tmp_path / "out")
    svgs = [p for p in paths if p.suffix == ".svg"]
    assert svgs and all(p.read_text().startswith("<svg") or "<svg" in p.read_text()[:200] for p in svgs)
    for spec in FIGURES:
        back = read_series_csv(tmp_path / "out" / f"{spec.name}.csv")
        assert back == rep.series.get(spec.name, [])


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(QueryLogError):
        emit_report(build_report([]), blocker / "sub")
