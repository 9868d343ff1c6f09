import json
import subprocess
import sys
from datetime import date

import pytest

from dnshygiene.cli import main
from dnshygiene.firewall import Group
from dnshygiene.querylog import QueryLogWriter
from dnshygiene.synth import SynthProfile, _pools, dump_profiles, generate

from .conftest import StubUpstream

SUBCOMMANDS = [
    ["serve"], ["feed", "stats"], ["classify"], ["ingest"], ["report"], ["top"], ["spikes"], ["weekly"],
    ["compare"], ["its"], ["power"], ["synth", "generate"], ["synth", "replay"], ["synth", "feed"],
    ["synth", "profiles"],
]

TINY = [
    SynthProfile("red", Group.CONTROL, 2, 10.0, 2.0, _pools({"counter.yadro.ru": 1})),
    SynthProfile("green", Group.TREATMENT, 3, 10.0, 3.0, _pools({"counter.yadro.ru": 15})),
]


@pytest.fixture(scope="module")
def logs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    with QueryLogWriter(root / "logs") as w:
        for r in generate(TINY, date(2018, 4, 1), date(2019, 3, 31), seed=2):
            w.append(r)
    profiles = root / "tiny.toml"
    profiles.write_text(dump_profiles(TINY, date(2018, 4, 1), date(2019, 3, 31)), encoding="utf-8")
    return root


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("cmd", SUBCOMMANDS, ids=lambda c: "-".join(c))
def test_help_for_every_subcommand(cmd):
    proc = subprocess.run([sys.executable, "-m", "dnshygiene", *cmd, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "usage:" in proc.stdout


def test_classify_example(capsys, demo_feed):
    code, out, _ = run(capsys, "classify", "counter.yadro.ru", "www.example.com", "--feeds", demo_feed)
    assert code == 0
    assert out.splitlines() == ["grey adware;spyware depth=3 matched=counter.yadro.ru", "benign - depth=0"]


def test_feed_stats(capsys, demo_feed):
    code, out, _ = run(capsys, "feed", "stats", "--feeds", demo_feed, "--json")
    stats = json.loads(out)
    assert code == 0 and stats["total"] == 5 and stats["statuses"]["convicted"] == 1


def test_missing_feed_exit_1(capsys, tmp_path):
    code, _, err = run(capsys, "feed", "stats", "--feeds", tmp_path / "nope.csv")
    assert code == 1 and err.startswith("FILE_UNREADABLE")


def test_bad_argument_exit_2(capsys, logs):
    with pytest.raises(SystemExit) as exc:
        main(["its", "--org", "green", "--date", "not-a-date"])
    assert exc.value.code == 2
    assert "expected YYYY-MM-DD" in capsys.readouterr().err
    code, _, err = run(capsys, "its", "--log-dir", logs / "logs", "--org", "green", "--date", "2019-01-30",
                       "--group", "red=control", "--permutations", "5")
    assert code == 2 and err.startswith("INVALID_ARGUMENT")


def test_its_and_insufficient(capsys, logs, tmp_path):
    args = ["its", "--log-dir", logs / "logs", "--org", "green", "--group", "red=control", "--group", "green=treatment"]
    code, out, _ = run(capsys, *args, "--date", "2019-01-30", "--out", tmp_path / "effect.csv")
    assert code == 0
    est = json.loads(out)
    assert est["distinct_placebos"] == 155 and est["n_defined_days_pre"] == 90
    assert (tmp_path / "effect.csv").read_text().startswith("org,metric")
    code, out2, _ = run(capsys, *args, "--date", "2019-01-30", "--out", "")
    assert out2 == out  # deterministic for a fixed seed
    code, _, err = run(capsys, *args, "--date", "2018-04-10")
    assert code == 1 and err.startswith("INSUFFICIENT_DATA")
    code, _, err = run(capsys, *args, "--date", "2018-08-15")
    assert code == 1 and err.startswith("TOO_FEW_PLACEBOS")


def test_top_spikes_weekly_compare(capsys, logs):
    ld = ["--log-dir", logs / "logs"]
    code, out, _ = run(capsys, "top", *ld, "-n", "3", "--exclude", "www.google.com")
    rows = out.splitlines()
    assert code == 0 and rows[0] == "rank,qname,count" and len(rows) == 4
    assert "www.google.com" not in out
    code, out, _ = run(capsys, "spikes", *ld, "--metric", "malicious", "--threshold", "1.0")
    found = [line.split(",") for line in out.splitlines()[1:]]
    # r=1 reports the argmax day(s); ties at the maximum all qualify
    assert code == 0 and found and len({f[3] for f in found}) == 1 and all(f[5] == "1.0" for f in found)
    code, out, _ = run(capsys, "weekly", *ld, "--metric", "total", "--org", "green")
    header, row = out.splitlines()
    assert header.startswith("scope,metric,n_days,workweek_ratio") and row.startswith("green,total,365,")
    code, out, _ = run(capsys, "compare", *ld, "--group", "red=control", "--group", "green=treatment")
    assert code == 0 and out.splitlines()[0].startswith("group,")


def test_report_command(capsys, logs, tmp_path):
    code, out, _ = run(capsys, "report", "--log-dir", logs / "logs", "--out", tmp_path / "rep",
                       "--group", "red=control", "--group", "green=treatment")
    assert code == 0 and (tmp_path / "rep" / "summary.json").exists()
    assert (tmp_path / "rep" / "total_requests.svg").exists()


def test_missing_log_dir(capsys, tmp_path):
    code, _, err = run(capsys, "top", "--log-dir", tmp_path / "none")
    assert code == 1 and err.startswith("MISSING_DIR")


def test_ingest_and_synth_generate(capsys, tmp_path, logs):
    jsonl = tmp_path / "t.jsonl"
    code, _, _ = run(capsys, "synth", "generate", "--profiles", logs / "tiny.toml", "--start", "2018-09-01",
                     "--end", "2018-09-07", "--seed", "4", "--out", jsonl)
    assert code == 0
    first = jsonl.read_bytes()
    run(capsys, "synth", "generate", "--profiles", logs / "tiny.toml", "--start", "2018-09-01",
        "--end", "2018-09-07", "--seed", "4", "--out", jsonl)
    assert jsonl.read_bytes() == first
    n = first.count(b"\n")
    code, out, _ = run(capsys, "ingest", "--jsonl", jsonl, "--log-dir", tmp_path / "logs")
    assert code == 0 and json.loads(out) == {"ingested": n, "skipped": 0, "scanned": n}


def test_ingest_csv_needs_map(capsys, tmp_path, demo_feed):
    src = tmp_path / "chat.csv"
    src.write_text("ts,site,name\n2018-09-17T09:00:00Z,green,evil.example\n")
    code, _, err = run(capsys, "ingest", "--csv", src, "--log-dir", tmp_path / "l")
    assert code == 1 and err.startswith("CONFIG_ERROR")
    code, out, _ = run(capsys, "ingest", "--csv", src, "--map", "ts=ts", "--map", "org=site", "--map", "qname=name",
                       "--feeds", demo_feed, "--log-dir", tmp_path / "l")
    assert code == 0 and json.loads(out)["ingested"] == 1


def test_synth_feed_and_profiles(capsys, tmp_path):
    assert run(capsys, "synth", "feed", "--out", tmp_path / "feed.csv")[0] == 0
    code, out, _ = run(capsys, "classify", "counter.yadro.ru", "--feeds", tmp_path / "feed.csv")
    assert out.startswith("grey ")
    assert run(capsys, "synth", "profiles", "--out", tmp_path / "p.toml")[0] == 0
    assert "[org.green]" in (tmp_path / "p.toml").read_text()


def test_synth_replay_against_stub(capsys, tmp_path, logs):
    jsonl = tmp_path / "t.jsonl"
    run(capsys, "synth", "generate", "--profiles", logs / "tiny.toml", "--start", "2018-09-03",
        "--end", "2018-09-03", "--out", jsonl)
    n = jsonl.read_text().count("\n")
    with StubUpstream() as stub:
        code, out, _ = run(capsys, "synth", "replay", "--input", jsonl, "--target", f"127.0.0.1:{stub.endpoint[1]}")
    stats = json.loads(out)
    assert code == 0 and stats["sent"] == stats["answered"] == n and stats["blocked"] == 0


def test_power_to_stdout(capsys, logs):
    code, out, _ = run(capsys, "power", "--profiles", logs / "tiny.toml", "--org", "green", "--grid", "1.0,0.7",
                       "--trials", "20", "--permutations", "100", "--out", "-")
    rows = out.splitlines()
    assert code == 0 and rows[0].startswith("multiplier,") and len(rows) == 3


def test_serve_bad_config(capsys, tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('log_dir = "x"\n')
    code, _, err = run(capsys, "serve", "--config", bad)
    assert code == 1 and err.startswith("CONFIG_ERROR")
