import csv
import json
import subprocess
import sys

import pytest

from tweetdid.cli import main
from tweetdid.synthetic import write_demo_inputs

STAGES = ("ingest", "classify", "estimate", "event-study", "sensitivity", "placebo", "simulate", "balance")


def body(path):
    return [r for r in csv.reader(line for line in open(path) if not line.startswith("#"))]


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    root = tmp_path_factory.mktemp("demo")
    write_demo_inputs(root, seed=3, n_municipalities=24, users_per_municipality=4, tweets_per_user=20)
    for stage in STAGES:
        assert main([stage, "--config", str(root / "config.json")]) == 0, stage
    return root


def test_all_outputs_carry_header(demo):
    out = demo / "out"
    sha = None
    for f in sorted(out.iterdir()):
        text = f.read_text()
        if f.suffix == ".json":
            meta = json.loads(text)["meta"]
        else:
            first = text.splitlines()[0]
            assert first.startswith("# tool=tweetdid version=0.1.0 seed=3 config_sha256=")
            meta = dict(kv.split("=", 1) for kv in first[2:].split(" ")[:4])
        sha = sha or meta["config_sha256"]
        assert meta["config_sha256"] == sha and str(meta["seed"]) == "3"


def test_classify_columns_and_determinism(demo, tmp_path):
    rows = body(demo / "out" / "topics.csv")
    assert rows[0] == ["tweet_id", "economics", "health", "policy", "politics"]
    assert {v for r in rows[1:] for v in r[1:]} <= {"0", "1"}
    for stage in ("ingest", "classify"):
        assert main([stage, "--config", str(demo / "config.json"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "topics.csv").read_bytes() == (demo / "out" / "topics.csv").read_bytes()


def test_estimate_layout(demo):
    rows = body(demo / "out" / "estimates.csv")
    assert rows[0][:5] == ["outcome", "grouping", "term", "estimate", "se"]
    groupings = {r[1] for r in rows[1:]}
    assert groupings == {"all", "economics", "health", "policy", "politics"}
    assert {r[2] for r in rows[1:]} >= {"constant", "post=1", "red x post=1"}
    bh = body(demo / "out" / "bh.csv")
    assert all(float(r[3]) >= float(r[2]) for r in bh[1:])


def test_bh_family_option(demo, tmp_path):
    row = body(demo / "out" / "bh.csv")[1:]
    assert {r[1] for r in row} == {"red x post=1"} and len(row) == 10
    cfg = json.loads((demo / "config.json").read_text())
    alt = demo / "config_interactions.json"
    cfg["bh"] = {"family": "interactions"}
    cfg["paths"]["panel_artifact"] = "out/panel.csv"
    alt.write_text(json.dumps(cfg))
    assert main(["estimate", "--config", str(alt), "--out", str(tmp_path)]) == 0
    both = body(tmp_path / "bh.csv")[1:]
    assert {r[1] for r in both} == {"red x post=1", "red x post=2"} and len(both) == 20
    cfg["bh"] = {"family": "everything"}
    alt.write_text(json.dumps(cfg))
    assert main(["estimate", "--config", str(alt), "--out", str(tmp_path / "bad")]) == 2


def test_sensitivity_records(demo):
    rows = body(demo / "out" / "sensitivity.csv")[1:]
    by = {}
    for r in rows:
        by.setdefault((r[0], r[1]), []).append(float(r[2]))
    assert by and all(v == [0, 0.5, 1, 1.5, 2] for v in by.values())


def test_simulate_null(demo):
    rows = body(demo / "out" / "simulate.csv")
    rec = dict(zip(rows[0], rows[1]))
    assert rec["abs_bias_lt_3mcse"] == "true" and rec["n_failed"] == "0"


def test_missing_input_exit_2(tmp_path, capsys):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"paths": {"panel": "nowhere.csv"}}))
    assert main(["ingest", "--config", str(cfg)]) == 2
    assert "nowhere.csv" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()
    assert main(["ingest", "--config", str(tmp_path / "absent.json")]) == 2


def test_malformed_row_exit_1(tmp_path, capsys):
    write_demo_inputs(tmp_path, seed=0, n_municipalities=8, users_per_municipality=2, tweets_per_user=3)
    lines = (tmp_path / "tweets.csv").read_text().splitlines()
    lines[5] = lines[5].replace("2020-", "20x0-", 1)
    (tmp_path / "tweets.csv").write_text("\n".join(lines) + "\n")
    assert main(["ingest", "--config", str(tmp_path / "config.json")]) == 1
    assert "row 6" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "tweetdid.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "0.1.0" in res.stdout
    res = subprocess.run([sys.executable, "-m", "tweetdid.cli", "estimate"], capture_output=True, text=True)
    assert res.returncode == 2
