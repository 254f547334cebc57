import csv
import io
import json
import subprocess
import sys

import pytest

from sll.cli import SCHEMA_VERSION, dumps, main, parse_jsonl


def run(args, tmp_path, name="out.jsonl"):
    out = tmp_path / name
    code = main([*args, "-o", str(out)])
    text = out.read_text() if out.exists() else ""
    return code, text


def test_solve_n1_record(tmp_path):
    code, text = run(["solve-n1", "--lambda", "0.05", "--pi", "0.8", "--cost", "0.1"], tmp_path)
    assert code == 0
    (rec,) = parse_jsonl(text)
    assert rec["schema"] == SCHEMA_VERSION
    assert rec["command"] == "solve-n1"
    assert rec["result"]["beta"] == pytest.approx(2 / 9, abs=1e-11)
    assert rec["config"]["lambda"] == 0.05
    assert {"numpy", "scipy", "backend"} <= set(rec["versions"])


def test_bad_lambda_exits_2(tmp_path, capsys):
    code, _ = run(["solve-n1", "--lambda", "0.6"], tmp_path)
    assert code == 2
    assert "lambda" in capsys.readouterr().err


def test_unwritable_output_exits_4(tmp_path):
    target = tmp_path / "missing" / "out.jsonl"
    assert main(["solve-n1", "--lambda", "0.05", "-o", str(target)]) == 4


def test_nonconvergence_record_exits_3(tmp_path):
    code, text = run(["solve-ess", "--lambda", "0.01", "--pi", "0.9", "--cost", "0.1", "--n", "3",
                      "--max-evaluations", "3"], tmp_path)
    assert code == 3
    (rec,) = parse_jsonl(text)
    assert rec["error"]["kind"] == "convergence"
    assert rec["result"] == {}


def test_floats_round_trip_exactly():
    rec = {"x": 0.1 + 0.2, "y": [1e-300, float("inf")], "z": float("nan")}
    back = json.loads(dumps(rec))
    assert back["x"] == 0.1 + 0.2
    assert back["y"][0] == 1e-300


def test_same_seed_same_result(tmp_path):
    args = ["solve-n2", "--lambda", "0.1", "--sim-budget", "200000", "--seed", "5"]
    _, a = run(args, tmp_path, "a.jsonl")
    _, b = run(args, tmp_path, "b.jsonl")
    assert parse_jsonl(a)[0]["result"] == parse_jsonl(b)[0]["result"]
    _, c = run([*args[:-1], "6"], tmp_path, "c.jsonl")
    assert parse_jsonl(c)[0]["result"] != parse_jsonl(a)[0]["result"]


def test_sweep_records_sorted_by_axes(tmp_path):
    code, text = run(["sweep", "solve-ess", "--lambda", "0.1,0.05", "--pi", "0.8",
                      "--cost", "0.1", "--n", "2", "--grid-size", "1024"], tmp_path)
    assert code == 0
    recs = parse_jsonl(text)
    assert [r["config"]["lambda"] for r in recs] == [0.05, 0.1]
    assert [r["config"]["spawn_key"] for r in recs] == [[0], [1]]


def test_empty_sweep_writes_header_only(tmp_path):
    code, text = run(["sweep", "solve-n1", "--lambda", ",", "--format", "csv"], tmp_path,
                     "empty.csv")
    assert code == 0
    lines = text.strip().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("command,lambda")


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# single sample\nlambda = 0.05\npi = 0.8\ncost = 0.2\n")
    code, text = run(["solve-n1", "--config", str(cfg), "--cost", "0.1"], tmp_path)
    assert code == 0
    rec = parse_jsonl(text)[0]
    assert rec["config"]["cost"] == 0.1
    assert rec["result"]["beta"] == pytest.approx(2 / 9, abs=1e-11)


def test_config_file_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("lamda = 0.05\n")
    assert main(["solve-n1", "--config", str(cfg)]) == 2


def test_density_csv(tmp_path):
    code, text = run(["pdmp", "density", "--lambda", "0.2", "--pi", "0.6", "--b", "0.75",
                      "--grid-size", "64", "--format", "csv"], tmp_path, "d.csv")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 64
    assert {"x", "f0", "f1"} <= set(rows[0])
    assert 0 < float(rows[0]["x"]) < float(rows[-1]["x"]) < 1


def test_pdmp_rejects_b_below_range(tmp_path):
    assert main(["pdmp", "lr", "--b", "0.6", "-o", str(tmp_path / "x")]) == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "sll", "solve-n1", "--lambda", "0.05"],
                         capture_output=True, text=True, check=True)
    assert parse_jsonl(out.stdout)[0]["result"]["regime"] == "interior"
