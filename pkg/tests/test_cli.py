import json
import subprocess
import sys

import pytest

from commlab.cli import main
from commlab.l0stream import random_strict_stream


def run(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr().out


def records(text):
    return [json.loads(line) for line in text.splitlines()]


def test_verify_healthy(capsys):
    code, out = run(["verify", "--seed", "42"], capsys)
    assert code == 0
    recs = records(out)
    assert recs and all(r["passed"] for r in recs)
    assert all(r["seed"] == 42 and "build" in r and "config" in r for r in recs)


def test_binomial_shift_probe(capsys):
    code, out = run(["probe", "binomial-shift", "--t", "100"], capsys)
    assert code == 0
    assert records(out)[0]["sd"] == pytest.approx(0.0796, abs=1e-4)


def test_l0_estimate_from_file(tmp_path, capsys):
    path = tmp_path / "f.txt"
    random_strict_stream(2000, 8000, 50, 600, seed=1).save(path)
    code, out = run(["l0", "estimate", "--stream", str(path), "--epsilon", "0.1",
                     "--delta", "0.33", "--seed", "7"], capsys)
    assert code == 0
    rec = records(out)[0]
    assert set(rec) >= {"estimate", "space_bits", "exact"}
    assert rec["exact"] == 600
    assert abs(rec["estimate"] - 600) <= 60


def test_same_seed_same_bytes(capsys):
    argv = ["ghse", "reduce", "--trials", "20", "--seed", "3"]
    _, a = run(argv, capsys)
    _, b = run(argv, capsys)
    assert a == b
    _, c = run(["ghse", "reduce", "--trials", "20", "--seed", "4"], capsys)
    assert c != a


def test_csv_output(capsys):
    code, out = run(["ghse", "bias", "--max-n2", "9", "--format", "csv"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("n2,bias")
    assert len(lines) == 1 + 5
    assert "163/256" in lines[-1]


def test_out_file(tmp_path, capsys):
    target = tmp_path / "r.jsonl"
    code, out = run(["simulate", "amplify", "--out", str(target)], capsys)
    assert code == 0 and out == ""
    rec = records(target.read_text())[0]
    assert (rec["t"], rec["M"]) == (57, 115)


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["probe", "binomial-shift", "--bogus"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_cap_refusal_exits_3(capsys):
    code, out = run(["probe", "rectangle", "--k", "6", "--m", "4", "--p", "5"], capsys)
    assert code == 3
    rec = json.loads(out)
    assert rec["reason"] == "enumeration-cap"


def test_env_cap_override(capsys, monkeypatch):
    monkeypatch.setenv("COMMLAB_ENUM_CAP", "10")
    code, out = run(["probe", "rectangle", "--k", "3", "--m", "2", "--p", "3"], capsys)
    assert code == 3


def test_subcommands_smoke(tmp_path, capsys):
    path = tmp_path / "g.txt"
    assert run(["l0", "generate", "--stream", str(path), "--N", "500", "--m", "2000",
                "--l0", "100"], capsys)[0] == 0
    for argv in (["sumequal", "--trials", "200", "--k", "4", "--modulus", "7"],
                 ["sumequal", "--trials", "200", "--k", "6", "--bound", "20"],
                 ["simulate", "stream", "--m", "4"],
                 ["simulate", "k-from-2", "--k", "4", "--p", "3", "--trials", "50"],
                 ["l0", "embed", "--trials", "2", "--n", "100", "--t", "2", "--epsilon", "0.1"],
                 ["probe", "smoothing", "--t", "20", "--p", "5"],
                 ["probe", "decompose", "--probs", "5", "3", "2"],
                 ["probe", "sd", "--a", "1", "1", "--b", "1", "3"]):
        code, out = run(argv, capsys)
        assert code == 0, argv
        assert records(out)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "commlab", "probe", "binomial-shift", "--t", "4"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["exact"] == "3/8"
