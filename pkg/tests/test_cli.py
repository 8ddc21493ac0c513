"""Command-line contract: exit codes, artifacts, determinism and golden reports.

Set ``SDFREE_REGEN_GOLDEN=1`` to rewrite ``tests/golden/*.json`` from the
current code (review the diff before committing).
"""
import json
import math
import os
import subprocess
import sys
from pathlib import Path

import pytest

from sdfree.cli import main
from sdfree.validation import load_normal_form

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = Path(__file__).parent / "golden"
REGEN = os.environ.get("SDFREE_REGEN_GOLDEN") == "1"
REPORT_NAME = {"check": "check.json", "normalize": "report.json", "validate": "metrics.json",
               "calibrate": "calibration.json"}


def run(tmp_path, *argv):
    return main([str(a) for a in argv])


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def assert_close(a, b, path="$"):
    """Same structure; numbers equal to 1e-9 relative, everything else exactly."""
    if isinstance(a, dict):
        assert isinstance(b, dict) and sorted(a) == sorted(b), path
        for k in a:
            assert_close(a[k], b[k], f"{path}.{k}")
    elif isinstance(a, list):
        assert isinstance(b, list) and len(a) == len(b), path
        for i, (x, y) in enumerate(zip(a, b)):
            assert_close(x, y, f"{path}[{i}]")
    elif isinstance(a, bool) or a is None or isinstance(a, str):
        assert a == b, path
    elif isinstance(a, (int, float)):
        assert isinstance(b, (int, float)) and not isinstance(b, bool), path
        if math.isnan(a):
            assert math.isnan(b), path
        else:
            assert b == pytest.approx(a, rel=1e-9, abs=1e-300), path
    else:
        raise TypeError(path)


# -- golden reports ----------------------------------------------------------------------------

@pytest.mark.parametrize("command", ["check", "normalize", "validate", "calibrate"])
def test_golden_report(tmp_path, command):
    out = tmp_path / command
    assert run(tmp_path, command, "--config", GOLDEN / f"{command}.yaml", "--out", out) == 0
    got = json.loads((out / REPORT_NAME[command]).read_text())
    gold = GOLDEN / f"{command}.json"
    if REGEN:
        gold.write_text(json.dumps(got, sort_keys=True, indent=2) + "\n")
    assert got["schema"] == 1
    assert_close(json.loads(gold.read_text()), got)


def test_normalize_is_byte_deterministic(tmp_path):
    cfg = GOLDEN / "normalize.yaml"
    for d in ("a", "b"):
        assert run(tmp_path, "normalize", "--config", cfg, "--out", tmp_path / d, "--seed", 5) == 0
    for name in ("report.json", "steps.csv", "g_N.txt", "f_N.txt", "normal_form.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


# -- check -------------------------------------------------------------------------------------

def test_check_margins(tmp_path, capsys):
    assert run(tmp_path, "check", "--config", ROOT / "configs" / "reference.yaml") == 0
    out = capsys.readouterr().out
    assert out.count("margin=") == 3 and "max admissible N: 16" in out


def test_check_beyond_margin(tmp_path, capsys):
    cfg = write(tmp_path, "big.yaml", "instance: {preset: reference, margin_fraction: 1.5}\n")
    assert run(tmp_path, "check", "--config", cfg, "--out", tmp_path) == 1
    err = capsys.readouterr().err
    assert "violated: 3: c N (X/dfrak)|1/wr| ||f|| < 1" in err
    assert json.loads((tmp_path / "check.json").read_text())["ok"] is False


@pytest.mark.parametrize("text, needle", [
    ("instance: {domain: {widths: {rho: -1}}}\n", "instance.domain.widths.rho"),
    ("normalization: {N: 4, wdiths: 1}\n", "normalization.wdiths"),
    ("normalization: [1, 2\n", "YAML syntax error"),
    ("schema: 2\n", "schema"),
    ("instance:\n  dims: {n: 1, m: 1}\n  f:\n    - k: [1, 2]\n      coeff: [{c_re: 1.0}]\n",
     "key lengths"),
])
def test_malformed_config(tmp_path, capsys, text, needle):
    cfg = write(tmp_path, "bad.yaml", text)
    assert run(tmp_path, "check", "--config", cfg) == 2
    err = capsys.readouterr().err
    assert needle in err and "line" in err


def test_usage_errors(tmp_path):
    assert run(tmp_path, "frobnicate") == 2
    assert run(tmp_path, "check", "--config", tmp_path / "missing.yaml") == 2
    assert run(tmp_path, "check", "--seed", -1) == 2


# -- normalize ---------------------------------------------------------------------------------

def test_normalize_reference(tmp_path, capsys):
    assert run(tmp_path, "normalize", "--config", ROOT / "configs" / "reference.yaml",
               "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert all(s["ratio"] <= 0.5 for s in rep["steps"])
    assert rep["final"]["ratio"] <= 1 / 32
    assert rep["constants"]["source"] == "calibrated"
    assert "dfrak" in rep["interpretations"]
    lines = (tmp_path / "steps.csv").read_text().splitlines()
    assert lines[0] == "step,norm_f,norm_phi,ratio,margin_1,margin_2,margin_3"
    assert len(lines) == 6
    fN = (tmp_path / "f_N.txt").read_text().splitlines()
    assert fN[0].startswith("# n=1 m=1") and len(fN) > 1


def test_normalize_rejects_N0(tmp_path, capsys):
    cfg = write(tmp_path, "n0.yaml", "normalization: {N: 0}\n")
    assert run(tmp_path, "normalize", "--config", cfg) == 2
    assert "normalization.N" in capsys.readouterr().err


def test_normalize_failure_names_the_inequality(tmp_path, capsys):
    cfg = write(tmp_path, "big.yaml", "instance: {preset: reference, margin_fraction: 3.0}\n")
    assert run(tmp_path, "normalize", "--config", cfg, "--out", tmp_path) == 1
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["ok"] is False and rep["error"]["inequality"].startswith("3:")


def test_extended_precision(tmp_path):
    cfg = GOLDEN / "normalize.yaml"
    assert run(tmp_path, "normalize", "--config", cfg, "--out", tmp_path / "d") == 0
    assert run(tmp_path, "normalize", "--config", cfg, "--out", tmp_path / "x",
               "--precision", "extended") == 0
    a = json.loads((tmp_path / "d" / "report.json").read_text())
    b = json.loads((tmp_path / "x" / "report.json").read_text())
    assert b["run_config"]["normalization"]["precision"] == "extended"
    assert b["final"]["ratio"] == pytest.approx(a["final"]["ratio"], rel=1e-6)


# -- validate ----------------------------------------------------------------------------------

def test_validate_without_checks(tmp_path, capsys):
    assert run(tmp_path, "validate", "--out", tmp_path) == 0
    assert "no checks requested" in capsys.readouterr().out
    assert json.loads((tmp_path / "metrics.json").read_text())["note"] == "no checks requested"


def test_validate_conjugacy_and_corrupted_generator(tmp_path):
    nf = tmp_path / "nf"
    assert run(tmp_path, "normalize", "--config", GOLDEN / "normalize.yaml", "--out", nf) == 0
    good = write(tmp_path, "good.yaml",
                 f"validation: {{checks: [conjugacy], normal_form_file: {nf / 'normal_form.json'}}}\n")
    assert run(tmp_path, "validate", "--config", good, "--out", tmp_path / "v1") == 0
    # corrupt the first generator by scaling every coefficient
    doc = json.loads((nf / "normal_form.json").read_text())
    for rec in doc["generators"][0]:
        for t in rec["coeff"]:
            t["c_re"] *= 1.5
            t["c_im"] *= 1.5
    (tmp_path / "bad_nf.json").write_text(json.dumps(doc))
    bad = write(tmp_path, "bad.yaml",
                f"validation: {{checks: [conjugacy], normal_form_file: {tmp_path / 'bad_nf.json'}}}\n")
    assert run(tmp_path, "validate", "--config", bad, "--out", tmp_path / "v2") == 1
    m = json.loads((tmp_path / "v2" / "metrics.json").read_text())
    assert m["failed"] == ["conjugacy"]
    assert load_normal_form(nf / "normal_form.json").generators


def test_validate_clock_trajectories(tmp_path):
    assert run(tmp_path, "validate", "--config", GOLDEN / "validate.yaml", "--out", tmp_path) == 0
    files = sorted(p.name for p in (tmp_path / "trajectories").iterdir())
    assert files and all(f.startswith("clock_") and f.endswith(".csv") for f in files)


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "sdfree.cli", "validate"], capture_output=True,
                         text=True, cwd=tmp_path)
    assert res.returncode == 0 and "no checks requested" in res.stdout
