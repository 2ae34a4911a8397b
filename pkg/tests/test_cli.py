"""CLI contract: exit codes, report formats, determinism, and validation."""

import json
import subprocess
import sys

import pytest

from conftest import problem_bytes


def _cli(*args, timeout=300):
    return subprocess.run(
        [sys.executable, "-m", "bilevelsos.cli", *args],
        capture_output=True, text=True, timeout=timeout,
    )


def test_solve_optimal_exit_zero_and_rounding():
    r = _cli("solve", "sbop2")
    assert r.returncode == 0
    assert "F* = -1.0000" in r.stdout  # human report rounds to 4 decimals
    assert "status = optimal" in r.stdout


def test_solve_input_error_exit_one():
    r = _cli("solve", "/no/such/file.json")
    assert r.returncode == 1
    assert "error:" in r.stderr


def test_solve_bad_document_exit_one(tmp_path):
    bad = tmp_path / "bad.json"
    doc = json.loads(problem_bytes("sbop1"))
    doc["upper"]["objective"] = "x2 + y1"  # x2 is out of range for n = 1
    bad.write_text(json.dumps(doc))
    r = _cli("solve", str(bad))
    assert r.returncode == 1


def test_machine_report_full_precision_and_deterministic():
    r1 = _cli("solve", "sbop2", "--report", "machine", "--seed", "7")
    r2 = _cli("solve", "sbop2", "--report", "machine", "--seed", "7")
    assert r1.returncode == 0
    assert r1.stdout == r2.stdout  # byte-identical per seed
    doc = json.loads(r1.stdout)
    assert doc["schema_version"] == 1
    assert abs(doc["F_star"] + 1.0) <= 1e-6  # full precision, not rounded
    assert "wall_time" not in doc


def test_solve_max_loops_exit_three():
    r = _cli("solve", "kkt_gap", "--max-loops", "1")
    assert r.returncode == 3
    assert "max_loops" in r.stdout


def test_validate_bundled_lme_pass():
    r = _cli("validate", "ex41")
    assert r.returncode == 0
    assert "lme        PASS" in r.stdout
    assert "extension  PASS" in r.stdout


def test_validate_corrupted_w_fails_with_coordinates(tmp_path):
    doc = json.loads(problem_bytes("ex41"))
    doc["lme"]["W"][0][0] = "x1"
    bad = tmp_path / "corrupt.json"
    bad.write_text(json.dumps(doc))
    r = _cli("validate", str(bad))
    assert r.returncode == 3
    assert "lme        FAIL" in r.stdout
    assert "entry (1," in r.stdout  # offending entry coordinates


def test_bench_single_tag():
    r = _cli("bench", "--only", "gap")
    assert r.returncode == 0
    assert "kkt_gap" in r.stdout and "PASS" in r.stdout


def test_bench_unknown_tag_is_input_error():
    r = _cli("bench", "--only", "nonsense")
    assert r.returncode == 1
