"""Command-line surface: subcommands, outputs, and exit codes."""

import json
import subprocess
import sys

import numpy as np
import pytest

from signhull import cbf, mps, solve
from signhull.cli import main
from signhull.datagen import GenSpec, generate, load_csv, save_csv
from signhull.svm import Estimator


@pytest.fixture
def dataset_csv(tmp_path):
    ds = generate(GenSpec("none", 10, 2, 0.3, 5)).dataset
    path = tmp_path / "points.csv"
    save_csv(ds, path)
    return path


# ---------------------------------------------------------------------------
# hull utilities


def test_hull_rhs_prints_the_hand_value(capsys):
    assert main(["hull", "rhs", "--d", "1,1", "--x", "0.5,-0.2",
                 "--z", "0.3,0.1"]) == 0
    assert capsys.readouterr().out.strip() == "0.225"


def test_hull_check_reports_membership(capsys):
    argv = ["hull", "check", "--d", "1,1", "--x", "0.5,-0.2",
            "--z", "0.3,0.1"]
    assert main(argv + ["--t", "0.3"]) == 0
    assert "member: true" in capsys.readouterr().out
    assert main(argv + ["--t", "0.1"]) == 0
    assert "member: false" in capsys.readouterr().out
    assert main(argv) == 1


def test_hull_inputs_from_json_file(tmp_path, capsys):
    payload = {"d": [1.0, -0.5], "x": [0.4, 0.2], "z": [0.5, 0.5],
               "t": 5.0, "sidedness": "two-sided"}
    path = tmp_path / "set.json"
    path.write_text(json.dumps(payload))
    assert main(["hull", "check", "--file", str(path)]) == 0
    assert "member: true" in capsys.readouterr().out


def test_hull_socp_export_writes_importable_cbf(tmp_path, capsys):
    out = tmp_path / "hull.cbf"
    assert main(["hull", "socp-export", "--d", "1,-0.5",
                 "--out", str(out)]) == 0
    assert str(out) in capsys.readouterr().out
    program = cbf.import_cbf(out.read_text())
    # x pair, z pair, epigraph, plus the split auxiliaries
    assert program.num_vars >= 5
    sol = solve.solve(program)
    assert sol.status is solve.SolveStatus.OPTIMAL
    assert sol.objective == pytest.approx(0.0, abs=1e-7)


# ---------------------------------------------------------------------------
# usage errors


def test_unknown_flag_exits_one(capsys):
    assert main(["hull", "rhs", "--frobnicate", "1"]) == 1
    err = capsys.readouterr().err
    assert "usage: signhull" in err


def test_missing_command_exits_one(capsys):
    assert main([]) == 1
    assert "usage: signhull" in capsys.readouterr().err


def test_conflicting_mode_flags_exit_one(dataset_csv, capsys):
    assert main(["train", "--data", str(dataset_csv), "--method", "hinge",
                 "--lam", "0.5", "--k", "1"]) == 1
    assert main(["train", "--data", str(dataset_csv), "--method", "hinge"]) \
        == 1
    assert main(["train", "--data", str(dataset_csv), "--method", "hinge",
                 "--k", "1"]) == 1


# ---------------------------------------------------------------------------
# datagen


def test_datagen_writes_two_files(tmp_path, capsys):
    out = tmp_path / "inst"
    assert main(["datagen", "--class", "clustered", "--n", "100", "--p", "2",
                 "--sigma", "0.5", "--seed", "1", "--out", str(out)]) == 0
    printed = capsys.readouterr().out.split()
    assert len(printed) == 2
    ds = load_csv(out / "instance.csv")
    assert ds.n == 100 and ds.p == 2
    meta = json.loads((out / "instance.json").read_text())
    assert meta["spec"]["outlier_class"] == "clustered"


def test_datagen_requires_size_and_out(tmp_path):
    assert main(["datagen", "--out", str(tmp_path)]) == 1
    assert main(["datagen", "--n", "10", "--p", "2"]) == 1


# ---------------------------------------------------------------------------
# train


def test_train_writes_estimator_json(dataset_csv, tmp_path, capsys):
    out = tmp_path / "est.json"
    assert main(["train", "--data", str(dataset_csv), "--method", "hinge",
                 "--lam", "0.5", "--seed", "3", "--out", str(out)]) == 0
    est = Estimator.from_json(out.read_text())
    assert est.method == "hinge"
    assert est.seed == 3
    assert est.w.shape == (3,)  # intercept plus two features


def test_train_without_out_prints_json(dataset_csv, capsys):
    assert main(["train", "--data", str(dataset_csv), "--method", "conic1",
                 "--k", "1"]) == 0
    est = Estimator.from_json(capsys.readouterr().out)
    assert est.method.startswith("conic")


def test_train_exit_codes(dataset_csv, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("label,f1\n7,0.5\n")
    assert main(["train", "--data", str(bad), "--method", "hinge",
                 "--lam", "0.5"]) == 3
    # unreadable paths (a directory, a missing file) are validation
    # failures, not tracebacks
    assert main(["train", "--data", str(tmp_path), "--method", "hinge",
                 "--lam", "0.5"]) == 3
    assert main(["train", "--data", str(tmp_path / "nope.csv"),
                 "--method", "hinge", "--lam", "0.5"]) == 3
    # an unreachable tolerance turns into a solver failure
    assert main(["train", "--data", str(dataset_csv), "--method", "hinge",
                 "--lam", "0.5", "--tol", "1e-30"]) == 2


# ---------------------------------------------------------------------------
# bound and cv


def test_bound_writes_stable_csv(tmp_path, capsys):
    out = tmp_path / "rows.csv"
    argv = ["bound", "--methods", "exact,conic1", "--k", "1",
            "--class", "none", "--n", "8", "--p", "2", "--sigma", "0.3",
            "--seed", "4", "--out", str(out), "--no-timestamp"]
    assert main(argv) == 0
    first = out.read_bytes()
    assert main(argv) == 0
    assert out.read_bytes() == first
    table = capsys.readouterr().out
    assert "conic1" in table and "exact" in table


def test_bound_markdown_output(tmp_path, capsys):
    argv = ["bound", "--methods", "conic1", "--k", "1", "--class", "none",
            "--n", "6", "--p", "2", "--seed", "4", "--markdown"]
    assert main(argv) == 0
    assert capsys.readouterr().out.startswith("| instance | method |")


def test_cv_runs_small_grid(tmp_path, capsys):
    argv = ["cv", "--methods", "hinge,bayes", "--class", "none", "--n", "10",
            "--p", "2", "--seed", "4", "--grid", "2", "--test-points", "100"]
    assert main(argv) == 0
    table = capsys.readouterr().out
    assert "bayes" in table and "hinge" in table


# ---------------------------------------------------------------------------
# export


def test_export_mps_and_cbf(dataset_csv, tmp_path, capsys):
    mps_out = tmp_path / "model.mps"
    assert main(["export", "--data", str(dataset_csv), "--method", "bigm",
                 "--format", "mps", "--lam", "0.5", "--big-m", "1000",
                 "--out", str(mps_out)]) == 0
    parsed = mps.parse_mps(mps_out.read_text())
    assert len(parsed.integers) == 10
    assert "1000.0" in mps_out.read_text()

    cbf_out = tmp_path / "model.cbf"
    assert main(["export", "--data", str(dataset_csv), "--method", "conic1",
                 "--k", "1", "--format", "cbf", "--out", str(cbf_out)]) == 0
    cbf.import_cbf(cbf_out.read_text())


def test_export_shape_mismatch_exits_three(dataset_csv, tmp_path, capsys):
    assert main(["export", "--data", str(dataset_csv), "--method", "conic1",
                 "--k", "1", "--format", "mps",
                 "--out", str(tmp_path / "x.mps")]) == 3


# ---------------------------------------------------------------------------
# selftest and the installed script


def test_selftest_passes(capsys):
    assert main(["selftest", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5 and "FAIL" not in out


def test_console_script_entry():
    proc = subprocess.run(
        [sys.executable, "-c",
         "from signhull.cli import main; raise SystemExit("
         "main(['hull', 'rhs', '--d', '1,1', '--x', '0.5,-0.2',"
         " '--z', '0.3,0.1']))"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip() == "0.225"
