"""Text interchange: conic benchmark files and quadratic MPS, checked
against a golden corpus and by round-trip."""

from pathlib import Path

import numpy as np
import pytest

from signhull import cbf, mps, solve, svm
from signhull.cbf import (CbfParseError, UnsupportedConeError, export_cbf,
                          import_cbf, structurally_equal)
from signhull.conic import ConeKind, ProgramBuilder
from signhull.errors import ValidationError
from signhull.mps import MpsParseError, NotMiqpShapedError, export_mps, parse_mps
from signhull.relax import build_bigm_model
from signhull.svm import Cardinality, Penalty, SvmDataset

GOLDEN = Path(__file__).parent / "golden"


def _minimal_lp():
    b = ProgramBuilder("minimal-lp")
    x = b.new_var("x")
    b.add_objective({x: 1.0})
    b.add_nonneg([({x: 1.0}, -1.0)], name="floor")
    return b.finalize()


def _conic1_n3p2():
    ds = SvmDataset(np.array([[1.0, -0.5], [0.5, 2.0], [-1.5, 1.0]]),
                    np.array([1.0, -1.0, 1.0]), intercept=False)
    return svm.conic1_program(ds, Cardinality(1.0))


def _bigm_n2p1():
    ds = SvmDataset(np.array([[1.5], [-2.0]]), np.array([1.0, -1.0]),
                    intercept=False)
    return build_bigm_model(ds, Penalty(0.5), M=1000.0)


def _random_conic1(seed):
    rng = np.random.default_rng(seed)
    n, p = int(rng.integers(3, 6)), int(rng.integers(1, 4))
    feats = rng.uniform(-2.0, 2.0, size=(n, p))
    labels = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
    ds = SvmDataset(feats, labels, intercept=bool(seed % 2))
    mode = Cardinality(1.0) if seed % 3 else Penalty(0.5)
    return svm.conic1_program(ds, mode)


# ---------------------------------------------------------------------------
# CBF


def test_minimal_lp_round_trips():
    p = _minimal_lp()
    back = import_cbf(export_cbf(p))
    assert structurally_equal(p, back)
    assert back.name == "minimal-lp"
    assert solve.solve(back).objective == pytest.approx(1.0, abs=1e-8)


def test_cbf_export_is_deterministic():
    p = _conic1_n3p2()
    assert export_cbf(p) == export_cbf(p)


def test_cbf_golden_files_are_byte_stable():
    assert export_cbf(_minimal_lp()) == (GOLDEN / "minimal_lp.cbf").read_text()
    assert export_cbf(_conic1_n3p2()) == \
        (GOLDEN / "conic1_n3p2.cbf").read_text()


def test_conic1_round_trip_resolves_to_same_objective():
    p = _conic1_n3p2()
    back = import_cbf(export_cbf(p))
    assert structurally_equal(p, back)
    a = solve.solve(p).objective
    b = solve.solve(back).objective
    assert b == pytest.approx(a, abs=1e-6)


def test_random_conic1_round_trips():
    # desk-scale slice of the twenty-program acceptance sweep
    for seed in range(5):
        p = _random_conic1(seed)
        back = import_cbf(export_cbf(p))
        assert structurally_equal(p, back)
        a, b = solve.solve(p).objective, solve.solve(back).objective
        assert b == pytest.approx(a, abs=1e-6, rel=1e-6)


def test_psd_blocks_survive_the_trip():
    ds = SvmDataset(np.array([[1.0, -0.5], [0.5, 2.0], [-1.5, 1.0]]),
                    np.array([1.0, -1.0, 1.0]), intercept=False)
    p = svm.conic2_program(ds, Cardinality(1.0))
    back = import_cbf(export_cbf(p))
    assert structurally_equal(p, back)
    dims = sorted(b.cone.dim for b in back.blocks
                  if b.cone.kind is ConeKind.PSD)
    assert dims == [3, 3, 3, 3]


def test_cbf_export_rejections():
    b = ProgramBuilder()
    b.new_var("z", lb=0.0, ub=1.0, integer=True)
    with pytest.raises(UnsupportedConeError):
        export_cbf(b.finalize())
    b = ProgramBuilder()
    x = b.new_var("x")
    b.add_quad_objective(x, x, 1.0)
    with pytest.raises(UnsupportedConeError):
        export_cbf(b.finalize())
    b = ProgramBuilder()
    b.new_var("x", lb=0.0)
    with pytest.raises(UnsupportedConeError):
        export_cbf(b.finalize())


def test_cbf_malformed_header_fails_at_line_one():
    with pytest.raises(CbfParseError, match="line 1"):
        import_cbf("BANANAS\n2\n")


def test_cbf_parse_errors_carry_line_numbers():
    good = export_cbf(_minimal_lp())
    lines = good.splitlines()
    broken = "\n".join(
        ln if not ln.startswith("F ") else "X 1" for ln in lines)
    with pytest.raises(CbfParseError, match=r"line \d+"):
        import_cbf(broken)
    with pytest.raises(CbfParseError, match="MIN"):
        import_cbf(good.replace("MIN", "MAX"))
    with pytest.raises(CbfParseError, match="unknown section"):
        import_cbf(good + "\nNONSense\n")
    with pytest.raises(CbfParseError, match="VAR or CON"):
        import_cbf("VER\n2\n")
    with pytest.raises(CbfParseError, match="out of range"):
        import_cbf(good.replace("0 0 1.0", "0 5 1.0"))


def test_structural_equality_semantics():
    p = _minimal_lp()
    assert structurally_equal(p, p)
    b = ProgramBuilder("other-name")
    x = b.new_var("renamed")
    b.add_objective({x: 1.0})
    b.add_nonneg([({x: 1.0}, -1.0)])
    assert structurally_equal(p, b.finalize())
    b = ProgramBuilder()
    x = b.new_var("x")
    b.add_objective({x: 1.0})
    b.add_nonneg([({x: 2.0}, -1.0)])
    assert not structurally_equal(p, b.finalize())


# ---------------------------------------------------------------------------
# MPS


def test_mps_structural_example():
    ds = SvmDataset(np.array([[1.0]]), np.array([1.0]), intercept=False)
    parsed = parse_mps(export_mps(build_bigm_model(ds, Penalty(0.5), M=10.0)))
    constraint_rows = [r for r, s in parsed.row_senses.items() if s != "N"]
    assert len(constraint_rows) == 1
    assert len(parsed.integers) == 1
    assert len(parsed.columns) - len(parsed.integers) == 1
    for z in parsed.integers:
        assert parsed.bounds[z] == (0.0, 1.0)


def test_mps_golden_file_is_byte_stable():
    assert export_mps(_bigm_n2p1()) == (GOLDEN / "bigm_n2p1.mps").read_text()


def test_big_m_value_appears_verbatim():
    text = export_mps(_bigm_n2p1())
    assert "1000.0" in text
    parsed = parse_mps(text)
    assert any(entry.get("R0") == 1000.0 or entry.get("R1") == 1000.0
               for entry in parsed.columns.values())


def test_qmatrix_doubles_the_square_coefficients():
    parsed = parse_mps(export_mps(_bigm_n2p1()))
    assert ("w0", "w0", 2.0) in parsed.qmatrix


def test_mps_objective_self_consistency():
    p = _bigm_n2p1()
    parsed = parse_mps(export_mps(p))
    rng = np.random.default_rng(9)
    for _ in range(10):
        point = rng.uniform(-1.0, 1.0, size=p.num_vars)
        values = {p.var_names[j]: float(point[j]) for j in range(p.num_vars)}
        assert parsed.objective_at(values) == pytest.approx(
            p.objective_value(point), abs=1e-12)


def test_mps_export_is_deterministic():
    p = _bigm_n2p1()
    assert export_mps(p) == export_mps(p)


def test_mps_rejects_conic_programs():
    with pytest.raises(NotMiqpShapedError):
        export_mps(_conic1_n3p2())


def test_mps_parse_errors():
    good = export_mps(_bigm_n2p1())
    with pytest.raises(MpsParseError, match="ENDATA"):
        parse_mps(good.replace("ENDATA", ""))
    with pytest.raises(MpsParseError, match=r"line \d+"):
        parse_mps(good.replace("    w0  R0  1.5", "    w0  R9  1.5"))
    with pytest.raises(MpsParseError, match="outside any section"):
        parse_mps("NAME x\n    w0  OBJ  1.0\nENDATA\n")
    with pytest.raises(MpsParseError, match="unknown section"):
        parse_mps("GARBAGE\nENDATA\n")
