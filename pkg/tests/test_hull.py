"""Closed-form hull math: frozen values, invariants, and agreement
between the cone representation and the enumeration oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from signhull import hull, solve
from signhull.conic import ProgramBuilder
from signhull.errors import TooLargeError, ValidationError
from signhull.hull import (HullPoint, LinearObjective, LossParams, OptStatus,
                           RankOneSet, Sidedness, ZOutOfBoundsError,
                           build_one_sided_socp, build_two_sided_socp,
                           check_membership, eval_hull_rhs,
                           eval_one_sided_rhs, exact_linear_opt, phi_argmin_z,
                           phi_loss)

# ---------------------------------------------------------------------------
# strategies


def _direction(n):
    return st.lists(
        st.floats(-2.0, 2.0).filter(lambda v: abs(v) > 1e-3),
        min_size=n, max_size=n).map(np.array)


def _unit_interval(n):
    return st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n).map(np.array)


def _reals(n, lo=-3.0, hi=3.0):
    return st.lists(st.floats(lo, hi), min_size=n, max_size=n).map(np.array)


# ---------------------------------------------------------------------------
# RankOneSet basics


def test_supports_partition():
    rset = RankOneSet(np.array([1.0, -2.0, 0.0, 0.5]))
    assert rset.n == 4
    assert list(rset.supp_pos) == [0, 3]
    assert list(rset.supp_neg) == [1]
    assert list(rset.supp) == [0, 1, 3]
    assert set(rset.supp) == set(rset.supp_pos) | set(rset.supp_neg)
    assert not set(rset.supp_pos) & set(rset.supp_neg)


def test_rank_one_set_rejects_bad_directions():
    with pytest.raises(ValidationError):
        RankOneSet(np.array([]))
    with pytest.raises(ValidationError):
        RankOneSet(np.array([[1.0, 2.0]]))
    with pytest.raises(ValidationError):
        RankOneSet(np.array([np.nan]))


# ---------------------------------------------------------------------------
# eval_hull_rhs


def test_rhs_single_coordinate():
    rset = RankOneSet(np.array([1.0]))
    assert eval_hull_rhs(rset, np.array([0.5]), np.array([0.5])) \
        == pytest.approx(0.5)


def test_rhs_zero_numerators():
    rset = RankOneSet(np.array([1.0, 1.0]))
    assert eval_hull_rhs(rset, np.zeros(2), np.array([0.3, 0.7])) == 0.0


def test_rhs_mixed_point():
    rset = RankOneSet(np.array([1.0, 1.0]))
    value = eval_hull_rhs(rset, np.array([0.5, -0.2]), np.array([0.3, 0.1]))
    assert value == pytest.approx(0.225)


def test_rhs_positive_over_zero_is_infinite():
    rset = RankOneSet(np.array([1.0]))
    assert eval_hull_rhs(rset, np.array([0.5]), np.array([0.0])) == math.inf


def test_rhs_rejects_bad_queries():
    rset = RankOneSet(np.array([1.0, 1.0]))
    with pytest.raises(ValidationError):
        eval_hull_rhs(rset, np.array([1.0]), np.array([0.5, 0.5]))
    with pytest.raises(ZOutOfBoundsError):
        eval_hull_rhs(rset, np.zeros(2), np.array([0.5, 1.5]))
    with pytest.raises(ZOutOfBoundsError):
        eval_hull_rhs(rset, np.zeros(2), np.array([-0.1, 0.5]))


def test_rhs_ignores_zero_direction_entries():
    # indicators attached to d_i = 0 must not relax the denominators
    narrow = RankOneSet(np.array([1.0]))
    padded = RankOneSet(np.array([1.0, 0.0]))
    lhs = eval_hull_rhs(narrow, np.array([0.7]), np.array([0.4]))
    rhs = eval_hull_rhs(padded, np.array([0.7, 3.0]), np.array([0.4, 1.0]))
    assert lhs == pytest.approx(rhs)


@given(d=_direction(3), x1=_reals(3), z1=_unit_interval(3), x2=_reals(3),
       z2=_unit_interval(3))
def test_rhs_midpoint_convexity(d, x1, z1, x2, z2):
    rset = RankOneSet(d)
    r1 = eval_hull_rhs(rset, x1, z1)
    r2 = eval_hull_rhs(rset, x2, z2)
    if not (math.isfinite(r1) and math.isfinite(r2)):
        return
    mid = eval_hull_rhs(rset, (x1 + x2) / 2, (z1 + z2) / 2)
    assert mid <= (r1 + r2) / 2 + 1e-9


@given(d=_direction(4), x=_reals(4),
       z=st.lists(st.integers(0, 1024).map(lambda k: k / 1024.0),
                  min_size=4, max_size=4).map(np.array))
def test_rhs_sign_flip_equivariance(d, x, z):
    # dyadic z keeps the z -> 1 - z flip exact in floating point
    rset = RankOneSet(d)
    flipped = np.flatnonzero(d < 0)
    d2, x2, z2 = d.copy(), x.copy(), z.copy()
    d2[flipped] *= -1
    x2[flipped] *= -1
    z2[flipped] = 1.0 - z2[flipped]
    want = eval_hull_rhs(rset, x, z)
    got = eval_hull_rhs(RankOneSet(d2), x2, z2)
    if math.isinf(want):
        assert math.isinf(got)
    else:
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_rhs_validity_on_integer_feasible_points():
    # every integer-feasible (x, z) with t = (d'x)^2 is a member
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        n = int(rng.integers(1, 9))
        d = rng.uniform(-2, 2, n)
        rset = RankOneSet(d)
        z = rng.integers(0, 2, n).astype(float)
        x = np.where(z == 1.0, rng.uniform(0, 2, n), -rng.uniform(0, 2, n))
        t = float(d @ x) ** 2
        assert check_membership(rset, HullPoint(x, z, t))


# ---------------------------------------------------------------------------
# check_membership


def test_membership_origin():
    rset = RankOneSet(np.array([2.0, -1.0, 0.3]))
    point = HullPoint(np.zeros(3), np.array([0.2, 0.9, 0.5]), 0.0)
    assert check_membership(rset, point)


def test_membership_below_rhs_fails():
    rset = RankOneSet(np.array([1.0]))
    assert not check_membership(
        rset, HullPoint(np.array([0.5]), np.array([0.5]), 0.4))


def test_membership_integer_point_tight():
    rset = RankOneSet(np.array([1.0, 1.0]))
    x = np.array([1.0, 0.0])
    z = np.array([1.0, 0.0])
    assert eval_hull_rhs(rset, x, z) == pytest.approx(1.0)
    assert check_membership(rset, HullPoint(x, z, 1.0))
    assert not check_membership(rset, HullPoint(x, z, 1.0 - 1e-6))


def test_membership_against_infinite_rhs():
    rset = RankOneSet(np.array([1.0]))
    x, z = np.array([0.5]), np.array([0.0])
    assert not check_membership(rset, HullPoint(x, z, 1e12))
    assert check_membership(rset, HullPoint(x, z, math.inf))


def test_membership_rejects_bad_z():
    rset = RankOneSet(np.array([1.0]))
    with pytest.raises(ZOutOfBoundsError):
        check_membership(rset, HullPoint(np.array([0.0]), np.array([1.2]),
                                         0.0))


# ---------------------------------------------------------------------------
# eval_one_sided_rhs


def test_one_sided_mixed_signs_is_plain_square():
    rset = RankOneSet(np.array([1.0, -1.0]), Sidedness.ONE_SIDED)
    assert eval_one_sided_rhs(rset, np.array([1.0, 0.0]), np.zeros(2)) \
        == pytest.approx(1.0)


def test_one_sided_uniform_positive():
    rset = RankOneSet(np.array([1.0, 1.0]), Sidedness.ONE_SIDED)
    value = eval_one_sided_rhs(rset, np.array([1.0, 0.0]),
                               np.array([0.25, 0.25]))
    assert value == pytest.approx(2.0)


def test_one_sided_negative_part_has_no_perspective():
    rset = RankOneSet(np.array([1.0, 1.0]), Sidedness.ONE_SIDED)
    for z in (np.zeros(2), np.ones(2), np.array([0.3, 0.4])):
        assert eval_one_sided_rhs(rset, np.array([-1.0, 0.0]), z) \
            == pytest.approx(1.0)


@given(d=_direction(3), x=_reals(3), z=_unit_interval(3))
def test_one_sided_mixed_equals_square_everywhere(d, x, z):
    if (d > 0).all() or (d < 0).all():
        return
    rset = RankOneSet(d, Sidedness.ONE_SIDED)
    assert eval_one_sided_rhs(rset, x, z) \
        == pytest.approx(float(d @ x) ** 2, rel=1e-12, abs=1e-12)


def test_one_sided_rhs_is_invariant_under_direction_negation():
    # the defining constraints never involve d and the square is
    # sign-blind, so d and -d describe the same one-sided set
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(1, 5))
        d = rng.uniform(-2, 2, n)
        x = rng.uniform(-2, 2, n)
        z = rng.uniform(0, 1, n)
        lhs = eval_one_sided_rhs(RankOneSet(-d, Sidedness.ONE_SIDED), x, z)
        rhs = eval_one_sided_rhs(RankOneSet(d, Sidedness.ONE_SIDED), x, z)
        if math.isinf(lhs) or math.isinf(rhs):
            assert lhs == rhs
        else:
            assert lhs == pytest.approx(rhs, abs=1e-12)


def test_one_sided_validity_on_integer_feasible_points():
    # one-sided feasibility: z_i = 0 forces x_i <= 0, z_i = 1 frees x_i
    rng = np.random.default_rng(2)
    for _ in range(2_000):
        n = int(rng.integers(1, 7))
        d = rng.uniform(-2, 2, n)
        rset = RankOneSet(d, Sidedness.ONE_SIDED)
        z = rng.integers(0, 2, n).astype(float)
        x = np.where(z == 1.0, rng.uniform(-2, 2, n), -rng.uniform(0, 2, n))
        t = float(d @ x) ** 2
        assert check_membership(rset, HullPoint(x, z, t))


# ---------------------------------------------------------------------------
# the SOCP blocks


def _min_t_over_block(rset, x_fix=None, z_fix=None, extra_rows=()):
    """min t over the cone description with optional coordinate pins."""
    b = ProgramBuilder("hull-probe")
    x_vars = b.new_vars(rset.n, "x")
    z_vars = b.new_vars(rset.n, "z")
    t_var = b.new_var("t")
    box = []
    for zv in z_vars:
        box.append(({zv: 1.0}, 0.0))
        box.append(({zv: -1.0}, 1.0))
    b.add_nonneg(box, name="zbox")
    if x_fix is not None:
        for xv, val in zip(x_vars, x_fix):
            b.add_zero({xv: 1.0}, -float(val), name="xpin")
    if z_fix is not None:
        for zv, val in zip(z_vars, z_fix):
            b.add_zero({zv: 1.0}, -float(val), name="zpin")
    for coeffs_spec, const in extra_rows:
        coeffs = {}
        for kind, idx, coef in coeffs_spec:
            var = {"x": x_vars, "z": z_vars}[kind][idx]
            coeffs[var] = coef
        b.add_zero(coeffs, const, name="pin")
    if rset.sidedness is Sidedness.TWO_SIDED:
        build_two_sided_socp(rset, b, x_vars, z_vars, t_var)
    else:
        build_one_sided_socp(rset, b, x_vars, z_vars, t_var)
    b.add_objective({t_var: 1.0})
    sol = solve.solve(b.finalize())
    assert sol.status is solve.SolveStatus.OPTIMAL, sol.status
    return float(sol.objective)


def test_two_sided_block_structure():
    rset = RankOneSet(np.array([1.0, 2.0]))
    b = ProgramBuilder("shape")
    x_vars = b.new_vars(2, "x")
    z_vars = b.new_vars(2, "z")
    t_var = b.new_var("t")
    before = b.num_vars
    build_two_sided_socp(rset, b, x_vars, z_vars, t_var)
    p = b.finalize()
    assert b.num_vars - before == 4
    rotated = [blk for blk in p.blocks if blk.cone.kind.name == "RSOC"]
    assert len(rotated) == 2
    linear_rows = sum(len(blk.rows) for blk in p.blocks
                      if blk.cone.kind.name in ("ZERO", "NONNEG"))
    assert linear_rows == 7


def test_two_sided_block_spec_point():
    # d'x pinned to 1 and z-sum pinned to 0.5 forces t = 2
    rset = RankOneSet(np.array([1.0, 1.0]))
    rows = [
        ((("x", 0, 1.0), ("x", 1, 1.0)), -1.0),
        ((("z", 0, 1.0), ("z", 1, 1.0)), -0.5),
    ]
    assert _min_t_over_block(rset, extra_rows=rows) == pytest.approx(
        2.0, abs=1e-6)


def test_two_sided_block_zero_projection():
    rset = RankOneSet(np.array([1.0, 1.0]))
    rows = [((("x", 0, 1.0), ("x", 1, 1.0)), 0.0)]
    assert _min_t_over_block(rset, extra_rows=rows) == pytest.approx(
        0.0, abs=1e-7)


def test_two_sided_block_matches_rhs_pointwise():
    rng = np.random.default_rng(3)
    for _ in range(12):
        n = int(rng.integers(1, 5))
        d = rng.uniform(-2, 2, n)
        d[np.abs(d) < 0.05] = 0.5
        rset = RankOneSet(d)
        x = rng.uniform(-1, 1, n)
        z = rng.uniform(0.05, 0.95, n)
        want = eval_hull_rhs(rset, x, z)
        got = _min_t_over_block(rset, x_fix=x, z_fix=z)
        assert got == pytest.approx(want, rel=1e-6, abs=1e-6)


def test_one_sided_block_matches_rhs_pointwise():
    rng = np.random.default_rng(4)
    for signs in ((1, 1), (-1, -1), (1, -1)):
        for _ in range(6):
            d = np.abs(rng.uniform(0.2, 2, 2)) * np.array(signs)
            rset = RankOneSet(d, Sidedness.ONE_SIDED)
            x = rng.uniform(-1, 1, 2)
            z = rng.uniform(0.05, 0.95, 2)
            want = eval_one_sided_rhs(rset, x, z)
            got = _min_t_over_block(rset, x_fix=x, z_fix=z)
            assert got == pytest.approx(want, rel=1e-6, abs=1e-6)


def test_builders_reject_wrong_sidedness():
    b = ProgramBuilder("wrong")
    x_vars = b.new_vars(1, "x")
    z_vars = b.new_vars(1, "z")
    t_var = b.new_var("t")
    with pytest.raises(ValidationError):
        build_two_sided_socp(RankOneSet(np.array([1.0]), Sidedness.ONE_SIDED),
                             b, x_vars, z_vars, t_var)
    with pytest.raises(ValidationError):
        build_one_sided_socp(RankOneSet(np.array([1.0])), b, x_vars, z_vars,
                             t_var)


# ---------------------------------------------------------------------------
# phi loss


def test_phi_frozen_values():
    params = LossParams(1.0, 1.0)
    assert phi_loss(-3.0, params) == 0.0
    assert phi_loss(2.0, params) == 1.0
    assert phi_loss(0.5, params) == pytest.approx(0.75)


def test_phi_boundary_value_is_exact():
    for d, lam in ((1.0, 1.0), (0.3, 2.0), (2.5, 0.7)):
        params = LossParams(d, lam)
        assert phi_loss(params.threshold, params) == lam


def test_phi_argmin_frozen_values():
    params = LossParams(1.0, 1.0)
    assert phi_argmin_z(0.0, params) == 0.0
    assert phi_argmin_z(0.5, params) == pytest.approx(0.5)
    assert phi_argmin_z(5.0, params) == 1.0


def test_phi_rejects_bad_params():
    with pytest.raises(ValidationError):
        LossParams(0.0, 1.0)
    with pytest.raises(ValidationError):
        LossParams(1.0, -2.0)


@given(x=st.floats(-5.0, 5.0), d=st.floats(0.05, 4.0),
       lam=st.floats(0.05, 4.0))
def test_phi_bounds_and_saturation(x, d, lam):
    params = LossParams(d, lam)
    value = phi_loss(x, params)
    assert 0.0 <= value <= lam + 1e-15
    if x >= params.threshold:
        assert value == lam
    slightly_right = phi_loss(x + 1e-3, params)
    assert slightly_right >= value - 1e-12


def test_phi_matches_grid_oracle():
    # grid-minimize lam*z + d*(x)+^2*(1-z)/z over z at step 1e-4
    rng = np.random.default_rng(5)
    zgrid = np.linspace(0.0, 1.0, 10_001)[1:]
    for _ in range(100):
        d = float(rng.uniform(0.05, 4.0))
        lam = float(rng.uniform(0.05, 4.0))
        params = LossParams(d, lam)
        x = float(rng.uniform(-1.0, 2.0 * params.threshold))
        plus_sq = max(x, 0.0) ** 2
        if plus_sq == 0.0:
            grid_min = 0.0
        else:
            grid_min = float(np.min(
                lam * zgrid + d * plus_sq * (1.0 - zgrid) / zgrid))
        assert phi_loss(x, params) == pytest.approx(grid_min, abs=1e-4)


def test_phi_argmin_is_a_minimizer():
    rng = np.random.default_rng(6)
    for _ in range(100):
        params = LossParams(float(rng.uniform(0.1, 3.0)),
                            float(rng.uniform(0.1, 3.0)))
        x = float(rng.uniform(-1.0, 2.0 * params.threshold))
        zstar = phi_argmin_z(x, params)
        assert 0.0 <= zstar <= 1.0
        plus_sq = max(x, 0.0) ** 2
        if zstar > 0.0:
            attained = params.lam * zstar \
                + params.d * plus_sq * (1.0 - zstar) / zstar
        else:
            attained = 0.0 if plus_sq == 0.0 else math.inf
        assert attained == pytest.approx(phi_loss(x, params), abs=1e-9)


# ---------------------------------------------------------------------------
# exact_linear_opt


def test_oracle_negative_gamma_unbounded():
    rset = RankOneSet(np.array([1.0, 1.0]))
    obj = LinearObjective(np.zeros(2), np.zeros(2), -1.0)
    assert exact_linear_opt(rset, obj).status is OptStatus.UNBOUNDED


def test_oracle_nonproportional_alpha_unbounded():
    rset = RankOneSet(np.array([1.0, 1.0]))
    obj = LinearObjective(np.array([1.0, 2.0]), np.zeros(2), 1.0)
    assert exact_linear_opt(rset, obj).status is OptStatus.UNBOUNDED


def test_oracle_frozen_scalar_case():
    rset = RankOneSet(np.array([1.0]))
    obj = LinearObjective(np.array([-1.0]), np.array([0.1]), 1.0)
    res = exact_linear_opt(rset, obj)
    assert res.status is OptStatus.OPTIMAL
    assert res.value == pytest.approx(-0.15)
    assert res.z == pytest.approx([1.0])
    assert res.x == pytest.approx([0.5])
    assert res.t == pytest.approx(0.25)


def test_oracle_caps_enumeration_size():
    n = 21
    rset = RankOneSet(np.ones(n))
    obj = LinearObjective(np.ones(n), np.zeros(n), 1.0)
    with pytest.raises(TooLargeError):
        exact_linear_opt(rset, obj)


def test_oracle_optimum_is_attained_by_reported_point():
    rng = np.random.default_rng(7)
    for _ in range(60):
        n = int(rng.integers(1, 5))
        d = rng.uniform(-2, 2, n)
        d[np.abs(d) < 0.05] = 0.3
        rset = RankOneSet(d)
        eta = float(rng.uniform(-2, 2))
        obj = LinearObjective(eta * d, rng.uniform(-1, 1, n), 1.0)
        res = exact_linear_opt(rset, obj)
        assert res.status is OptStatus.OPTIMAL
        # the reported point must be integer-feasible and reproduce value
        assert set(np.unique(res.z)) <= {0.0, 1.0}
        assert np.all(res.x * res.z >= -1e-12)
        assert np.all(res.x * (1.0 - res.z) <= 1e-12)
        assert res.t == pytest.approx(float(d @ res.x) ** 2, abs=1e-9)
        recomputed = float(obj.alpha @ res.x + obj.beta @ res.z
                           + obj.gamma * res.t)
        assert recomputed == pytest.approx(res.value, rel=1e-12, abs=1e-12)


def _solve_linear_over_hull(rset, obj, config=None):
    """min alpha'x + beta'z + gamma*t over the cone description."""
    b = ProgramBuilder("hull-lin")
    x_vars = b.new_vars(rset.n, "x")
    z_vars = b.new_vars(rset.n, "z")
    t_var = b.new_var("t")
    box = []
    for zv in z_vars:
        box.append(({zv: 1.0}, 0.0))
        box.append(({zv: -1.0}, 1.0))
    b.add_nonneg(box, name="zbox")
    if rset.sidedness is Sidedness.TWO_SIDED:
        build_two_sided_socp(rset, b, x_vars, z_vars, t_var)
    else:
        build_one_sided_socp(rset, b, x_vars, z_vars, t_var)
    coeffs = {t_var: obj.gamma}
    for i in range(rset.n):
        if obj.alpha[i]:
            coeffs[x_vars[i]] = float(obj.alpha[i])
        if obj.beta[i]:
            coeffs[z_vars[i]] = float(obj.beta[i])
    b.add_objective(coeffs)
    return solve.solve(b.finalize(), config)


def test_socp_matches_oracle_on_proportional_objectives():
    rng = np.random.default_rng(8)
    for _ in range(40):
        n = int(rng.integers(2, 7))
        d = rng.uniform(-2, 2, n)
        d[np.abs(d) < 0.05] = -0.4
        rset = RankOneSet(d)
        eta = float(rng.uniform(-2, 2))
        obj = LinearObjective(eta * d, rng.uniform(-1, 1, n), 1.0)
        want = exact_linear_opt(rset, obj)
        assert want.status is OptStatus.OPTIMAL
        got = _solve_linear_over_hull(rset, obj)
        assert got.status is solve.SolveStatus.OPTIMAL
        assert float(got.objective) == pytest.approx(
            want.value, rel=1e-6, abs=1e-6)


def test_socp_agrees_on_unbounded_cases():
    rset = RankOneSet(np.array([1.0, -0.5]))
    negative_gamma = LinearObjective(np.zeros(2), np.zeros(2), -1.0)
    off_axis = LinearObjective(np.array([1.0, 2.0]), np.zeros(2), 1.0)
    for obj in (negative_gamma, off_axis):
        assert exact_linear_opt(rset, obj).status is OptStatus.UNBOUNDED
        sol = _solve_linear_over_hull(rset, obj)
        assert sol.status is solve.SolveStatus.UNBOUNDED


def test_one_sided_oracle_socp_agreement():
    rng = np.random.default_rng(9)
    for signs in ((1, 1, 1), (-1, -1, -1), (1, -1, 1)):
        for _ in range(10):
            d = rng.uniform(0.2, 2, 3) * np.array(signs)
            rset = RankOneSet(d, Sidedness.ONE_SIDED)
            eta = float(rng.uniform(-2, 2))
            obj = LinearObjective(eta * d, rng.uniform(-1, 1, 3), 1.0)
            want = exact_linear_opt(rset, obj)
            assert want.status is OptStatus.OPTIMAL
            got = _solve_linear_over_hull(rset, obj)
            assert got.status is solve.SolveStatus.OPTIMAL
            assert float(got.objective) == pytest.approx(
                want.value, rel=1e-6, abs=1e-6)
