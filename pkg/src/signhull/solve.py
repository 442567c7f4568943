"""Conic solve contract and the exact subset-enumeration oracles.

The backend is an adapter around an off-the-shelf primal-dual
interior-point conic solver (clarabel).  Everything upstream talks only
to :func:`solve`; swapping the engine means reimplementing the assembly
in this module (see docs/backend.md for the contract).
"""

from __future__ import annotations

import enum
import itertools
import math
import time
from dataclasses import dataclass, field, replace
from math import comb

import numpy as np
import scipy.sparse as sp

from . import conic
from .conic import ConeKind, ConicProgram, InvalidProgramError
from .errors import SolveFailedError, TooLargeError, ValidationError
from .svm import Cardinality, Penalty, SvmDataset

_SQRT2 = math.sqrt(2.0)

MAX_PENALTY_POINTS = 22
MAX_CARDINALITY_SUBSETS = 10 ** 6


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-8
    max_iterations: int = 200
    time_limit: float = 60.0
    verbose: bool = False


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolverStats:
    iterations: int = 0
    solve_time: float = 0.0
    duality_gap: float = 0.0
    max_residual: float = 0.0
    engine_status: str = ""


@dataclass(frozen=True)
class Solution:
    status: SolveStatus
    x: np.ndarray
    duals: tuple[np.ndarray, ...]
    objective: float
    stats: SolverStats = field(default_factory=SolverStats)
    certificate: np.ndarray | None = None


def _assemble(p: ConicProgram):
    """Maps the IR onto the engine's form: min q'x, A x + s = b, s in K.

    Rotated cones are rewritten through the isometry
    (u, v, w) -> ((u+v)/sqrt2, (u-v)/sqrt2, w) onto plain second-order
    cones; PSD blocks pass through unchanged because the engine shares
    the scaled-triangle vectorization.  Returns the sparse data plus a
    per-block (offset, size, rotated) map for splitting duals.
    """
    import clarabel

    rows_i: list[int] = []
    cols_j: list[int] = []
    vals: list[float] = []
    consts: list[float] = []
    cones = []
    layout = []
    offset = 0

    def put_row(global_row: int, row: conic.Row, scale: float = 1.0):
        coeffs, const = row
        for col, coef in coeffs:
            rows_i.append(global_row)
            cols_j.append(col)
            vals.append(-coef * scale)
        consts[global_row] += const * scale

    for blk in p.blocks:
        size = blk.cone.num_rows
        consts.extend([0.0] * size)
        rotated = blk.cone.kind is ConeKind.RSOC
        if rotated:
            put_row(offset, blk.rows[0], 1.0 / _SQRT2)
            put_row(offset, blk.rows[1], 1.0 / _SQRT2)
            put_row(offset + 1, blk.rows[0], 1.0 / _SQRT2)
            put_row(offset + 1, blk.rows[1], -1.0 / _SQRT2)
            for k, row in enumerate(blk.rows[2:]):
                put_row(offset + 2 + k, row)
            cones.append(clarabel.SecondOrderConeT(size))
        else:
            for k, row in enumerate(blk.rows):
                put_row(offset + k, row)
            if blk.cone.kind is ConeKind.ZERO:
                cones.append(clarabel.ZeroConeT(size))
            elif blk.cone.kind is ConeKind.NONNEG:
                cones.append(clarabel.NonnegativeConeT(size))
            elif blk.cone.kind is ConeKind.SOC:
                cones.append(clarabel.SecondOrderConeT(size))
            elif blk.cone.kind is ConeKind.PSD:
                cones.append(clarabel.PSDTriangleConeT(blk.cone.dim))
            else:
                raise InvalidProgramError(f"cone {blk.cone.kind} not solvable")
        layout.append((offset, size, rotated))
        offset += size

    a = sp.csc_matrix((vals, (rows_i, cols_j)), shape=(offset, p.num_vars))
    b = np.asarray(consts)
    q = np.zeros(p.num_vars)
    for col, coef in p.obj_coeffs:
        q[col] = coef
    return a, b, q, cones, layout


def _split_duals(z: np.ndarray, layout) -> tuple[np.ndarray, ...]:
    duals = []
    for offset, size, rotated in layout:
        piece = np.array(z[offset:offset + size])
        if rotated:
            u, v = piece[0], piece[1]
            piece[0] = (u + v) / _SQRT2
            piece[1] = (u - v) / _SQRT2
        duals.append(piece)
    return tuple(duals)


# Engine exits that prove nothing; a stall on an unbounded program is
# common because no dual-infeasibility certificate exists numerically.
_STALL_STATUSES = frozenset({"InsufficientProgress", "MaxIterations",
                             "AlmostDualInfeasible", "NumericalError"})


def _strip_to_recession(p: ConicProgram) -> tuple[ConicProgram, ConicProgram]:
    """(feasibility program, ray program) for certifying unboundedness.

    Every cone used here equals its own recession cone, so dropping the
    constant terms turns the constraint system into its recession
    system.  A point v with A_k v in K_k for all blocks and c'v = -1,
    together with any feasible point of the original program, is an
    exact unboundedness certificate.
    """
    feasibility = replace(p, obj_coeffs=(), obj_offset=0.0, info={})
    stripped = tuple(
        replace(blk, rows=tuple((coeffs, 0.0) for coeffs, _ in blk.rows))
        for blk in p.blocks)
    norm = conic.Block(conic.zero_cone(1), ((p.obj_coeffs, 1.0),),
                       "ray-normalization")
    ray = replace(p, obj_coeffs=(), obj_offset=0.0,
                  blocks=stripped + (norm,), info={})
    return feasibility, ray


def _certify_unbounded(p: ConicProgram, cfg: SolverConfig) -> np.ndarray | None:
    """Returns an improving recession ray when one provably exists."""
    if not p.obj_coeffs:
        return None
    feasibility, ray_prog = _strip_to_recession(p)
    ray = solve(ray_prog, cfg, _certify_rays=False)
    if ray.status is not SolveStatus.OPTIMAL:
        return None
    feas = solve(feasibility, cfg, _certify_rays=False)
    if feas.status is not SolveStatus.OPTIMAL:
        return None
    return ray.x


def solve(p: ConicProgram, config: SolverConfig | None = None, *,
          _certify_rays: bool = True) -> Solution:
    """Solves a continuous conic program.

    Requires a validated program with free variables and a linear
    objective; integrality or quadratic payloads must go through
    :func:`signhull.conic.relax_integrality` first.  An ``OPTIMAL``
    solution carries per-block duals and satisfies the residual and
    duality-gap guarantees documented in docs/backend.md; infeasible and
    unbounded outcomes carry the engine's certificate ray.
    """
    import clarabel

    cfg = config or SolverConfig()
    defects = conic.validate(p)
    if defects:
        raise InvalidProgramError("; ".join(defects))
    if p.integers:
        raise InvalidProgramError(
            "integer variables cannot be solved directly; relax first")
    if p.obj_quad:
        raise InvalidProgramError(
            "quadratic objectives cannot be solved directly; relax first")
    if any(math.isfinite(v) for v in p.lb) or \
            any(math.isfinite(v) for v in p.ub):
        raise InvalidProgramError(
            "finite variable bounds are reserved for the file-export path;"
            " emit explicit constraint rows instead")

    if p.num_rows == 0:
        # No constraints: the minimum is the offset when the objective
        # has no linear part, and unbounded otherwise.
        if p.obj_coeffs:
            return Solution(SolveStatus.UNBOUNDED, np.zeros(p.num_vars), (),
                            -math.inf)
        return Solution(SolveStatus.OPTIMAL, np.zeros(p.num_vars), (),
                        p.obj_offset)

    a, b, q, cones, layout = _assemble(p)
    settings = clarabel.DefaultSettings()
    settings.verbose = cfg.verbose
    settings.max_iter = cfg.max_iterations
    settings.time_limit = cfg.time_limit
    settings.max_threads = 1
    settings.tol_gap_abs = cfg.tolerance
    settings.tol_gap_rel = cfg.tolerance
    settings.tol_feas = cfg.tolerance

    pmat = sp.csc_matrix((p.num_vars, p.num_vars))
    t0 = time.perf_counter()
    result = clarabel.DefaultSolver(pmat, q, a, b, cones, settings).solve()
    wall = time.perf_counter() - t0

    x = np.asarray(result.x, dtype=float)
    z = np.asarray(result.z, dtype=float)
    engine = str(result.status)
    stats = SolverStats(
        iterations=int(result.iterations),
        solve_time=wall,
        duality_gap=abs(float(result.obj_val) - float(result.obj_val_dual)),
        engine_status=engine,
    )

    status_map = {
        "Solved": SolveStatus.OPTIMAL,
        "PrimalInfeasible": SolveStatus.INFEASIBLE,
        "DualInfeasible": SolveStatus.UNBOUNDED,
        # Reduced-accuracy exit; accepted below only if our own residual
        # and duality-gap checks pass at the configured tolerance.
        "AlmostSolved": SolveStatus.OPTIMAL,
    }
    engine_name = engine.rsplit(".", 1)[-1]
    status = status_map.get(engine_name, SolveStatus.NUMERICAL_FAILURE)
    if engine_name == "AlmostSolved" and \
            stats.duality_gap > 10.0 * cfg.tolerance * (1.0 + abs(float(result.obj_val))):
        status = SolveStatus.NUMERICAL_FAILURE

    if status is SolveStatus.NUMERICAL_FAILURE and _certify_rays \
            and engine_name in _STALL_STATUSES:
        ray = _certify_unbounded(p, cfg)
        if ray is not None:
            return Solution(SolveStatus.UNBOUNDED, x,
                            _split_duals(z, layout), -math.inf, stats,
                            certificate=ray)

    if status is SolveStatus.INFEASIBLE:
        return Solution(SolveStatus.INFEASIBLE, x, _split_duals(z, layout),
                        math.inf, stats, certificate=z)
    if status is SolveStatus.UNBOUNDED:
        return Solution(SolveStatus.UNBOUNDED, x, _split_duals(z, layout),
                        -math.inf, stats, certificate=x)

    objective = p.objective_value(x)
    duals = _split_duals(z, layout)
    if status is SolveStatus.OPTIMAL:
        res = conic.residuals(p, x)
        stats = SolverStats(stats.iterations, stats.solve_time,
                            stats.duality_gap, res.max_violation, engine)
        if res.max_violation > 10.0 * cfg.tolerance:
            status = SolveStatus.NUMERICAL_FAILURE
    return Solution(status, x, duals, objective, stats)


def solve_hard_margin(signed_rows: np.ndarray,
                      config: SolverConfig | None = None
                      ) -> tuple[np.ndarray, float] | None:
    """Minimum-norm separation: min ||w||^2 subject to r'w >= 1 for every
    row r (rows already folded with their labels).

    Returns (w, ||w||^2), or None when the rows cannot be separated.
    With no rows the answer is exactly (0, 0).
    """
    rows = np.atleast_2d(np.asarray(signed_rows, dtype=float))
    if rows.size == 0:
        dim = rows.shape[1] if rows.ndim == 2 else 0
        return np.zeros(dim), 0.0
    m, dim = rows.shape

    b = conic.ProgramBuilder("hard-margin")
    w = b.new_vars(dim, "w")
    t = b.new_var("t")
    b.add_objective({t: 1.0})
    b.add_rsoc_sq({t: 1.0}, ({}, 1.0), [{w[j]: 1.0} for j in range(dim)],
                  name="normsq")
    b.add_nonneg([({w[j]: rows[i, j] for j in range(dim)}, -1.0)
                  for i in range(m)], name="margins")
    sol = solve(b.finalize(), config)
    if sol.status is SolveStatus.INFEASIBLE:
        return None
    wvec = sol.x[:dim]
    obj = float(wvec @ wvec)
    if sol.status is not SolveStatus.OPTIMAL:
        # Barely separable row sets push ||w|| toward 1/margin, where
        # the adapter's absolute residual bar is unreachable in doubles.
        # The iterate is still usable when it meets this oracle's own
        # grade: pushing w onto the margin boundary makes feasibility
        # self-certifying, and the engine's duality gap must be small
        # relative to the (slightly inflated) objective.
        min_margin = float(np.min(rows @ wvec))
        if 0.0 < min_margin < 1.0:
            wvec = wvec / min_margin
            obj = float(wvec @ wvec)
        gap_ok = sol.stats.duality_gap <= 1e-6 * (1.0 + abs(obj))
        if min_margin <= 0.0 or not gap_ok \
                or not np.all(rows @ wvec >= 1.0 - 1e-6):
            raise SolveFailedError(
                f"hard-margin subproblem ended with {sol.status.value}"
                f" (engine: {sol.stats.engine_status})")
    return wvec, obj


@dataclass(frozen=True)
class ExactSvmResult:
    objective: float
    w: np.ndarray
    removed: tuple[int, ...]
    mode: Cardinality | Penalty


def exact_01_svm(ds: SvmDataset, mode: Cardinality | Penalty,
                 config: SolverConfig | None = None) -> ExactSvmResult:
    """Globally optimal SVM with a hard count on margin violations.

    Cardinality mode minimizes ||w||^2 allowing at most k dropped points;
    since dropping extra points only relaxes the margin system, it
    suffices to enumerate subsets of size exactly k.  Penalty mode
    minimizes ||w||^2 + lam * |S| over all removal sets S, walking sizes
    in increasing order and pruning once lam * |S| cannot beat the
    incumbent.  Ties prefer the lexicographically smallest subset.
    """
    a = ds.signed_rows
    n = ds.n

    if isinstance(mode, Cardinality):
        if not 0 <= mode.k <= n:
            raise ValidationError(
                f"cardinality budget {mode.k} outside [0, {n}]")
        # z is binary here, so a fractional budget binds at its floor
        k = int(mode.k)
        if comb(n, k) > MAX_CARDINALITY_SUBSETS:
            raise TooLargeError(
                f"C({n}, {k}) subsets exceed the enumeration cap")
        best = None
        for subset in itertools.combinations(range(n), k):
            keep = np.ones(n, dtype=bool)
            keep[list(subset)] = False
            res = solve_hard_margin(a[keep], config)
            if res is None:
                continue
            w, obj = res
            if best is None or obj < best[0]:
                best = (obj, w, subset)
        if best is None:
            raise ValidationError(
                "no size-k removal leaves a separable margin system")
        return ExactSvmResult(best[0], best[1], best[2], mode)

    if isinstance(mode, Penalty):
        lam = mode.lam
        if not lam > 0:
            raise ValidationError("penalty weight must be positive")
        if n > MAX_PENALTY_POINTS:
            raise TooLargeError(
                f"penalty enumeration capped at {MAX_PENALTY_POINTS} points")
        best = None
        for size in range(n + 1):
            if best is not None and lam * size >= best[0]:
                break
            for subset in itertools.combinations(range(n), size):
                keep = np.ones(n, dtype=bool)
                keep[list(subset)] = False
                res = solve_hard_margin(a[keep], config)
                if res is None:
                    continue
                w, obj = res
                total = obj + lam * size
                if best is None or total < best[0]:
                    best = (total, w, subset)
        if best is None:
            raise SolveFailedError("penalty enumeration found no solution")
        return ExactSvmResult(best[0], best[1], best[2], mode)

    raise ValidationError(f"unknown mode {mode!r}")
