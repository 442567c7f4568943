"""Valid inequalities for the matrix-lifted sign-coupled set.

The lifted set couples a vector x, its Gram surrogate X >= x x', and
binary indicators z through the sign constraints x_i z_i >= 0 and
x_i (1 - z_i) <= 0.  Every coordinate subset S yields a pair of
copositive inequalities on the bordered matrices

    [[sum_S z_i, -x_S'], [-x_S, X_S]],   [[sum_S (1 - z_i), x_S'], [x_S, X_S]]

(the one-sided variant, which drops x_i z_i >= 0, keeps only the first).
This module provides the bordered matrices, a simplex-grid copositivity
oracle, the semidefinite extended reformulation that replaces each
copositive constraint with a shifted PSD block plus elementwise bounds,
a checker for the copositivity/PSD-feasibility equivalence that the
reformulation rests on, and the big-M mixed-integer baseline model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import conic
from .conic import ProgramBuilder
from .errors import (SignhullError, SolveFailedError, TooLargeError,
                     ValidationError)
from .hull import Sidedness
from .svm import Cardinality, Penalty, SvmDataset, _check_mode

MAX_GRID_ORDER = 6
MAX_GRID_POINTS = 2_000_000
MAX_EQUIVALENCE_ORDER = 4
DEFAULT_BIG_M = 1000.0


class DimensionMismatchError(ValidationError):
    """A subset or matrix does not fit the ambient dimension."""


class UnregisteredVariableError(ValidationError):
    """A variable handle does not belong to the target builder."""


class XNotPsdError(ValidationError):
    """The Gram block fails the standing positive-semidefiniteness
    assumption of the equivalence check."""


class EquivalenceMismatchError(SignhullError):
    """Grid copositivity and shifted PSD feasibility disagree by more
    than the grid resolution can explain."""


@dataclass(frozen=True, eq=False)
class ExtendedPoint:
    """A point (x, X, z) of the matrix-lifted space."""

    x: np.ndarray
    X: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        big = np.asarray(self.X, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if x.ndim != 1:
            raise ValidationError("x must be a vector")
        n = x.size
        if big.shape != (n, n):
            raise DimensionMismatchError("X must be n x n with n = len(x)")
        if z.shape != (n,):
            raise DimensionMismatchError("z must have the same length as x")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(big))
                and np.all(np.isfinite(z))):
            raise ValidationError("extended point must be finite")
        scale = max(1.0, float(np.abs(big).max(initial=0.0)))
        if np.abs(big - big.T).max(initial=0.0) > 1e-9 * scale:
            raise ValidationError("X must be symmetric")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "X", (big + big.T) / 2.0)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.x.size

    def gram_defect(self) -> float:
        """max(0, -lambda_min(X - x x')); zero means X >= x x' holds."""
        eigs = np.linalg.eigvalsh(self.X - np.outer(self.x, self.x))
        return max(0.0, -float(eigs[0]))

    def is_integer_feasible(self, tol: float = 1e-9) -> bool:
        """Membership in the lifted set itself: binary z, matching signs
        of x, and X - x x' >= -tol * I."""
        if self.gram_defect() > tol:
            return False
        if np.any(np.minimum(np.abs(self.z), np.abs(self.z - 1.0)) > tol):
            return False
        on = self.z > 0.5
        if np.any(self.x[on] < -tol) or np.any(self.x[~on] > tol):
            return False
        return True


@dataclass(frozen=True)
class SubsetConstraintSpec:
    """A coordinate subset plus the sign-coupling convention it uses."""

    subset: tuple[int, ...]
    side: Sidedness = Sidedness.TWO_SIDED

    def __post_init__(self):
        cleaned = tuple(sorted({int(i) for i in self.subset}))
        if not cleaned:
            raise ValidationError("subset must be nonempty")
        if cleaned[0] < 0:
            raise ValidationError("subset indices must be nonnegative")
        object.__setattr__(self, "subset", cleaned)

    @property
    def size(self) -> int:
        return len(self.subset)

    def check_range(self, n: int) -> None:
        if self.subset[-1] >= n:
            raise DimensionMismatchError(
                f"subset index {self.subset[-1]} out of range for n={n}")


def _bordered(corner: float, border: np.ndarray, body: np.ndarray) -> np.ndarray:
    k = border.size
    out = np.empty((k + 1, k + 1))
    out[0, 0] = corner
    out[0, 1:] = border
    out[1:, 0] = border
    out[1:, 1:] = body
    return out


def copositive_matrices_for_subset(pt: ExtendedPoint,
                                   spec: SubsetConstraintSpec
                                   ) -> tuple[np.ndarray, ...]:
    """The bordered matrices whose copositivity is valid for the lifted
    set: the z-weighted one, and (two-sided only) its mirror with
    1 - z weights and flipped border sign."""
    spec.check_range(pt.n)
    idx = list(spec.subset)
    xs = pt.x[idx]
    body = pt.X[np.ix_(idx, idx)]
    zsum = float(pt.z[idx].sum())
    first = _bordered(zsum, -xs, body)
    if spec.side is Sidedness.ONE_SIDED:
        return (first,)
    second = _bordered(len(idx) - zsum, xs, body)
    return (first, second)


@dataclass(frozen=True, eq=False)
class CopositivityVerdict:
    """Outcome of a copositivity check.  ``witness`` is the simplex point
    achieving ``min_value``; ``exact`` marks the closed-form small-order
    branches, otherwise the verdict is only grid-certain."""

    copositive: bool
    min_value: float
    witness: np.ndarray
    resolution: int
    exact: bool


@lru_cache(maxsize=64)
def _compositions(parts: int, total: int) -> np.ndarray:
    if parts == 1:
        out = np.array([[float(total)]])
    else:
        chunks = []
        for first in range(total + 1):
            rest = _compositions(parts - 1, total - first)
            head = np.full((rest.shape[0], 1), float(first))
            chunks.append(np.hstack([head, rest]))
        out = np.vstack(chunks)
    out.flags.writeable = False
    return out


def _simplex_grid(m: int, resolution: int) -> np.ndarray:
    """All points of the unit simplex with coordinates in multiples of
    1/resolution, plus every pairwise midpoint (e_i + e_j) / 2."""
    count = math.comb(resolution + m - 1, m - 1)
    if count > MAX_GRID_POINTS:
        raise TooLargeError(
            f"simplex grid would hold {count} points (cap {MAX_GRID_POINTS})")
    grid = _compositions(m, resolution) / float(resolution)
    mids = []
    for i in range(m):
        for j in range(i + 1, m):
            v = np.zeros(m)
            v[i] = v[j] = 0.5
            mids.append(v)
    if mids:
        grid = np.vstack([grid, mids])
    return grid


def _check_order2(m: np.ndarray, resolution: int) -> CopositivityVerdict:
    # Exact criterion for order 2: copositive iff a >= 0, c >= 0 and
    # b + sqrt(ac) >= 0.  The simplex minimum is attained at a vertex or
    # at the interior critical point of the restricted quadratic.
    a, b, c = m[0, 0], m[0, 1], m[1, 1]
    candidates = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    denom = a - 2.0 * b + c
    if denom > 0.0:
        s = (c - b) / denom
        if 0.0 < s < 1.0:
            candidates.append(np.array([s, 1.0 - s]))
    values = [float(v @ m @ v) for v in candidates]
    pos = int(np.argmin(values))
    return CopositivityVerdict(
        copositive=values[pos] >= 0.0, min_value=values[pos],
        witness=candidates[pos], resolution=resolution, exact=True)


def grid_copositivity_check(m: np.ndarray,
                            resolution: int = 50) -> CopositivityVerdict:
    """Checks v' M v >= 0 over the nonnegative orthant by sampling the
    unit simplex.  Orders 1 and 2 are decided exactly in closed form;
    larger orders are grid-certain only, at the given resolution."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError("matrix must be square")
    if not np.all(np.isfinite(m)):
        raise ValidationError("matrix must be finite")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if np.abs(m - m.T).max(initial=0.0) > 1e-9 * scale:
        raise ValidationError("matrix must be symmetric")
    order = m.shape[0]
    if order > MAX_GRID_ORDER:
        raise TooLargeError(
            f"order {order} exceeds the grid cap of {MAX_GRID_ORDER}")
    if resolution < 1:
        raise ValidationError("resolution must be positive")
    m = (m + m.T) / 2.0
    if order == 1:
        a = float(m[0, 0])
        return CopositivityVerdict(a >= 0.0, a, np.array([1.0]),
                                   resolution, exact=True)
    if order == 2:
        return _check_order2(m, resolution)
    grid = _simplex_grid(order, resolution)
    values = np.einsum("ij,jk,ik->i", grid, m, grid)
    pos = int(np.argmin(values))
    return CopositivityVerdict(
        copositive=bool(values[pos] >= 0.0), min_value=float(values[pos]),
        witness=grid[pos].copy(), resolution=resolution, exact=False)


@dataclass(frozen=True)
class SdpExtensionHandles:
    """Variable and block indices emitted by the extended reformulation."""

    g_vars: tuple[int, ...]
    h_vars: tuple[int, ...] | None
    bound_blocks: tuple[int, ...]
    psd_blocks: tuple[int, ...]


def _check_registered(b: ProgramBuilder, handles) -> None:
    for v in handles:
        if not 0 <= int(v) < b.num_vars:
            raise UnregisteredVariableError(
                f"variable {v} is not registered with this builder")


def sdp_extension_for_subset(b: ProgramBuilder, spec: SubsetConstraintSpec,
                             x_vars, gram_vars, z_vars,
                             name: str = "") -> SdpExtensionHandles:
    """Emits the semidefinite extended form of the subset's copositive
    constraint(s): fresh bound variables g (and h when two-sided) with
    x_S <= g (h <= x_S) and the shifted bordered PSD block(s).

    ``gram_vars`` is a square array-like of variable handles for X over
    the subset's local coordinates; it must be symmetric.
    """
    k = spec.size
    x_vars = [int(v) for v in x_vars]
    z_vars = [int(v) for v in z_vars]
    gram = np.asarray(gram_vars, dtype=int)
    if len(x_vars) != k or len(z_vars) != k:
        raise DimensionMismatchError(
            "x and z handle lists must match the subset size")
    if gram.shape != (k, k):
        raise DimensionMismatchError("gram handle array must be k x k")
    if np.any(gram != gram.T):
        raise ValidationError("gram handle array must be symmetric")
    _check_registered(b, x_vars)
    _check_registered(b, z_vars)
    _check_registered(b, gram.ravel().tolist())

    label = name or f"S{list(spec.subset)}"
    sqrt2 = math.sqrt(2.0)
    two_sided = spec.side is Sidedness.TWO_SIDED

    g = b.new_vars(k, f"g[{label}]")
    h = b.new_vars(k, f"h[{label}]") if two_sided else None
    bound_rows = [({g[i]: 1.0, x_vars[i]: -1.0}, 0.0) for i in range(k)]
    if two_sided:
        bound_rows += [({x_vars[i]: 1.0, h[i]: -1.0}, 0.0) for i in range(k)]
    bounds = b.add_nonneg(bound_rows, name=f"bounds[{label}]")

    def block(corner_coeffs, corner_const, border, border_sign):
        rows = [conic.make_row(corner_coeffs, corner_const)]
        for i in range(k):
            rows.append(conic.make_row({border[i]: border_sign * sqrt2}))
            for j in range(i + 1):
                scale = 1.0 if i == j else sqrt2
                rows.append(conic.make_row({int(gram[i, j]): scale}))
        return b.add_block(conic.psd_cone(k + 1), rows,
                           name=f"cop[{label}]")

    psd = [block({v: 1.0 for v in z_vars}, 0.0, g, -1.0)]
    if two_sided:
        psd.append(block({v: -1.0 for v in z_vars}, float(k), h, 1.0))
    return SdpExtensionHandles(tuple(g), tuple(h) if h else None,
                               (bounds,), tuple(psd))


def extension_witness(pt: ExtendedPoint, spec: SubsetConstraintSpec
                      ) -> tuple[np.ndarray, np.ndarray | None]:
    """Closed-form bound vectors certifying the extended form at a point
    of the lifted set with binary z: g = x_S once some indicator in S is
    on (the corner then dominates 1) and g = 0 otherwise, h mirrored."""
    spec.check_range(pt.n)
    idx = list(spec.subset)
    xs = pt.x[idx]
    zs = pt.z[idx]
    if np.any(np.minimum(np.abs(zs), np.abs(zs - 1.0)) > 1e-9):
        raise ValidationError("witness construction needs binary indicators")
    g = xs.copy() if zs.sum() >= 1.0 else np.zeros(len(idx))
    if spec.side is Sidedness.ONE_SIDED:
        return g, None
    h = xs.copy() if (len(idx) - zs.sum()) >= 1.0 else np.zeros(len(idx))
    return g, h


@dataclass(frozen=True, eq=False)
class CpSdpReport:
    """Both sides of the copositivity/PSD-feasibility equivalence for a
    bordered matrix [[t, x'], [x, X]] with X >= 0: the grid verdict, and
    the largest eta with [[t, y'], [y, X]] >= eta I for some y <= x."""

    grid: CopositivityVerdict
    sdp_feasible: bool
    sdp_margin: float
    agree: bool
    near_boundary: bool
    boundary_scale: float


def _sdp_side_margin(t: float, x: np.ndarray, big: np.ndarray,
                     config) -> float:
    from . import solve as solve_mod

    n = x.size
    b = ProgramBuilder("cp-sdp-side")
    y = b.new_vars(n, "y")
    eta = b.new_var("eta")
    b.add_objective({eta: -1.0})
    b.add_nonneg([({y[i]: -1.0}, float(x[i])) for i in range(n)],
                 name="ybound")
    sqrt2 = math.sqrt(2.0)
    rows = [conic.make_row({eta: -1.0}, float(t))]
    for i in range(n):
        rows.append(conic.make_row({y[i]: sqrt2}))
        for j in range(i):
            rows.append(conic.make_row({}, sqrt2 * float(big[i, j])))
        rows.append(conic.make_row({eta: -1.0}, float(big[i, i])))
    b.add_block(conic.psd_cone(n + 1), rows, name="shifted")
    sol = solve_mod.solve(b.finalize(), config)
    if sol.status is not solve_mod.SolveStatus.OPTIMAL:
        raise SolveFailedError(
            f"shifted PSD subproblem ended with {sol.status.name}")
    return -sol.objective


def cp_sdp_equivalence_check(t: float, x: np.ndarray, big: np.ndarray,
                             resolution: int = 100,
                             config=None) -> CpSdpReport:
    """Cross-checks grid copositivity of [[t, x'], [x, X]] against the
    shifted PSD feasibility problem max eta s.t. [[t, y'], [y, X]] >= eta I,
    y <= x.  The two agree exactly in theory; a sampled grid can misjudge
    points within one cell of the boundary, so near-boundary disagreement
    is tolerated and anything beyond it raises."""
    x = np.asarray(x, dtype=float)
    big = np.asarray(big, dtype=float)
    if x.ndim != 1 or big.shape != (x.size, x.size):
        raise DimensionMismatchError("x must be a vector and X match it")
    order = x.size + 1
    if order > MAX_EQUIVALENCE_ORDER:
        raise TooLargeError(
            f"order {order} exceeds the cap of {MAX_EQUIVALENCE_ORDER}")
    scale = max(1.0, float(np.abs(big).max(initial=0.0)))
    if np.abs(big - big.T).max(initial=0.0) > 1e-9 * scale:
        raise ValidationError("X must be symmetric")
    big = (big + big.T) / 2.0
    if float(np.linalg.eigvalsh(big)[0]) < -1e-8 * scale:
        raise XNotPsdError("X must be positive semidefinite")

    m = _bordered(float(t), x, big)
    grid = grid_copositivity_check(m, resolution)
    margin = _sdp_side_margin(float(t), x, big, config)
    feas_tol = 1e-7
    sdp_feasible = margin >= -feas_tol
    norm = float(np.linalg.norm(m, 2))
    if grid.exact:
        boundary_scale = 1e-9 * (1.0 + norm)
    else:
        boundary_scale = 4.0 * norm / resolution
    near = (abs(grid.min_value) <= boundary_scale
            or abs(margin) <= boundary_scale)
    agree = grid.copositive == sdp_feasible
    if not agree and not near:
        raise EquivalenceMismatchError(
            f"grid min {grid.min_value:.3e} vs shifted margin {margin:.3e}"
            f" disagree beyond the boundary scale {boundary_scale:.3e}")
    return CpSdpReport(grid, sdp_feasible, margin, agree, near,
                       boundary_scale)


def build_bigm_model(ds: SvmDataset, mode: Cardinality | Penalty,
                     M: float = DEFAULT_BIG_M) -> conic.ConicProgram:
    """Mixed-integer quadratic baseline: minimize ||w||^2 plus the chosen
    misclassification budget, with margins relaxed by M z_i for binary z."""
    _check_mode(mode)
    if not M > 0:
        raise ValidationError("big-M constant must be positive")
    n, p = ds.n, ds.p_tilde
    a = ds.signed_rows
    b = ProgramBuilder("svm-bigm")
    w = b.new_vars(p, "w")
    z = b.new_vars(n, "z", lb=0.0, ub=1.0, integer=True)
    for wj in w:
        b.add_quad_objective(wj, wj, 1.0)
    b.add_nonneg(
        [({z[i]: float(M), **{w[j]: a[i, j] for j in range(p)}}, -1.0)
         for i in range(n)],
        name="bigm-margins")
    if isinstance(mode, Penalty):
        b.add_objective({zi: mode.lam for zi in z})
        hyper = {"lam": float(mode.lam)}
    else:
        if mode.k > n:
            raise ValidationError("cardinality budget exceeds the sample size")
        b.add_nonneg([({zi: -1.0 for zi in z}, float(mode.k))],
                     name="cardinality")
        hyper = {"k": float(mode.k)}
    return b.finalize(method="bigm", big_m=float(M), w_vars=w, z_vars=z,
                      mode=type(mode).__name__.lower(), **hyper)
