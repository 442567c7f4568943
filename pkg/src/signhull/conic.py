"""Solver-agnostic intermediate representation for conic programs.

A program is

    minimize    c'v + offset            (+ v'Qv on the mixed-integer path)
    subject to  A_k v + b_k  in  K_k    for each constraint block k

over a single flat variable vector ``v``.  Supported cones:

``zero``
    {0}^dim (linear equations).
``nonneg``
    The nonnegative orthant (linear inequalities, written as expr >= 0).
``soc``
    Second-order cone {(t, u) : t >= ||u||_2}, dim >= 2.
``rsoc``
    Rotated second-order cone {(u, v, w) : 2 u v >= ||w||_2^2, u >= 0,
    v >= 0}, dim >= 3.  Note the factor 2; builders that want the bare
    product form u v >= ||w||^2 scale the w rows by sqrt(2) (see
    :meth:`ProgramBuilder.add_rsoc_sq`).
``psd``
    Symmetric positive semidefinite matrices of a given order k, stored
    as the scaled lower triangle read row by row: entry (i, j) with
    i >= j lands at position i (i + 1) / 2 + j, and off-diagonal entries
    are multiplied by sqrt(2) so the vectorization is an isometry.  A
    block of order k therefore occupies k (k + 1) / 2 rows.

Variable bounds and integrality flags exist only for the mixed-integer
quadratic export path (file formats); the continuous solve path requires
free variables, a linear objective, and explicit constraint rows.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError


class InvalidProgramError(ValidationError):
    """A program failed structural validation."""


class ConeKind(enum.Enum):
    ZERO = "zero"
    NONNEG = "nonneg"
    SOC = "soc"
    RSOC = "rsoc"
    PSD = "psd"


@dataclass(frozen=True)
class Cone:
    """A cone tag.  ``dim`` is the scalar row count except for PSD blocks,
    where it is the matrix order."""

    kind: ConeKind
    dim: int

    @property
    def num_rows(self) -> int:
        if self.kind is ConeKind.PSD:
            return triangle_size(self.dim)
        return self.dim


def zero_cone(dim: int) -> Cone:
    return Cone(ConeKind.ZERO, dim)


def nonneg_cone(dim: int) -> Cone:
    return Cone(ConeKind.NONNEG, dim)


def soc_cone(dim: int) -> Cone:
    return Cone(ConeKind.SOC, dim)


def rsoc_cone(dim: int) -> Cone:
    return Cone(ConeKind.RSOC, dim)


def psd_cone(order: int) -> Cone:
    return Cone(ConeKind.PSD, order)


def triangle_size(order: int) -> int:
    return order * (order + 1) // 2


def triangle_index(i: int, j: int) -> int:
    """Position of entry (i, j), i >= j, in the row-major lower triangle."""
    if j > i:
        i, j = j, i
    return i * (i + 1) // 2 + j


_SQRT2 = math.sqrt(2.0)


def matrix_to_svec(m: np.ndarray) -> np.ndarray:
    """Scaled lower-triangle vectorization (off-diagonals times sqrt(2))."""
    m = np.asarray(m, dtype=float)
    k = m.shape[0]
    out = np.empty(triangle_size(k))
    pos = 0
    for i in range(k):
        for j in range(i + 1):
            out[pos] = m[i, j] * (1.0 if i == j else _SQRT2)
            pos += 1
    return out


def svec_to_matrix(v: np.ndarray, order: int) -> np.ndarray:
    """Inverse of :func:`matrix_to_svec`."""
    v = np.asarray(v, dtype=float)
    if v.shape != (triangle_size(order),):
        raise ValueError("svec length does not match order")
    m = np.empty((order, order))
    pos = 0
    for i in range(order):
        for j in range(i + 1):
            val = v[pos] if i == j else v[pos] / _SQRT2
            m[i, j] = val
            m[j, i] = val
            pos += 1
    return m


# A row is a sparse affine functional: ((col, coef), ...) plus a constant.
Row = tuple[tuple[tuple[int, float], ...], float]


def make_row(coeffs: Mapping[int, float] | Iterable[tuple[int, float]],
             const: float = 0.0) -> Row:
    """Normalize a coefficient mapping into a sorted, merged, zero-free row."""
    items: dict[int, float] = {}
    pairs = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
    for col, coef in pairs:
        items[int(col)] = items.get(int(col), 0.0) + float(coef)
    cleaned = tuple(sorted((c, v) for c, v in items.items() if v != 0.0))
    return cleaned, float(const)


def scale_row(row: Row, factor: float) -> Row:
    coeffs, const = row
    return tuple((c, v * factor) for c, v in coeffs), const * factor


@dataclass(frozen=True)
class Block:
    """One constraint block: the rows of an affine map into a cone."""

    cone: Cone
    rows: tuple[Row, ...]
    name: str = ""

    def row_matrix(self, num_vars: int) -> np.ndarray:
        a = np.zeros((len(self.rows), num_vars))
        for r, (coeffs, _) in enumerate(self.rows):
            for col, coef in coeffs:
                a[r, col] = coef
        return a

    def consts(self) -> np.ndarray:
        return np.array([const for _, const in self.rows])


@dataclass(frozen=True)
class ConicProgram:
    num_vars: int
    obj_coeffs: tuple[tuple[int, float], ...]
    obj_offset: float
    obj_quad: tuple[tuple[int, int, float], ...]  # (i, j, coef), i >= j
    blocks: tuple[Block, ...]
    lb: tuple[float, ...]
    ub: tuple[float, ...]
    integers: frozenset[int]
    var_names: tuple[str, ...]
    name: str = ""
    info: dict = field(default_factory=dict, compare=False)

    @property
    def num_rows(self) -> int:
        return sum(len(b.rows) for b in self.blocks)

    def objective_value(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=float)
        total = self.obj_offset
        for col, coef in self.obj_coeffs:
            total += coef * v[col]
        for i, j, coef in self.obj_quad:
            total += coef * v[i] * v[j] * (1.0 if i == j else 2.0)
        return total

    def is_miqp_shaped(self) -> bool:
        """True when the program fits the mixed-integer quadratic export
        path: only linear cones, and any quadratic objective present."""
        return all(b.cone.kind in (ConeKind.ZERO, ConeKind.NONNEG)
                   for b in self.blocks)


def validate(p: ConicProgram) -> list[str]:
    """Structural checks.  Returns a list of human-readable defects, each
    naming the offending block (or the objective/bounds) and the rule."""
    defects: list[str] = []
    n = p.num_vars
    if n < 0:
        defects.append("program: negative variable count")
    if len(p.var_names) != n:
        defects.append("program: variable name list length mismatch")
    if len(p.lb) != n or len(p.ub) != n:
        defects.append("program: bound array length mismatch")
    else:
        for i, (lo, hi) in enumerate(zip(p.lb, p.ub)):
            if math.isnan(lo) or math.isnan(hi):
                defects.append(f"bounds: variable {i} has NaN bound")
            elif lo > hi:
                defects.append(f"bounds: variable {i} has lb > ub")
    for col, coef in p.obj_coeffs:
        if not 0 <= col < n:
            defects.append(f"objective: column {col} out of range")
        if not math.isfinite(coef):
            defects.append(f"objective: non-finite coefficient on column {col}")
    if not math.isfinite(p.obj_offset):
        defects.append("objective: non-finite offset")
    for i, j, coef in p.obj_quad:
        if not (0 <= j <= i < n):
            defects.append(f"objective: quadratic term ({i}, {j}) out of range"
                           " or not lower-triangular")
        if not math.isfinite(coef):
            defects.append(f"objective: non-finite quadratic term ({i}, {j})")
    for idx in sorted(p.integers):
        if not 0 <= idx < n:
            defects.append(f"integrality: variable {idx} out of range")
    for k, b in enumerate(p.blocks):
        label = f"block {k}" + (f" ({b.name})" if b.name else "")
        cone = b.cone
        if cone.dim < 1:
            defects.append(f"{label}: cone dimension must be positive")
            continue
        if cone.kind is ConeKind.SOC and cone.dim < 2:
            defects.append(f"{label}: soc blocks need dimension >= 2")
        if cone.kind is ConeKind.RSOC and cone.dim < 3:
            defects.append(f"{label}: rsoc blocks need dimension >= 3")
        if len(b.rows) != cone.num_rows:
            defects.append(f"{label}: {len(b.rows)} rows but the cone"
                           f" requires {cone.num_rows}")
        for r, (coeffs, const) in enumerate(b.rows):
            if not math.isfinite(const):
                defects.append(f"{label}: row {r} has non-finite constant")
            last = -1
            for col, coef in coeffs:
                if not 0 <= col < n:
                    defects.append(f"{label}: row {r} column {col} out of range")
                if col <= last:
                    defects.append(f"{label}: row {r} columns not strictly"
                                   " increasing")
                last = col
                if not math.isfinite(coef):
                    defects.append(f"{label}: row {r} has non-finite"
                                   f" coefficient on column {col}")
    return defects


class ProgramBuilder:
    """Incrementally assembles a :class:`ConicProgram`.

    Variables are created through :meth:`new_var`; all methods refer to
    them by index.  Rows are given as ``{var: coef}`` mappings (or
    iterables of pairs) together with an additive constant.
    """

    def __init__(self, name: str = ""):
        self.name = name
        self._names: list[str] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._integers: set[int] = set()
        self._obj: dict[int, float] = {}
        self._offset = 0.0
        self._quad: dict[tuple[int, int], float] = {}
        self._blocks: list[Block] = []

    @property
    def num_vars(self) -> int:
        return len(self._names)

    def new_var(self, name: str = "", *, lb: float = -math.inf,
                ub: float = math.inf, integer: bool = False) -> int:
        idx = len(self._names)
        self._names.append(name or f"v{idx}")
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        if integer:
            self._integers.add(idx)
        return idx

    def new_vars(self, count: int, prefix: str = "v", **kwargs) -> list[int]:
        return [self.new_var(f"{prefix}{i}", **kwargs) for i in range(count)]

    def add_objective(self, coeffs: Mapping[int, float] | None = None,
                      offset: float = 0.0) -> None:
        if coeffs:
            for col, coef in coeffs.items():
                self._obj[col] = self._obj.get(col, 0.0) + float(coef)
        self._offset += float(offset)

    def add_quad_objective(self, i: int, j: int, coef: float) -> None:
        """Adds ``coef * v_i * v_j`` to the objective (both orders of a
        symmetric pair count once; pass the coefficient of the product)."""
        if j > i:
            i, j = j, i
        key = (i, j)
        self._quad[key] = self._quad.get(key, 0.0) + float(coef)

    def add_block(self, cone: Cone,
                  rows: Sequence[Mapping[int, float] | Row | tuple],
                  name: str = "") -> int:
        normalized = []
        for row in rows:
            if isinstance(row, tuple) and len(row) == 2 \
                    and isinstance(row[0], tuple):
                normalized.append(row)  # already a Row
            elif isinstance(row, tuple) and len(row) == 2:
                normalized.append(make_row(row[0], row[1]))
            else:
                normalized.append(make_row(row))
        self._blocks.append(Block(cone, tuple(normalized), name))
        return len(self._blocks) - 1

    def add_zero(self, coeffs: Mapping[int, float], const: float = 0.0,
                 name: str = "") -> int:
        return self.add_block(zero_cone(1), [make_row(coeffs, const)], name)

    def add_nonneg(self, rows: Sequence[tuple[Mapping[int, float], float]],
                   name: str = "") -> int:
        return self.add_block(nonneg_cone(len(rows)),
                              [make_row(c, k) for c, k in rows], name)

    def add_box(self, var: int, lo: float, hi: float, name: str = "") -> int:
        """Emits lo <= v <= hi as two nonnegative rows."""
        return self.add_nonneg([({var: 1.0}, -lo), ({var: -1.0}, hi)], name)

    def add_rsoc_sq(self, u: Mapping[int, float] | tuple, v, ws,
                    name: str = "") -> int:
        """Emits u * v >= sum_k w_k^2 (u, v >= 0) as one rotated-cone block.

        Arguments are affine rows (mapping, or (mapping, const) pairs).
        The stored cone uses the factor-2 convention, so the w rows are
        scaled by sqrt(2) here.
        """
        rows = [self._as_row(u), self._as_row(v)]
        rows.extend(scale_row(self._as_row(w), _SQRT2) for w in ws)
        return self.add_block(rsoc_cone(len(rows)), rows, name)

    @staticmethod
    def _as_row(item) -> Row:
        if isinstance(item, tuple) and len(item) == 2 \
                and isinstance(item[0], tuple):
            return item
        if isinstance(item, tuple) and len(item) == 2:
            return make_row(item[0], item[1])
        return make_row(item)

    def finalize(self, name: str | None = None, **info) -> ConicProgram:
        p = ConicProgram(
            num_vars=len(self._names),
            obj_coeffs=tuple(sorted(
                (c, v) for c, v in self._obj.items() if v != 0.0)),
            obj_offset=self._offset,
            obj_quad=tuple(sorted(
                (i, j, v) for (i, j), v in self._quad.items() if v != 0.0)),
            blocks=tuple(self._blocks),
            lb=tuple(self._lb),
            ub=tuple(self._ub),
            integers=frozenset(self._integers),
            var_names=tuple(self._names),
            name=self.name if name is None else name,
            info=dict(info),
        )
        defects = validate(p)
        if defects:
            raise InvalidProgramError("; ".join(defects))
        return p


def lower_small_psd(p: ConicProgram) -> ConicProgram:
    """Rewrites every PSD block of order <= 2 with linear/rotated cones.

    An order-1 block [t] >= 0 becomes a nonnegative row.  An order-2
    block [[a, g], [g, c]] >= 0 is equivalent to the rotated cone
    a c >= g^2 with a, c >= 0; in scaled-triangle storage the block rows
    are (a, sqrt(2) g, c), so the rotated block is the row permutation
    (a, c, sqrt(2) g) under the factor-2 convention.  Larger PSD blocks
    are kept.  The transformation is exact.
    """
    blocks: list[Block] = []
    for b in p.blocks:
        if b.cone.kind is ConeKind.PSD and b.cone.dim == 1:
            blocks.append(Block(nonneg_cone(1), b.rows, b.name))
        elif b.cone.kind is ConeKind.PSD and b.cone.dim == 2:
            rows = (b.rows[0], b.rows[2], b.rows[1])
            blocks.append(Block(rsoc_cone(3), rows, b.name))
        else:
            blocks.append(b)
    return ConicProgram(
        num_vars=p.num_vars, obj_coeffs=p.obj_coeffs,
        obj_offset=p.obj_offset, obj_quad=p.obj_quad, blocks=tuple(blocks),
        lb=p.lb, ub=p.ub, integers=p.integers, var_names=p.var_names,
        name=p.name, info=dict(p.info))


def relax_integrality(p: ConicProgram) -> ConicProgram:
    """Continuous relaxation of a mixed-integer quadratic program.

    Drops integrality, turns finite variable bounds into nonnegative
    rows, and replaces a diagonal quadratic objective sum q_i v_i^2
    (q_i >= 0) with an epigraph variable constrained by a rotated cone.
    Off-diagonal or negative quadratic terms are rejected.
    """
    b = ProgramBuilder(p.name)
    for name in p.var_names:
        b.new_var(name)
    b.add_objective(dict(p.obj_coeffs), p.obj_offset)
    for blk in p.blocks:
        b.add_block(blk.cone, list(blk.rows), blk.name)
    for i, (lo, hi) in enumerate(zip(p.lb, p.ub)):
        rows = []
        if math.isfinite(lo):
            rows.append(({i: 1.0}, -lo))
        if math.isfinite(hi):
            rows.append(({i: -1.0}, hi))
        if rows:
            b.add_nonneg(rows, name=f"bound[{p.var_names[i]}]")
    if p.obj_quad:
        for i, j, coef in p.obj_quad:
            if i != j:
                raise InvalidProgramError(
                    "only diagonal quadratic objectives can be relaxed")
            if coef < 0:
                raise InvalidProgramError(
                    "quadratic objective must be convex (nonnegative diagonal)")
        t = b.new_var("qepi")
        b.add_rsoc_sq({t: 1.0}, ({}, 1.0),
                      [{i: math.sqrt(coef)} for i, j, coef in p.obj_quad
                       if coef > 0.0],
                      name="qepi")
        b.add_objective({t: 1.0})
    return b.finalize(info=dict(p.info))


def _soc_distance(r: np.ndarray) -> float:
    """Euclidean distance from a point to the second-order cone."""
    t = r[0]
    u = float(np.linalg.norm(r[1:]))
    if u <= t:
        return 0.0
    if u <= -t:
        return float(math.hypot(t, u))
    return (u - t) / _SQRT2


def cone_distance(cone: Cone, r: np.ndarray) -> float:
    """Euclidean distance from the stacked row values to the cone."""
    r = np.asarray(r, dtype=float)
    if cone.kind is ConeKind.ZERO:
        return float(np.linalg.norm(r))
    if cone.kind is ConeKind.NONNEG:
        return float(np.linalg.norm(np.minimum(r, 0.0)))
    if cone.kind is ConeKind.SOC:
        return _soc_distance(r)
    if cone.kind is ConeKind.RSOC:
        # (u, v, w) -> ((u+v)/sqrt2, (u-v)/sqrt2, w) is an isometry onto
        # the plain second-order cone under the factor-2 convention.
        mapped = np.concatenate([
            [(r[0] + r[1]) / _SQRT2, (r[0] - r[1]) / _SQRT2], r[2:]])
        return _soc_distance(mapped)
    if cone.kind is ConeKind.PSD:
        m = svec_to_matrix(r, cone.dim)
        eigs = np.linalg.eigvalsh(m)
        return float(np.linalg.norm(np.minimum(eigs, 0.0)))
    raise ValueError(f"unknown cone kind {cone.kind}")


@dataclass(frozen=True)
class Residuals:
    per_block: tuple[float, ...]
    max_violation: float
    objective_delta: float


def residuals(p: ConicProgram, v: np.ndarray,
              reported_objective: float | None = None) -> Residuals:
    """Feasibility violations of a candidate point, block by block, plus
    the gap between the recomputed and reported objective values."""
    v = np.asarray(v, dtype=float)
    if v.shape != (p.num_vars,):
        raise ValueError("point length does not match program")
    per = []
    for blk in p.blocks:
        vals = blk.row_matrix(p.num_vars) @ v + blk.consts()
        per.append(cone_distance(blk.cone, vals))
    obj = p.objective_value(v)
    delta = 0.0 if reported_objective is None else abs(obj - reported_objective)
    return Residuals(tuple(per), max(per, default=0.0), delta)
