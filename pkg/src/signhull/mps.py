"""Free-format MPS export for mixed-integer quadratic programs.

Target shape: linear rows (equalities and >= inequalities), variable
bounds, integrality markers, and a quadratic objective.  The objective
written is

    minimize  c'x + (1/2) x'Qx + const

with Q listed entrywise in a ``QMATRIX`` section covering both triangles
(so a pure squared-norm objective appears as diagonal entries 2.0).  The
in-memory convention counts each off-diagonal product once with an
implicit symmetric double, hence Q = 2 S where S is the symmetric
coefficient matrix; the two conventions agree on the objective value.

Rows are emitted as ``R0, R1, ...`` in program order with sense ``E``
(zero cone) or ``G`` (nonnegative cone, right-hand side minus the row
constant).  A nonzero objective offset is carried as a negated RHS entry
on the objective row, the common MPS convention.  Integer variables are
wrapped in ``MARKER INTORG/INTEND`` groups inside ``COLUMNS`` and bound
``BV`` when their box is [0, 1]; free continuous variables get ``FR``.

The parser here reads back exactly this dialect for self-consistency
checks; it is not a general MPS reader.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conic import ConeKind, ConicProgram, validate
from .errors import ValidationError


class NotMiqpShapedError(ValidationError):
    """The program has cones beyond linear rows, so it has no MPS form."""


class MpsParseError(ValidationError):
    """Malformed MPS input; the message carries the line number."""


def _fmt(x: float) -> str:
    return repr(float(x))


def export_mps(p: ConicProgram) -> str:
    """Serializes a validated MIQP-shaped program (linear cones only)."""
    defects = validate(p)
    if defects:
        raise ValidationError("; ".join(defects))
    if not p.is_miqp_shaped():
        raise NotMiqpShapedError(
            "only zero/nonnegative rows can be written as MPS")

    senses: list[str] = []
    rows: list = []
    for blk in p.blocks:
        sense = "E" if blk.cone.kind is ConeKind.ZERO else "G"
        for row in blk.rows:
            senses.append(sense)
            rows.append(row)

    by_col: dict[int, list[tuple[int, float]]] = {}
    for r, (coeffs, _) in enumerate(rows):
        for col, coef in coeffs:
            by_col.setdefault(col, []).append((r, coef))
    obj = dict(p.obj_coeffs)

    out = [f"NAME          {p.name or 'signhull'}", "ROWS", " N  OBJ"]
    out += [f" {senses[r]}  R{r}" for r in range(len(rows))]
    out.append("COLUMNS")
    in_int = False
    marker = 0
    for j in range(p.num_vars):
        want_int = j in p.integers
        if want_int != in_int:
            state = "'INTORG'" if want_int else "'INTEND'"
            out.append(f"    MARKER{marker}  'MARKER'  {state}")
            marker += 1
            in_int = want_int
        name = p.var_names[j]
        entries = []
        if j in obj and obj[j] != 0.0:
            entries.append(("OBJ", obj[j]))
        entries.extend((f"R{r}", coef) for r, coef in by_col.get(j, []))
        if not entries:
            entries.append(("OBJ", 0.0))
        for row_name, coef in entries:
            out.append(f"    {name}  {row_name}  {_fmt(coef)}")
    if in_int:
        out.append(f"    MARKER{marker}  'MARKER'  'INTEND'")
    out.append("RHS")
    if p.obj_offset != 0.0:
        out.append(f"    RHS  OBJ  {_fmt(-p.obj_offset)}")
    for r, (_, const) in enumerate(rows):
        if const != 0.0:
            out.append(f"    RHS  R{r}  {_fmt(-const)}")
    out.append("BOUNDS")
    for j in range(p.num_vars):
        name = p.var_names[j]
        lo, hi = p.lb[j], p.ub[j]
        if j in p.integers and lo == 0.0 and hi == 1.0:
            out.append(f" BV BND  {name}")
        elif not math.isfinite(lo) and not math.isfinite(hi):
            out.append(f" FR BND  {name}")
        else:
            if math.isfinite(lo):
                out.append(f" LO BND  {name}  {_fmt(lo)}")
            else:
                out.append(f" MI BND  {name}")
            if math.isfinite(hi):
                out.append(f" UP BND  {name}  {_fmt(hi)}")
    if p.obj_quad:
        out.append("QMATRIX")
        for i, j, coef in p.obj_quad:
            out.append(f"    {p.var_names[i]}  {p.var_names[j]}"
                       f"  {_fmt(2.0 * coef)}")
            if i != j:
                out.append(f"    {p.var_names[j]}  {p.var_names[i]}"
                           f"  {_fmt(2.0 * coef)}")
    out.append("ENDATA")
    out.append("")
    return "\n".join(out)


@dataclass
class ParsedMps:
    """Plain-data view of one exported file, for verification."""

    name: str
    row_senses: dict[str, str]
    columns: dict[str, dict[str, float]]  # var -> row -> coefficient
    rhs: dict[str, float]
    bounds: dict[str, tuple[float, float]]
    integers: set[str]
    qmatrix: list[tuple[str, str, float]] = field(default_factory=list)

    @property
    def var_order(self) -> list[str]:
        return list(self.columns.keys())

    def objective_at(self, values: dict[str, float]) -> float:
        """c'x + (1/2) x'Qx + const at a named assignment."""
        total = -self.rhs.get("OBJ", 0.0)
        for var, entry in self.columns.items():
            total += entry.get("OBJ", 0.0) * values.get(var, 0.0)
        for vi, vj, q in self.qmatrix:
            total += 0.5 * q * values.get(vi, 0.0) * values.get(vj, 0.0)
        return total

    def row_value(self, row: str, values: dict[str, float]) -> float:
        return sum(entry.get(row, 0.0) * values.get(var, 0.0)
                   for var, entry in self.columns.items())


def parse_mps(text: str) -> ParsedMps:
    """Reads back the dialect written by :func:`export_mps`."""
    name = ""
    section = None
    row_senses: dict[str, str] = {}
    columns: dict[str, dict[str, float]] = {}
    rhs: dict[str, float] = {}
    bounds: dict[str, tuple[float, float]] = {}
    integers: set[str] = set()
    qmatrix: list[tuple[str, str, float]] = []
    in_int = False
    saw_end = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line.strip() or line.lstrip().startswith("*"):
            continue
        fields = line.split()
        if line[0] not in " \t":
            keyword = fields[0]
            if keyword == "NAME":
                name = fields[1] if len(fields) > 1 else ""
            elif keyword in ("ROWS", "COLUMNS", "RHS", "BOUNDS", "QMATRIX"):
                section = keyword
            elif keyword == "ENDATA":
                saw_end = True
                section = None
            else:
                raise MpsParseError(f"line {lineno}: unknown section"
                                    f" {keyword!r}")
            continue
        if section == "ROWS":
            if len(fields) != 2:
                raise MpsParseError(f"line {lineno}: ROWS entries need"
                                    " sense and name")
            sense, row = fields
            if sense not in ("N", "E", "G", "L"):
                raise MpsParseError(f"line {lineno}: bad row sense {sense!r}")
            row_senses[row] = sense
        elif section == "COLUMNS":
            if len(fields) >= 3 and fields[1] == "'MARKER'":
                in_int = fields[2] == "'INTORG'"
                continue
            if len(fields) != 3:
                raise MpsParseError(f"line {lineno}: COLUMNS entries need"
                                    " var, row, value")
            var, row, val = fields
            if row != "OBJ" and row not in row_senses:
                raise MpsParseError(f"line {lineno}: unknown row {row!r}")
            try:
                v = float(val)
            except ValueError:
                raise MpsParseError(f"line {lineno}: bad number {val!r}")
            columns.setdefault(var, {})
            columns[var][row] = columns[var].get(row, 0.0) + v
            if in_int:
                integers.add(var)
        elif section == "RHS":
            if len(fields) != 3:
                raise MpsParseError(f"line {lineno}: RHS entries need"
                                    " set, row, value")
            _, row, val = fields
            try:
                rhs[row] = float(val)
            except ValueError:
                raise MpsParseError(f"line {lineno}: bad number {val!r}")
        elif section == "BOUNDS":
            kind = fields[0]
            var = fields[2] if len(fields) > 2 else ""
            if var and var not in columns:
                raise MpsParseError(f"line {lineno}: unknown column {var!r}")
            lo, hi = bounds.get(var, (0.0, math.inf))
            if kind == "BV":
                bounds[var] = (0.0, 1.0)
            elif kind == "FR":
                bounds[var] = (-math.inf, math.inf)
            elif kind == "MI":
                bounds[var] = (-math.inf, hi)
            elif kind in ("LO", "UP"):
                if len(fields) != 4:
                    raise MpsParseError(f"line {lineno}: {kind} bound needs"
                                        " a value")
                val = float(fields[3])
                bounds[var] = (val, hi) if kind == "LO" else (lo, val)
            else:
                raise MpsParseError(f"line {lineno}: unsupported bound"
                                    f" kind {kind!r}")
        elif section == "QMATRIX":
            if len(fields) != 3:
                raise MpsParseError(f"line {lineno}: QMATRIX entries need"
                                    " var, var, value")
            try:
                qmatrix.append((fields[0], fields[1], float(fields[2])))
            except ValueError:
                raise MpsParseError(f"line {lineno}: bad number"
                                    f" {fields[2]!r}")
        else:
            raise MpsParseError(f"line {lineno}: data outside any section")
    if not saw_end:
        raise MpsParseError("missing ENDATA")
    return ParsedMps(name, row_senses, columns, rhs, bounds, integers,
                     qmatrix)
