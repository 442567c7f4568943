"""Conic Benchmark Format (v2) text export and import.

The subset written and read here covers exactly what the in-memory
program representation supports on its continuous path:

* free scalar variables only (one ``F`` group in ``VAR``),
* scalar constraint groups ``L=``, ``L+``, ``Q``, ``QR`` in ``CON``,
* PSD constraint blocks in ``PSDCON`` with entries in ``HCOORD`` (matrix
  coefficients per variable) and ``DCOORD`` (constant matrices),
* linear objective via ``OBJACOORD`` / ``OBJBCOORD``, sense ``MIN``.

The ``QR`` cone is the rotated cone {(a, b, x) : 2ab >= ||x||^2}, which
matches the in-memory factor-2 convention, so rotated blocks pass
through unchanged.  PSD rows are stored internally as the scaled lower
triangle; on export each off-diagonal coefficient is divided by sqrt(2)
to recover the plain matrix entry, and import scales back.

Ordering is deterministic: scalar groups keep program order, PSD blocks
keep program order after them, and coordinate sections are sorted.  Two
exports of the same program are byte-identical.  Import rebuilds scalar
blocks first and PSD blocks last, so programs that interleave them
round-trip only up to that reordering (see :func:`structurally_equal`).

Floats are written with ``repr``, which is exact under round-trip.
Lines starting with ``#`` are comments; the program name is carried in a
leading ``# name:`` comment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .conic import (Cone, ConeKind, ConicProgram, Row, make_row, nonneg_cone,
                    psd_cone, rsoc_cone, soc_cone, triangle_index,
                    triangle_size, validate, zero_cone)
from .errors import ValidationError


class UnsupportedConeError(ValidationError):
    """The program uses a feature outside the supported CBF subset."""


class CbfParseError(ValidationError):
    """Malformed CBF input; the message carries the line number."""


_SQRT2 = math.sqrt(2.0)

_KIND_TO_TAG = {
    ConeKind.ZERO: "L=",
    ConeKind.NONNEG: "L+",
    ConeKind.SOC: "Q",
    ConeKind.RSOC: "QR",
}
_TAG_TO_KIND = {tag: kind for kind, tag in _KIND_TO_TAG.items()}


def _fmt(x: float) -> str:
    return repr(float(x))


def export_cbf(p: ConicProgram) -> str:
    """Serializes a validated continuous program.  Bounds must be free,
    no integrality, no quadratic objective."""
    defects = validate(p)
    if defects:
        raise ValidationError("; ".join(defects))
    if p.integers:
        raise UnsupportedConeError("CBF export is continuous-only")
    if p.obj_quad:
        raise UnsupportedConeError("CBF export has no quadratic objective")
    if any(math.isfinite(b) for b in p.lb) or \
            any(math.isfinite(b) for b in p.ub):
        raise UnsupportedConeError(
            "CBF export requires free variables; emit bounds as rows")

    scalar = [b for b in p.blocks if b.cone.kind is not ConeKind.PSD]
    psds = [b for b in p.blocks if b.cone.kind is ConeKind.PSD]

    out: list[str] = []
    if p.name:
        out.append(f"# name: {p.name}")
    out += ["VER", "2", "", "OBJSENSE", "MIN", "", "VAR",
            f"{p.num_vars} 1" if p.num_vars else "0 0"]
    if p.num_vars:
        out.append(f"F {p.num_vars}")
    num_scalar_rows = sum(len(b.rows) for b in scalar)
    out += ["", "CON", f"{num_scalar_rows} {len(scalar)}"]
    out += [f"{_KIND_TO_TAG[b.cone.kind]} {b.cone.num_rows}" for b in scalar]

    if psds:
        out += ["", "PSDCON", str(len(psds))]
        out += [str(b.cone.dim) for b in psds]

    if p.obj_coeffs:
        out += ["", "OBJACOORD", str(len(p.obj_coeffs))]
        out += [f"{j} {_fmt(v)}" for j, v in p.obj_coeffs]
    if p.obj_offset != 0.0:
        out += ["", "OBJBCOORD", _fmt(p.obj_offset)]

    acoord: list[str] = []
    bcoord: list[str] = []
    row_base = 0
    for b in scalar:
        for r, (coeffs, const) in enumerate(b.rows):
            for col, coef in coeffs:
                acoord.append(f"{row_base + r} {col} {_fmt(coef)}")
            if const != 0.0:
                bcoord.append(f"{row_base + r} {_fmt(const)}")
        row_base += len(b.rows)
    if acoord:
        out += ["", "ACOORD", str(len(acoord))] + acoord
    if bcoord:
        out += ["", "BCOORD", str(len(bcoord))] + bcoord

    hcoord: list[str] = []
    dcoord: list[str] = []
    for blk, b in enumerate(psds):
        order = b.cone.dim
        pos = 0
        for i in range(order):
            for j in range(i + 1):
                scale = 1.0 if i == j else _SQRT2
                coeffs, const = b.rows[pos]
                for col, coef in coeffs:
                    hcoord.append(
                        f"{blk} {col} {i} {j} {_fmt(coef / scale)}")
                if const != 0.0:
                    dcoord.append(f"{blk} {i} {j} {_fmt(const / scale)}")
                pos += 1
    if hcoord:
        out += ["", "HCOORD", str(len(hcoord))] + hcoord
    if dcoord:
        out += ["", "DCOORD", str(len(dcoord))] + dcoord
    out.append("")
    return "\n".join(out)


class _Reader:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0
        self.name = ""

    def next_line(self) -> str | None:
        while self.pos < len(self.lines):
            raw = self.lines[self.pos]
            self.pos += 1
            line = raw.strip()
            if line.startswith("#"):
                if line.startswith("# name:"):
                    self.name = line[len("# name:"):].strip()
                continue
            if line:
                return line
        return None

    def need_line(self, what: str) -> str:
        line = self.next_line()
        if line is None:
            raise CbfParseError(f"line {self.pos}: expected {what}, got EOF")
        return line

    def error(self, msg: str) -> CbfParseError:
        return CbfParseError(f"line {self.pos}: {msg}")


def _parse_int(r: _Reader, token: str, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise r.error(f"bad integer for {what}: {token!r}")


def _parse_float(r: _Reader, token: str, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise r.error(f"bad number for {what}: {token!r}")


def import_cbf(text: str) -> ConicProgram:
    """Parses the subset produced by :func:`export_cbf`."""
    r = _Reader(text)
    line = r.need_line("VER")
    if line != "VER":
        raise r.error(f"expected VER header, got {line!r}")
    if r.need_line("version number") != "2":
        raise r.error("only CBF version 2 is supported")

    num_vars = 0
    scalar_cones: list[Cone] = []
    psd_orders: list[int] = []
    obj_coeffs: dict[int, float] = {}
    obj_offset = 0.0
    a_entries: list[tuple[int, int, float]] = []
    b_entries: list[tuple[int, float]] = []
    h_entries: list[tuple[int, int, int, int, float]] = []
    d_entries: list[tuple[int, int, int, float]] = []
    saw_var = saw_con = False

    while True:
        section = r.next_line()
        if section is None:
            break
        if section == "OBJSENSE":
            sense = r.need_line("objective sense")
            if sense != "MIN":
                raise r.error("only MIN objective sense is supported")
        elif section == "VAR":
            saw_var = True
            head = r.need_line("VAR header").split()
            if len(head) != 2:
                raise r.error("VAR header needs two fields")
            num_vars = _parse_int(r, head[0], "variable count")
            groups = _parse_int(r, head[1], "variable group count")
            seen = 0
            for _ in range(groups):
                fields = r.need_line("variable group").split()
                if len(fields) != 2 or fields[0] != "F":
                    raise r.error("only free (F) variable groups supported")
                seen += _parse_int(r, fields[1], "group size")
            if seen != num_vars:
                raise r.error("variable groups do not cover all variables")
        elif section == "CON":
            saw_con = True
            head = r.need_line("CON header").split()
            if len(head) != 2:
                raise r.error("CON header needs two fields")
            total = _parse_int(r, head[0], "constraint count")
            groups = _parse_int(r, head[1], "constraint group count")
            seen = 0
            for _ in range(groups):
                fields = r.need_line("constraint group").split()
                if len(fields) != 2:
                    raise r.error("constraint group needs two fields")
                tag, dim_s = fields
                if tag not in _TAG_TO_KIND:
                    raise r.error(f"unsupported cone tag {tag!r}")
                dim = _parse_int(r, dim_s, "cone dimension")
                scalar_cones.append(Cone(_TAG_TO_KIND[tag], dim))
                seen += dim
            if seen != total:
                raise r.error("constraint groups do not cover all rows")
        elif section == "PSDCON":
            count = _parse_int(r, r.need_line("PSDCON count"), "PSD count")
            for _ in range(count):
                psd_orders.append(
                    _parse_int(r, r.need_line("PSD order"), "PSD order"))
        elif section == "OBJACOORD":
            nnz = _parse_int(r, r.need_line("nnz"), "OBJACOORD count")
            for _ in range(nnz):
                fields = r.need_line("objective entry").split()
                if len(fields) != 2:
                    raise r.error("OBJACOORD entry needs two fields")
                j = _parse_int(r, fields[0], "column")
                obj_coeffs[j] = obj_coeffs.get(j, 0.0) \
                    + _parse_float(r, fields[1], "value")
        elif section == "OBJBCOORD":
            obj_offset = _parse_float(r, r.need_line("offset"), "offset")
        elif section == "ACOORD":
            nnz = _parse_int(r, r.need_line("nnz"), "ACOORD count")
            for _ in range(nnz):
                fields = r.need_line("ACOORD entry").split()
                if len(fields) != 3:
                    raise r.error("ACOORD entry needs three fields")
                a_entries.append((_parse_int(r, fields[0], "row"),
                                  _parse_int(r, fields[1], "column"),
                                  _parse_float(r, fields[2], "value")))
        elif section == "BCOORD":
            nnz = _parse_int(r, r.need_line("nnz"), "BCOORD count")
            for _ in range(nnz):
                fields = r.need_line("BCOORD entry").split()
                if len(fields) != 2:
                    raise r.error("BCOORD entry needs two fields")
                b_entries.append((_parse_int(r, fields[0], "row"),
                                  _parse_float(r, fields[1], "value")))
        elif section == "HCOORD":
            nnz = _parse_int(r, r.need_line("nnz"), "HCOORD count")
            for _ in range(nnz):
                fields = r.need_line("HCOORD entry").split()
                if len(fields) != 5:
                    raise r.error("HCOORD entry needs five fields")
                h_entries.append((_parse_int(r, fields[0], "block"),
                                  _parse_int(r, fields[1], "column"),
                                  _parse_int(r, fields[2], "row"),
                                  _parse_int(r, fields[3], "col"),
                                  _parse_float(r, fields[4], "value")))
        elif section == "DCOORD":
            nnz = _parse_int(r, r.need_line("nnz"), "DCOORD count")
            for _ in range(nnz):
                fields = r.need_line("DCOORD entry").split()
                if len(fields) != 4:
                    raise r.error("DCOORD entry needs four fields")
                d_entries.append((_parse_int(r, fields[0], "block"),
                                  _parse_int(r, fields[1], "row"),
                                  _parse_int(r, fields[2], "col"),
                                  _parse_float(r, fields[3], "value")))
        else:
            raise r.error(f"unknown section {section!r}")

    if not saw_var or not saw_con:
        raise CbfParseError("missing VAR or CON section")

    num_scalar = sum(c.num_rows for c in scalar_cones)
    coeffs_by_row: list[dict[int, float]] = [dict() for _ in range(num_scalar)]
    consts = [0.0] * num_scalar
    for i, j, v in a_entries:
        if not 0 <= i < num_scalar:
            raise CbfParseError(f"ACOORD row {i} out of range")
        if not 0 <= j < num_vars:
            raise CbfParseError(f"ACOORD column {j} out of range")
        coeffs_by_row[i][j] = coeffs_by_row[i].get(j, 0.0) + v
    for i, v in b_entries:
        if not 0 <= i < num_scalar:
            raise CbfParseError(f"BCOORD row {i} out of range")
        consts[i] += v

    from .conic import Block

    blocks: list[Block] = []
    base = 0
    for cone in scalar_cones:
        rows = tuple(make_row(coeffs_by_row[base + k], consts[base + k])
                     for k in range(cone.num_rows))
        blocks.append(Block(cone, rows))
        base += cone.num_rows

    psd_rows: list[list[tuple[dict[int, float], float]]] = []
    for order in psd_orders:
        psd_rows.append([(dict(), 0.0) for _ in range(triangle_size(order))])
    for blk, col, i, j, v in h_entries:
        if not 0 <= blk < len(psd_orders):
            raise CbfParseError(f"HCOORD block {blk} out of range")
        order = psd_orders[blk]
        if not (0 <= j <= i < order):
            raise CbfParseError(
                f"HCOORD entry ({i}, {j}) not in the lower triangle")
        scale = 1.0 if i == j else _SQRT2
        pos = triangle_index(i, j)
        coeffs, const = psd_rows[blk][pos]
        coeffs[col] = coeffs.get(col, 0.0) + v * scale
        psd_rows[blk][pos] = (coeffs, const)
    for blk, i, j, v in d_entries:
        if not 0 <= blk < len(psd_orders):
            raise CbfParseError(f"DCOORD block {blk} out of range")
        order = psd_orders[blk]
        if not (0 <= j <= i < order):
            raise CbfParseError(
                f"DCOORD entry ({i}, {j}) not in the lower triangle")
        scale = 1.0 if i == j else _SQRT2
        pos = triangle_index(i, j)
        coeffs, const = psd_rows[blk][pos]
        psd_rows[blk][pos] = (coeffs, const + v * scale)
    for order, rows in zip(psd_orders, psd_rows):
        blocks.append(Block(psd_cone(order),
                            tuple(make_row(c, k) for c, k in rows)))

    p = ConicProgram(
        num_vars=num_vars,
        obj_coeffs=tuple(sorted(
            (j, v) for j, v in obj_coeffs.items() if v != 0.0)),
        obj_offset=obj_offset,
        obj_quad=(),
        blocks=tuple(blocks),
        lb=tuple([-math.inf] * num_vars),
        ub=tuple([math.inf] * num_vars),
        integers=frozenset(),
        var_names=tuple(f"v{i}" for i in range(num_vars)),
        name=r.name,
    )
    defects = validate(p)
    if defects:
        raise CbfParseError("imported program invalid: " + "; ".join(defects))
    return p


def structurally_equal(a: ConicProgram, b: ConicProgram) -> bool:
    """Equality of the mathematical content: variables, objective, and
    constraint blocks, with scalar and PSD blocks compared as separate
    sequences (export groups them) and names/metadata ignored."""
    if a.num_vars != b.num_vars:
        return False
    if a.obj_coeffs != b.obj_coeffs or a.obj_offset != b.obj_offset:
        return False
    if a.obj_quad != b.obj_quad or a.integers != b.integers:
        return False

    def parts(p: ConicProgram):
        scalar = [(blk.cone, blk.rows) for blk in p.blocks
                  if blk.cone.kind is not ConeKind.PSD]
        psd = [(blk.cone, blk.rows) for blk in p.blocks
               if blk.cone.kind is ConeKind.PSD]
        return scalar, psd

    return parts(a) == parts(b)
