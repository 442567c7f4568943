"""Closed convex hulls of quadratic epigraphs with sign indicators.

The base object is the mixed-integer set over (x, z, t) in
R^n x {0,1}^n x R where t bounds the squared projection (d'x)^2 along a
fixed direction d and each binary z_i fixes the sign of x_i:

    two-sided:  x_i >= 0 when z_i = 1 and x_i <= 0 when z_i = 0;
    one-sided:  x_i unrestricted when z_i = 1 and x_i <= 0 when z_i = 0.

The closed convex hull of the two-sided set is described, over
0 <= z <= 1, by

    t >= (d'x)_+^2 / D_+ + (d'x)_-^2 / D_-,

where D_+ = min{1, sum_{i: d_i > 0} z_i + sum_{i: d_i < 0} (1 - z_i)}
and D_- swaps the two index sets.  Entries with d_i = 0 never enter the
denominators, 0/0 counts as 0, and a positive numerator over a zero
denominator is infinite.  The one-sided hull keeps a single capped
denominator when d has uniform sign and collapses to t >= (d'x)^2 when
d carries both signs.  Both hulls admit exact second-order-cone
reformulations, emitted by the builder functions below.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import conic
from .conic import ProgramBuilder
from .errors import TooLargeError, ValidationError

MAX_ENUMERATION_VARS = 20
PROPORTIONALITY_RTOL = 1e-9


class ZOutOfBoundsError(ValidationError):
    """An indicator coordinate fell outside [0, 1]."""


class Sidedness(enum.Enum):
    TWO_SIDED = "two-sided"
    ONE_SIDED = "one-sided"


@dataclass(frozen=True, eq=False)
class RankOneSet:
    """Direction vector plus the sign-coupling convention."""

    d: np.ndarray
    sidedness: Sidedness = Sidedness.TWO_SIDED

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        if d.ndim != 1 or d.size < 1:
            raise ValidationError("direction must be a nonempty vector")
        if not np.all(np.isfinite(d)):
            raise ValidationError("direction must be finite")
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.d.size

    @property
    def supp_pos(self) -> np.ndarray:
        return np.flatnonzero(self.d > 0)

    @property
    def supp_neg(self) -> np.ndarray:
        return np.flatnonzero(self.d < 0)

    @property
    def supp(self) -> np.ndarray:
        return np.flatnonzero(self.d != 0)


@dataclass(frozen=True, eq=False)
class HullPoint:
    x: np.ndarray
    z: np.ndarray
    t: float


def _check_xz(rset: RankOneSet, x: np.ndarray, z: np.ndarray,
              slack: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != (rset.n,) or z.shape != (rset.n,):
        raise ValidationError("x and z must match the direction length")
    if np.any(z < -slack) or np.any(z > 1.0 + slack):
        raise ZOutOfBoundsError("indicator entries must lie in [0, 1]")
    return x, np.clip(z, 0.0, 1.0)


def _ratio(num_sq: float, den: float) -> float:
    """num_sq / den with the conventions 0/0 = 0 and pos/0 = inf."""
    if num_sq == 0.0:
        return 0.0
    if den <= 0.0:
        return math.inf
    return num_sq / den


def eval_hull_rhs(rset: RankOneSet, x: np.ndarray, z: np.ndarray) -> float:
    """Right-hand side of the two-sided hull inequality at (x, z).

    May return ``math.inf`` when a positive numerator meets an exhausted
    denominator.  Rejects z outside [0, 1].
    """
    if rset.sidedness is not Sidedness.TWO_SIDED:
        raise ValidationError("eval_hull_rhs applies to two-sided sets;"
                              " use eval_one_sided_rhs")
    x, z = _check_xz(rset, x, z)
    y = float(rset.d @ x)
    pos, neg = rset.supp_pos, rset.supp_neg
    den_pos = min(1.0, float(z[pos].sum() + (1.0 - z[neg]).sum()))
    den_neg = min(1.0, float(z[neg].sum() + (1.0 - z[pos]).sum()))
    yp = max(y, 0.0)
    ym = min(y, 0.0)
    return _ratio(yp * yp, den_pos) + _ratio(ym * ym, den_neg)


def eval_one_sided_rhs(rset: RankOneSet, x: np.ndarray,
                       z: np.ndarray) -> float:
    """Right-hand side of the one-sided hull inequality at (x, z).

    With sign-uniform d only the part of (d'x) that benefits from
    relaxing signs gets a perspective denominator; with mixed signs the
    hull needs no indicators and the bound is (d'x)^2.
    """
    if rset.sidedness is not Sidedness.ONE_SIDED:
        raise ValidationError("eval_one_sided_rhs applies to one-sided sets")
    x, z = _check_xz(rset, x, z)
    y = float(rset.d @ x)
    yp = max(y, 0.0)
    ym = min(y, 0.0)
    has_pos = rset.supp_pos.size > 0
    has_neg = rset.supp_neg.size > 0
    if has_pos and has_neg:
        return y * y
    den = min(1.0, float(z[rset.supp].sum()))
    if not has_neg:
        return _ratio(yp * yp, den) + ym * ym
    return _ratio(ym * ym, den) + yp * yp


def check_membership(rset: RankOneSet, point: HullPoint,
                     tol: float = 1e-9) -> bool:
    """Whether (x, z, t) lies in the closed convex hull, up to tol.

    Indicators outside [0, 1] are a query error, never a silent False.
    """
    if rset.sidedness is Sidedness.TWO_SIDED:
        rhs = eval_hull_rhs(rset, point.x, point.z)
    else:
        rhs = eval_one_sided_rhs(rset, point.x, point.z)
    if math.isinf(rhs):
        return math.isinf(point.t) and point.t > 0
    return point.t >= rhs - tol * (1.0 + abs(rhs))


@dataclass(frozen=True)
class SocpHandles:
    """Variable indices created by the cone builders."""

    w_pos: int | None = None
    w_neg: int | None = None
    r_pos: int | None = None
    r_neg: int | None = None


def build_two_sided_socp(rset: RankOneSet, b: ProgramBuilder,
                         x_vars: list[int], z_vars: list[int],
                         t_var: int) -> SocpHandles:
    """Emits the exact cone description of the two-sided hull.

    Splits d'x = w+ + w- with w+ >= 0 >= w-, caps r+ and r- by 1 and by
    the matching indicator sums, and couples them to t through two
    rotated cones t * r >= w^2.  Adds 4 scalar variables, 7 linear rows,
    and 2 rotated-cone blocks.
    """
    if rset.sidedness is not Sidedness.TWO_SIDED:
        raise ValidationError("two-sided builder got a one-sided set")
    d = rset.d
    w_pos = b.new_var("wpos")
    w_neg = b.new_var("wneg")
    r_pos = b.new_var("rpos")
    r_neg = b.new_var("rneg")
    proj = {x_vars[i]: d[i] for i in range(rset.n) if d[i] != 0.0}
    b.add_zero({**proj, w_pos: -1.0, w_neg: -1.0}, 0.0, name="split")
    b.add_nonneg([({w_pos: 1.0}, 0.0), ({w_neg: -1.0}, 0.0)],
                 name="split-signs")

    def cap_rows(r_var: int, ones: np.ndarray, flipped: np.ndarray):
        coeffs = {r_var: -1.0}
        const = float(len(flipped))
        for i in ones:
            coeffs[z_vars[i]] = coeffs.get(z_vars[i], 0.0) + 1.0
        for i in flipped:
            coeffs[z_vars[i]] = coeffs.get(z_vars[i], 0.0) - 1.0
        return [({r_var: -1.0}, 1.0), (coeffs, const)]

    b.add_nonneg(cap_rows(r_pos, rset.supp_pos, rset.supp_neg), name="cap-pos")
    b.add_nonneg(cap_rows(r_neg, rset.supp_neg, rset.supp_pos), name="cap-neg")
    b.add_rsoc_sq({t_var: 1.0}, {r_pos: 1.0}, [{w_pos: 1.0}], name="cone-pos")
    b.add_rsoc_sq({t_var: 1.0}, {r_neg: 1.0}, [{w_neg: 1.0}], name="cone-neg")
    return SocpHandles(w_pos, w_neg, r_pos, r_neg)


def build_one_sided_socp(rset: RankOneSet, b: ProgramBuilder,
                         x_vars: list[int], z_vars: list[int],
                         t_var: int) -> SocpHandles:
    """Emits the exact cone description of the one-sided hull.

    Sign-uniform directions get one perspective cone on the relaxable
    side of d'x and a plain square on the other; mixed-sign directions
    only need t >= (d'x)^2.
    """
    if rset.sidedness is not Sidedness.ONE_SIDED:
        raise ValidationError("one-sided builder got a two-sided set")
    d = rset.d
    proj = {x_vars[i]: d[i] for i in range(rset.n) if d[i] != 0.0}
    has_pos = rset.supp_pos.size > 0
    has_neg = rset.supp_neg.size > 0
    if has_pos and has_neg:
        b.add_rsoc_sq({t_var: 1.0}, ({}, 1.0), [conic.make_row(proj)],
                      name="square")
        return SocpHandles()
    if not has_pos and not has_neg:
        b.add_nonneg([({t_var: 1.0}, 0.0)], name="tsign")
        return SocpHandles()

    w_pos = b.new_var("wpos")
    w_neg = b.new_var("wneg")
    r_var = b.new_var("r")
    b.add_zero({**proj, w_pos: -1.0, w_neg: -1.0}, 0.0, name="split")
    b.add_nonneg([({w_pos: 1.0}, 0.0), ({w_neg: -1.0}, 0.0)],
                 name="split-signs")
    coeffs = {r_var: -1.0}
    for i in rset.supp:
        coeffs[z_vars[i]] = 1.0
    b.add_nonneg([({r_var: -1.0}, 1.0), (coeffs, 0.0)], name="cap")
    if has_pos:
        b.add_rsoc_sq({t_var: 1.0}, {r_var: 1.0}, [{w_pos: 1.0}],
                      name="cone-persp")
        b.add_rsoc_sq({t_var: 1.0}, ({}, 1.0), [{w_neg: 1.0}],
                      name="cone-square")
        return SocpHandles(w_pos=w_pos, w_neg=w_neg, r_pos=r_var)
    b.add_rsoc_sq({t_var: 1.0}, {r_var: 1.0}, [{w_neg: 1.0}],
                  name="cone-persp")
    b.add_rsoc_sq({t_var: 1.0}, ({}, 1.0), [{w_pos: 1.0}],
                  name="cone-square")
    return SocpHandles(w_pos=w_pos, w_neg=w_neg, r_neg=r_var)


@dataclass(frozen=True)
class LossParams:
    """Parameters of the separable penalty envelope: curvature d and
    violation price lam, both strictly positive."""

    d: float
    lam: float

    def __post_init__(self):
        if not (self.d > 0 and math.isfinite(self.d)):
            raise ValidationError("curvature d must be strictly positive")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValidationError("price lam must be strictly positive")

    @property
    def threshold(self) -> float:
        return math.sqrt(self.lam / self.d)


def phi_loss(x: float, params: LossParams) -> float:
    """The non-convex margin loss: zero for correct classification,
    concave quadratic 2 sqrt(lam d) x - d x^2 inside the margin band,
    flat at lam beyond the threshold sqrt(lam/d).

    The flat branch is taken for x >= threshold so the boundary value is
    exactly lam (the two branches agree there analytically).
    """
    if x <= 0.0:
        return 0.0
    if x >= params.threshold:
        return params.lam
    return 2.0 * math.sqrt(params.lam * params.d) * x - params.d * x * x


def phi_argmin_z(x: float, params: LossParams) -> float:
    """The indicator value achieving the envelope: 0 on the correct side,
    min{sqrt(d/lam) x, 1} otherwise."""
    if x <= 0.0:
        return 0.0
    return min(math.sqrt(params.d / params.lam) * x, 1.0)


@dataclass(frozen=True, eq=False)
class LinearObjective:
    """alpha'x + beta'z + gamma*t."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: float

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        if alpha.ndim != 1 or alpha.shape != beta.shape:
            raise ValidationError("alpha and beta must be vectors of equal"
                                  " length")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))
                and math.isfinite(self.gamma)):
            raise ValidationError("objective coefficients must be finite")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)


class OptStatus(enum.Enum):
    OPTIMAL = "optimal"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True, eq=False)
class OptResult:
    status: OptStatus
    value: float = math.nan
    x: np.ndarray | None = None
    z: np.ndarray | None = None
    t: float = math.nan


def _attainable_signs(d: np.ndarray, zbits: np.ndarray,
                      sidedness: Sidedness) -> tuple[np.ndarray, np.ndarray]:
    """For each enumerated z (rows of zbits), whether d'x can be made
    positive / negative under the sign-coupling constraints."""
    on = zbits.astype(bool)
    off = ~on
    if sidedness is Sidedness.TWO_SIDED:
        pos = (on[:, d > 0].any(axis=1) | off[:, d < 0].any(axis=1))
        neg = (on[:, d < 0].any(axis=1) | off[:, d > 0].any(axis=1))
    else:
        free = on[:, d != 0].any(axis=1)
        pos = free | off[:, d < 0].any(axis=1)
        neg = free | off[:, d > 0].any(axis=1)
    return pos, neg


def _witness_index(d: np.ndarray, z: np.ndarray, want_positive: bool,
                   sidedness: Sidedness) -> int:
    """An index i whose x_i can realize the requested sign of d'x."""
    for i in range(d.size):
        if d[i] == 0.0:
            continue
        if z[i] > 0.5:
            # x_i >= 0 (or free): the term d_i x_i reaches sign(d_i),
            # and any sign at all when the coordinate is unrestricted.
            if sidedness is Sidedness.ONE_SIDED or \
                    want_positive == (d[i] > 0):
                return i
        else:
            # x_i <= 0: the term d_i x_i reaches -sign(d_i).
            if want_positive == (d[i] < 0):
                return i
    raise AssertionError("no witness index; attainability was misjudged")


def exact_linear_opt(rset: RankOneSet, obj: LinearObjective) -> OptResult:
    """Brute-force optimum of a linear objective over the mixed-integer
    set (equivalently its closed convex hull).

    Unboundedness is decided exactly: a negative weight on t, any x cost
    with a free t budget (gamma = 0), or an x cost not proportional to d
    all admit feasible rays.  Otherwise alpha = eta * d and the problem
    separates: for each of the 2^n sign patterns the projection y = d'x
    ranges over a closed cone containing 0, so the inner minimum of
    eta*y + gamma*y^2 is attained either at y = 0 or at the vertex
    -eta/(2*gamma) when the pattern allows its sign.
    """
    n = rset.n
    if n > MAX_ENUMERATION_VARS:
        raise TooLargeError(
            f"enumeration capped at {MAX_ENUMERATION_VARS} variables")
    if obj.alpha.shape != (n,):
        raise ValidationError("objective length must match the set")
    d = rset.d
    alpha, beta, gamma = obj.alpha, obj.beta, obj.gamma

    if gamma < 0:
        return OptResult(OptStatus.UNBOUNDED, value=-math.inf)

    alpha_norm = float(np.linalg.norm(alpha))
    dnorm_sq = float(d @ d)
    if gamma == 0 or dnorm_sq == 0.0:
        if alpha_norm > 0:
            return OptResult(OptStatus.UNBOUNDED, value=-math.inf)
        z = (beta < 0).astype(float)
        return OptResult(OptStatus.OPTIMAL, float(beta[beta < 0].sum()),
                         np.zeros(n), z, 0.0)

    eta = float(d @ alpha) / dnorm_sq
    if float(np.linalg.norm(alpha - eta * d)) > PROPORTIONALITY_RTOL * \
            max(alpha_norm, 1e-300):
        return OptResult(OptStatus.UNBOUNDED, value=-math.inf)

    codes = np.arange(2 ** n, dtype=np.int64)
    zbits = (codes[:, None] >> np.arange(n)) & 1
    pos_ok, neg_ok = _attainable_signs(d, zbits, rset.sidedness)
    y_star = -eta / (2.0 * gamma)
    inner_value = eta * y_star + gamma * y_star * y_star
    usable = pos_ok if y_star > 0 else neg_ok if y_star < 0 else \
        np.zeros(len(codes), dtype=bool)
    values = zbits @ beta + np.where(usable, inner_value, 0.0)
    best = int(np.argmin(values))
    z = zbits[best].astype(float)
    x = np.zeros(n)
    t = 0.0
    if usable[best] and y_star != 0.0:
        i = _witness_index(d, z, y_star > 0, rset.sidedness)
        x[i] = y_star / d[i]
        t = y_star * y_star
    return OptResult(OptStatus.OPTIMAL, float(values[best]), x, z, t)
