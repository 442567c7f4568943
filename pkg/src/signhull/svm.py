"""Datasets and model builders for SVM with margin-violation counting.

All builders return :class:`signhull.conic.ConicProgram` objects and tag
them with enough metadata (``info``) to recover the estimator from a
solution vector.  Feature matrices never carry an explicit ones column;
the intercept is folded in when the design matrix is formed, so the
learned weight vector has length p + 1 when the intercept is on (the
intercept coefficient is regularized like any other weight).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import conic
from .conic import ProgramBuilder
from .errors import TooLargeError, ValidationError
from .hull import LossParams, phi_loss


@dataclass(frozen=True)
class Cardinality:
    """Hard budget: at most k margin violations."""
    k: float

    def describe(self) -> str:
        return f"k={self.k:g}"


@dataclass(frozen=True)
class Penalty:
    """Soft budget: each violation costs lam."""
    lam: float

    def describe(self) -> str:
        return f"lam={self.lam:g}"


@dataclass(frozen=True, eq=False)
class SvmDataset:
    """A labeled dataset.  ``features`` is n x p (raw coordinates only),
    ``labels`` is +-1.  ``intercept`` controls whether a leading ones
    column is folded into the design matrix."""

    features: np.ndarray
    labels: np.ndarray
    intercept: bool = True

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=float)
        if feats.ndim != 2:
            raise ValidationError("features must be a 2-D array")
        if labels.shape != (feats.shape[0],):
            raise ValidationError("labels must match the number of rows")
        if not np.all(np.isfinite(feats)):
            raise ValidationError("features must be finite")
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValidationError("labels must be -1 or +1")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def p_tilde(self) -> int:
        return self.p + (1 if self.intercept else 0)

    @property
    def design_matrix(self) -> np.ndarray:
        """Rows a_i, with the ones column prepended when intercept is on."""
        if self.intercept:
            return np.hstack([np.ones((self.n, 1)), self.features])
        return self.features.copy()

    @property
    def signed_rows(self) -> np.ndarray:
        """Rows y_i * a_i; margins are signed_rows @ w."""
        return self.labels[:, None] * self.design_matrix

    def take(self, indices: np.ndarray) -> "SvmDataset":
        idx = np.asarray(indices)
        return SvmDataset(self.features[idx], self.labels[idx], self.intercept)

    def standardized(self) -> "SvmDataset":
        """Returns a copy with each feature column centered and scaled to
        unit standard deviation (constant columns are left centered)."""
        mu = self.features.mean(axis=0)
        sd = self.features.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        return SvmDataset((self.features - mu) / sd, self.labels,
                          self.intercept)


@dataclass(frozen=True)
class SubsetCollection:
    subsets: tuple[tuple[int, ...], ...]
    tag: str


def singleton_subsets(n: int) -> SubsetCollection:
    return SubsetCollection(tuple((i,) for i in range(n)), "singletons")


def pair_subsets(n: int) -> SubsetCollection:
    pairs = tuple((i, j) for i in range(n) for j in range(i + 1, n))
    return SubsetCollection(pairs, "pairs")


def subsets_up_to(n: int, kappa: int, limit: int = 100_000) -> SubsetCollection:
    """All nonempty subsets of [n] with size <= kappa, in lexicographic
    order grouped by size.  Guarded by a total-count cap."""
    import itertools
    from math import comb

    if kappa < 1:
        raise ValidationError("kappa must be at least 1")
    total = sum(comb(n, s) for s in range(1, min(kappa, n) + 1))
    if total > limit:
        raise TooLargeError(f"{total} subsets exceed the cap of {limit}")
    subsets = []
    for size in range(1, min(kappa, n) + 1):
        subsets.extend(itertools.combinations(range(n), size))
    return SubsetCollection(tuple(subsets), f"upto{kappa}")


def _check_mode(mode) -> None:
    if isinstance(mode, Cardinality):
        if not mode.k >= 0:
            raise ValidationError("cardinality budget must be nonnegative")
    elif isinstance(mode, Penalty):
        if not mode.lam >= 0:
            raise ValidationError("penalty weight must be nonnegative")
    else:
        raise ValidationError(f"unknown mode {mode!r}")


def _quad_row_coeffs(ai: np.ndarray, aj: np.ndarray,
                     wq: list[list[int]], p: int) -> dict[int, float]:
    """Coefficients, over the moment variables, of a_i' W a_j."""
    out: dict[int, float] = {}
    for k in range(p):
        for l in range(k + 1):
            var = wq[k][l]
            if k == l:
                coef = ai[k] * aj[k]
            else:
                coef = ai[k] * aj[l] + ai[l] * aj[k]
            if coef != 0.0:
                out[var] = out.get(var, 0.0) + coef
    return out


def build_conic_relaxation(ds: SvmDataset, subsets: SubsetCollection,
                           mode: Cardinality | Penalty) -> conic.ConicProgram:
    """Subset-strengthened moment relaxation of the 0-1-loss SVM.

    For every subset L the program carries a slack vector g >= 1 - A_L w
    and the order-(|L|+1) semidefinite block pairing sum_{i in L} z_i
    against the lifted residual matrix; one order-(p+1) block ties the
    moment matrix W to w.  Penalty mode prices sum z into the objective,
    cardinality mode caps it.  Order-2 blocks are left as semidefinite
    blocks here; apply :func:`signhull.conic.lower_small_psd` to rewrite
    them with rotated cones.
    """
    _check_mode(mode)
    n, p = ds.n, ds.p_tilde
    a = ds.signed_rows
    for subset in subsets.subsets:
        if not subset or any(not 0 <= i < n for i in subset):
            raise ValidationError(f"subset {subset} out of range")
        if list(subset) != sorted(set(subset)):
            raise ValidationError(f"subset {subset} must be strictly sorted")

    b = ProgramBuilder("svm-conic")
    w = b.new_vars(p, "w")
    wq: list[list[int]] = []
    for i in range(p):
        wq.append([b.new_var(f"W{i}_{j}") for j in range(i + 1)])
    z = b.new_vars(n, "z")

    b.add_objective({wq[i][i]: 1.0 for i in range(p)})
    if isinstance(mode, Penalty):
        b.add_objective({zi: mode.lam for zi in z})

    sqrt2 = math.sqrt(2.0)
    for subset in subsets.subsets:
        g = b.new_vars(len(subset), f"g[{','.join(map(str, subset))}]")
        b.add_nonneg(
            [({g[r]: 1.0, **{w[j]: a[i, j] for j in range(p)}}, -1.0)
             for r, i in enumerate(subset)],
            name=f"slack{subset}")
        rows = [conic.make_row({z[i]: 1.0 for i in subset})]
        for r, i in enumerate(subset):
            rows.append(conic.make_row({g[r]: -sqrt2}))
            for s, j in list(enumerate(subset))[:r + 1]:
                scale = 1.0 if r == s else sqrt2
                coeffs = {w[t]: -scale * (a[i, t] + a[j, t]) for t in range(p)}
                for var, coef in _quad_row_coeffs(a[i], a[j], wq, p).items():
                    coeffs[var] = coeffs.get(var, 0.0) + scale * coef
                rows.append(conic.make_row(coeffs, scale))
        b.add_block(conic.psd_cone(len(subset) + 1), rows,
                    name=f"lift{subset}")

    rows = [conic.make_row({}, 1.0)]
    for r in range(p):
        rows.append(conic.make_row({w[r]: sqrt2}))
        for s in range(r + 1):
            rows.append(conic.make_row(
                {wq[r][s]: 1.0 if r == s else sqrt2}))
    b.add_block(conic.psd_cone(p + 1), rows, name="moment")

    b.add_nonneg([({zi: 1.0}, 0.0) for zi in z]
                 + [({zi: -1.0}, 1.0) for zi in z], name="zbox")
    if isinstance(mode, Cardinality):
        b.add_nonneg([({zi: -1.0 for zi in z}, float(mode.k))],
                     name="cardinality")

    hyper = {"k": float(mode.k)} if isinstance(mode, Cardinality) \
        else {"lam": float(mode.lam)}
    return b.finalize(method=f"conic-{subsets.tag}", w_vars=w, z_vars=z,
                      mode=type(mode).__name__.lower(), **hyper)


def conic1_program(ds: SvmDataset, mode) -> conic.ConicProgram:
    """Singleton collection; the order-2 blocks become rotated cones, so
    the program needs no semidefinite cone beyond the moment block."""
    p = build_conic_relaxation(ds, singleton_subsets(ds.n), mode)
    lowered = conic.lower_small_psd(p)
    lowered.info.update(p.info, method="conic1")
    return lowered

def conic2_program(ds: SvmDataset, mode) -> conic.ConicProgram:
    """All-pairs collection, kept in semidefinite form (order-3 blocks)."""
    p = build_conic_relaxation(ds, pair_subsets(ds.n), mode)
    p.info.update(method="conic2")
    return p


def build_hinge(ds: SvmDataset, lam: float) -> conic.ConicProgram:
    """Classic soft-margin SVM: min ||w||^2 + lam * sum max(0, 1 - margin)."""
    if lam < 0:
        raise ValidationError("hinge weight must be nonnegative")
    n, p = ds.n, ds.p_tilde
    a = ds.signed_rows
    b = ProgramBuilder("svm-hinge")
    w = b.new_vars(p, "w")
    xi = b.new_vars(n, "xi")
    t = b.new_var("t")
    b.add_objective({t: 1.0, **{x: lam for x in xi}})
    b.add_rsoc_sq({t: 1.0}, ({}, 1.0), [{wi: 1.0} for wi in w], name="normsq")
    b.add_nonneg([({x: 1.0}, 0.0) for x in xi], name="slack-lb")
    b.add_nonneg(
        [({xi[i]: 1.0, **{w[j]: a[i, j] for j in range(p)}}, -1.0)
         for i in range(n)],
        name="margins")
    return b.finalize(method="hinge", w_vars=w, hyper_lam=float(lam),
                      mode="penalty", lam=float(lam))


def build_robust_l1(ds: SvmDataset, lam: float) -> conic.ConicProgram:
    """Hinge-loss SVM robust to feature perturbations bounded in the
    infinity norm by lam: min sum xi with y_i a_i'w - lam ||w||_1 >= 1 - xi_i.
    The absolute values are split as w = u - v with u, v >= 0."""
    if lam < 0:
        raise ValidationError("perturbation radius must be nonnegative")
    n, p = ds.n, ds.p_tilde
    a = ds.signed_rows
    b = ProgramBuilder("svm-robust-l1")
    u = b.new_vars(p, "u")
    v = b.new_vars(p, "v")
    xi = b.new_vars(n, "xi")
    b.add_objective({x: 1.0 for x in xi})
    b.add_nonneg([({x: 1.0}, 0.0) for x in u + v], name="split-lb")
    b.add_nonneg([({x: 1.0}, 0.0) for x in xi], name="slack-lb")
    rows = []
    for i in range(n):
        coeffs = {xi[i]: 1.0}
        for j in range(p):
            coeffs[u[j]] = a[i, j] - lam
            coeffs[v[j]] = -a[i, j] - lam
        rows.append((coeffs, -1.0))
    b.add_nonneg(rows, name="robust-margins")
    return b.finalize(method="robust-l1", u_vars=u, v_vars=v,
                      hyper_lam=float(lam), mode="penalty", lam=float(lam))


def decomposition_validity_margin(ds: SvmDataset,
                                  dvec: np.ndarray) -> float:
    """Smallest eigenvalue of I - A' Diag(dvec) A; the decomposition is
    valid when this is nonnegative (small negative tolerated)."""
    a = ds.signed_rows
    m = np.eye(ds.p_tilde) - a.T @ (np.asarray(dvec)[:, None] * a)
    return float(np.linalg.eigvalsh(m)[0])


def default_decomposition_dvec(ds: SvmDataset) -> np.ndarray:
    """Uniform weights scaled to the boundary of validity: d = c * 1 with
    c = 1 / lambda_max(A'A)."""
    a = ds.signed_rows
    top = float(np.linalg.eigvalsh(a.T @ a)[-1])
    if top <= 1e-12:
        return np.ones(ds.n)
    return np.full(ds.n, 1.0 / top)


VALIDITY_TOLERANCE = 1e-9


def build_decomposition_relaxation(ds: SvmDataset, dvec: np.ndarray,
                                   mode: Cardinality | Penalty
                                   ) -> conic.ConicProgram:
    """Separable perspective relaxation with fixed point weights.

    The objective splits ||w||^2 into the convex remainder
    w' (I - A' Diag(d) A) w plus, per point, the weighted perspective
    envelope of the residual 1 - y_i a_i'w.  Requires the remainder to be
    positive semidefinite (validity margin >= -1e-9).
    """
    _check_mode(mode)
    dvec = np.asarray(dvec, dtype=float)
    if dvec.shape != (ds.n,):
        raise ValidationError("weight vector length must match the dataset")
    if np.any(dvec < 0):
        raise ValidationError("point weights must be nonnegative")
    margin = decomposition_validity_margin(ds, dvec)
    if margin < -VALIDITY_TOLERANCE:
        raise ValidationError(
            f"invalid decomposition: I - A'Diag(d)A has eigenvalue {margin:.3e}")

    n, p = ds.n, ds.p_tilde
    a = ds.signed_rows
    remainder = np.eye(p) - a.T @ (dvec[:, None] * a)
    eigvals, eigvecs = np.linalg.eigh(remainder)
    factor = np.sqrt(np.maximum(eigvals, 0.0))[:, None] * eigvecs.T
    factor = factor[np.abs(factor).max(axis=1) > 1e-12]

    b = ProgramBuilder("svm-decomposition")
    w = b.new_vars(p, "w")
    z = b.new_vars(n, "z")
    s = b.new_var("s")
    obj = {s: 1.0}
    offset = -float(dvec.sum())
    linear = 2.0 * (a.T @ dvec)

    if factor.shape[0] > 0:
        b.add_rsoc_sq({s: 1.0}, ({}, 1.0),
                      [{w[j]: factor[r, j] for j in range(p)}
                       for r in range(factor.shape[0])],
                      name="remainder")
    else:
        b.add_nonneg([({s: 1.0}, 0.0)], name="remainder")

    for j in range(p):
        if linear[j] != 0.0:
            obj[w[j]] = obj.get(w[j], 0.0) + linear[j]

    for i in range(n):
        if dvec[i] == 0.0:
            b.add_box(z[i], 0.0, 1.0, name=f"zbox{i}")
            continue
        pos = b.new_var(f"pos{i}")
        neg = b.new_var(f"neg{i}")
        upos = b.new_var(f"upos{i}")
        uneg = b.new_var(f"uneg{i}")
        row = {pos: 1.0, neg: 1.0}
        for j in range(p):
            row[w[j]] = a[i, j]
        b.add_zero(row, -1.0, name=f"residual{i}")
        b.add_nonneg([({pos: 1.0}, 0.0), ({neg: -1.0}, 0.0)],
                     name=f"residual-signs{i}")
        b.add_rsoc_sq({upos: 1.0}, {z[i]: 1.0}, [{pos: 1.0}],
                      name=f"persp{i}")
        b.add_rsoc_sq({uneg: 1.0}, ({}, 1.0), [{neg: 1.0}],
                      name=f"sq{i}")
        b.add_box(z[i], 0.0, 1.0, name=f"zbox{i}")
        obj[upos] = dvec[i]
        obj[uneg] = dvec[i]

    if isinstance(mode, Penalty):
        for zi in z:
            obj[zi] = obj.get(zi, 0.0) + mode.lam
    else:
        b.add_nonneg([({zi: -1.0 for zi in z}, float(mode.k))],
                     name="cardinality")

    b.add_objective(obj, offset)
    hyper = {"k": float(mode.k)} if isinstance(mode, Cardinality) \
        else {"lam": float(mode.lam)}
    return b.finalize(method="decomposition", w_vars=w, z_vars=z,
                      mode=type(mode).__name__.lower(), **hyper)


def phi_objective(w: np.ndarray, ds: SvmDataset, dvec: np.ndarray,
                  lam: float) -> float:
    """||w||^2 plus the separable non-convex loss at each point:
    phi(1 - y_i a_i'w; d_i, lam).  Requires strictly positive weights."""
    w = np.asarray(w, dtype=float)
    dvec = np.asarray(dvec, dtype=float)
    if dvec.shape != (ds.n,):
        raise ValidationError("weight vector length must match the dataset")
    residuals = 1.0 - ds.signed_rows @ w
    total = float(w @ w)
    for i in range(ds.n):
        total += phi_loss(residuals[i], LossParams(d=dvec[i], lam=lam))
    return total


@dataclass(frozen=True, eq=False)
class Estimator:
    """A trained classifier: predictions are sign(a'w) on the design rows."""

    w: np.ndarray
    method: str
    hyper: dict = field(default_factory=dict)
    objective: float | None = None
    seed: int | None = None

    def to_json(self) -> str:
        return json.dumps({
            "schema": "signhull-estimator-v1",
            "method": self.method,
            "hyper": self.hyper,
            "w": [float(v) for v in np.asarray(self.w).ravel()],
            "objective": self.objective,
            "seed": self.seed,
        }, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "Estimator":
        data = json.loads(text)
        if data.get("schema") != "signhull-estimator-v1":
            raise ValidationError("unrecognized estimator schema")
        return Estimator(np.asarray(data["w"], dtype=float), data["method"],
                         dict(data.get("hyper", {})), data.get("objective"),
                         data.get("seed"))


def extract_estimator(program: conic.ConicProgram, solution) -> Estimator:
    """Reads the weight vector out of a solved model using the metadata
    the builders attach.  Models built with an absolute-value split
    (robust-l1) are recombined as w = u - v."""
    info = program.info
    hyper = {k: info[k] for k in ("lam", "k") if k in info}
    if "w_vars" in info:
        w = np.array([solution.x[i] for i in info["w_vars"]])
    elif "u_vars" in info:
        u = np.array([solution.x[i] for i in info["u_vars"]])
        v = np.array([solution.x[i] for i in info["v_vars"]])
        w = u - v
    else:
        raise ValidationError("program carries no estimator metadata")
    return Estimator(w, info.get("method", program.name), hyper,
                     float(solution.objective))


def misclassification_rate(w: np.ndarray, ds: SvmDataset) -> float:
    """Fraction of points with y_i a_i'w <= 0; ties count as errors, so
    the zero vector scores 1.0."""
    margins = ds.signed_rows @ np.asarray(w, dtype=float)
    return float(np.mean(margins <= 0.0))


def margin_violation_count(w: np.ndarray, ds: SvmDataset) -> int:
    """Number of points strictly inside the margin: y_i a_i'w < 1."""
    margins = ds.signed_rows @ np.asarray(w, dtype=float)
    return int(np.sum(margins < 1.0))
