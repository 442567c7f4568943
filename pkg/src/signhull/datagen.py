"""Seeded synthetic instances, label corruption, splits, and CSV I/O.

Generation model: a direction d is drawn componentwise uniform on
[-1, 1], the two class centroids sit at +-0.5 d / ||d|| (always one unit
apart), and each point is drawn from a Gaussian mixture that depends on
the outlier class:

``none``
    0.5 : N(alpha_1, sigma^2 I) labeled +1,
    0.5 : N(alpha_-1, sigma^2 I) labeled -1.
``clustered``
    0.45 / 0.45 as above, plus
    0.10 : N(10 alpha_-1, 0.001 sigma^2 I) labeled +1.
``spread``
    0.45 / 0.45 as above, plus
    0.05 : N(alpha_1, 100 sigma^2 I) labeled +1,
    0.05 : N(alpha_-1, 100 sigma^2 I) labeled -1.

Mixture components are drawn independently per point, in the order
listed above, from a single uniform draw.  The ideal linear classifier
for every class is w = (0, d), the hyperplane through the origin
perpendicular to the centroid axis.

Randomness: all draws run through numpy's PCG64 via SeedSequence.  The
instance seed spawns one child stream per point plus one leading stream
for the direction (child 0), so any prefix of the points is independent
of the total count and generation parallelizes reproducibly.  Gaussians
use ``Generator.standard_normal``; determinism is guaranteed per
implementation, and tests check distributional properties rather than
bit patterns.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SignhullError, ValidationError
from .svm import SvmDataset

MAX_DIRECTION_RETRIES = 100


class DegenerateDirectionError(SignhullError):
    """Every retry produced a zero direction vector."""


class TauOutOfRangeError(ValidationError):
    """Flip probability outside [0, 0.5)."""


class BadFractionsError(ValidationError):
    """Split fractions are not positive or do not sum to one."""


class ParseError(ValidationError):
    """A CSV file failed to parse; the message names the row."""


class LabelDomainError(ParseError):
    """A label cell is outside {-1, 0, +1}."""


class OutlierClass(enum.Enum):
    NONE = "none"
    CLUSTERED = "clustered"
    SPREAD = "spread"


@dataclass(frozen=True)
class GenSpec:
    """Parameters of one synthetic dataset."""

    outlier_class: OutlierClass
    n: int
    p: int
    sigma: float
    seed: int

    def __post_init__(self):
        if not isinstance(self.outlier_class, OutlierClass):
            object.__setattr__(self, "outlier_class",
                               OutlierClass(self.outlier_class))
        if self.n < 1:
            raise ValidationError("n must be at least 1")
        if self.p < 1:
            raise ValidationError("p must be at least 1")
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive")

    def to_dict(self) -> dict:
        return {"outlier_class": self.outlier_class.value, "n": self.n,
                "p": self.p, "sigma": self.sigma, "seed": self.seed}

    @staticmethod
    def from_dict(d: dict) -> "GenSpec":
        return GenSpec(OutlierClass(d["outlier_class"]), int(d["n"]),
                       int(d["p"]), float(d["sigma"]), int(d["seed"]))


@dataclass(frozen=True, eq=False)
class GeneratedInstance:
    dataset: SvmDataset
    direction: np.ndarray
    bayes_w: np.ndarray
    spec: GenSpec


# Cumulative component boundaries per class: (threshold, label,
# center multiplier on alpha_sign, sigma multiplier).  alpha_sign picks
# which centroid: +1 -> alpha_1, -1 -> alpha_-1.
_MIXTURES = {
    OutlierClass.NONE: (
        (0.5, 1.0, 1, 1.0),
        (1.0, -1.0, -1, 1.0),
    ),
    OutlierClass.CLUSTERED: (
        (0.45, 1.0, 1, 1.0),
        (0.90, -1.0, -1, 1.0),
        (1.0, 1.0, -10, np.sqrt(0.001)),
    ),
    OutlierClass.SPREAD: (
        (0.45, 1.0, 1, 1.0),
        (0.90, -1.0, -1, 1.0),
        (0.95, 1.0, 1, 10.0),
        (1.0, -1.0, -1, 10.0),
    ),
}


def _draw_direction(stream: np.random.SeedSequence, p: int) -> np.ndarray:
    rng = np.random.default_rng(stream)
    for _ in range(MAX_DIRECTION_RETRIES):
        d = rng.uniform(-1.0, 1.0, size=p)
        if np.linalg.norm(d) > 0.0:
            return d
    raise DegenerateDirectionError(
        f"direction stayed zero after {MAX_DIRECTION_RETRIES} retries")


def generate(spec: GenSpec,
             direction: np.ndarray | None = None) -> GeneratedInstance:
    """Draws one dataset.  ``direction`` overrides the direction draw so
    several datasets (say train and an outlier-free test pool) can share
    the same ground truth; the per-point streams are unaffected."""
    streams = np.random.SeedSequence(spec.seed).spawn(spec.n + 1)
    if direction is None:
        d = _draw_direction(streams[0], spec.p)
    else:
        d = np.asarray(direction, dtype=float)
        if d.shape != (spec.p,):
            raise ValidationError("direction length must equal p")
        if not np.linalg.norm(d) > 0.0:
            raise DegenerateDirectionError("provided direction is zero")
    unit = d / np.linalg.norm(d)
    mixture = _MIXTURES[spec.outlier_class]

    feats = np.empty((spec.n, spec.p))
    labels = np.empty(spec.n)
    for i in range(spec.n):
        rng = np.random.default_rng(streams[i + 1])
        u = rng.random()
        for cutoff, label, alpha_mult, sigma_mult in mixture:
            if u < cutoff or cutoff == 1.0:
                center = 0.5 * alpha_mult * unit
                feats[i] = center + spec.sigma * sigma_mult \
                    * rng.standard_normal(spec.p)
                labels[i] = label
                break
    bayes_w = np.concatenate([[0.0], d])
    return GeneratedInstance(SvmDataset(feats, labels), d, bayes_w, spec)


def flip_labels(ds: SvmDataset, tau: float, seed: int) -> SvmDataset:
    """Independently negates each label with probability tau.  Flipping
    twice with the same seed restores the original labels."""
    if not 0.0 <= tau < 0.5:
        raise TauOutOfRangeError("tau must lie in [0, 0.5)")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    flips = rng.random(ds.n) < tau
    return SvmDataset(ds.features,
                      np.where(flips, -ds.labels, ds.labels), ds.intercept)


def split(ds: SvmDataset, fractions: tuple[float, float, float],
          seed: int) -> tuple[SvmDataset, SvmDataset, SvmDataset]:
    """Random train/validation/test partition.  Sizes are the floors of
    n times each fraction, with the remainder assigned to train."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise BadFractionsError("three positive fractions required")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractionsError("fractions must sum to 1")
    n = ds.n
    n_val = int(n * fractions[1])
    n_test = int(n * fractions[2])
    n_train = n - n_val - n_test
    perm = np.random.default_rng(np.random.SeedSequence(seed)).permutation(n)
    return (ds.take(perm[:n_train]),
            ds.take(perm[n_train:n_train + n_val]),
            ds.take(perm[n_train + n_val:]))


def save_csv(ds: SvmDataset, path) -> None:
    """Writes `label,f1,...,fp` rows.  Labels are stored as -1/+1 and
    features with full round-trip precision."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{j + 1}" for j in range(ds.p)])
        for i in range(ds.n):
            writer.writerow([int(ds.labels[i])]
                            + [repr(float(v)) for v in ds.features[i]])


def load_csv(path, intercept: bool = True) -> SvmDataset:
    """Reads the schema written by :func:`save_csv`.  Labels 0/1 are
    accepted and mapped to -1/+1.  The intercept column is never stored;
    it is added when models are built."""
    path = Path(path)
    try:
        with path.open("r", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise ParseError(f"{path}: {e.strerror or e}")
    rows = [r for r in rows if r]
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = rows[0]
    if not header or header[0].strip() != "label":
        raise ParseError(f"{path}: first header cell must be 'label'")
    p = len(header) - 1
    if p < 1:
        raise ParseError(f"{path}: no feature columns")
    feats = np.empty((len(rows) - 1, p))
    labels = np.empty(len(rows) - 1)
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != p + 1:
            raise ParseError(f"{path}: row {r} has {len(row)} cells,"
                             f" expected {p + 1}")
        try:
            raw = float(row[0])
        except ValueError:
            raise ParseError(f"{path}: row {r} has a non-numeric label")
        if raw in (-1.0, 1.0):
            labels[r - 2] = raw
        elif raw == 0.0:
            labels[r - 2] = -1.0
        else:
            raise LabelDomainError(
                f"{path}: row {r} label {row[0]!r} not in {{-1, 0, +1}}")
        for c, cell in enumerate(row[1:]):
            try:
                feats[r - 2, c] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: row {r}, column {c + 2} is not a number")
    if not np.all(np.isfinite(feats)):
        raise ParseError(f"{path}: non-finite feature values")
    return SvmDataset(feats, labels, intercept)


def save_instance(inst: GeneratedInstance, out_dir, name: str = "instance"
                  ) -> tuple[Path, Path]:
    """Writes ``<name>.csv`` (the dataset) and ``<name>.json`` (the
    generation spec, direction, and ideal classifier) under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    json_path = out_dir / f"{name}.json"
    save_csv(inst.dataset, csv_path)
    payload = {
        "schema": "signhull-instance-v1",
        "spec": inst.spec.to_dict(),
        "direction": [float(v) for v in inst.direction],
        "bayes_w": [float(v) for v in inst.bayes_w],
    }
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path
