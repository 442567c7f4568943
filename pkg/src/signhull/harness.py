"""Experiment drivers: bound benchmarking, cross-validated model
selection, the gap metric, and result tables.

Reproducibility contract: every run is a pure function of its
configuration.  Replications and grid points get pre-assigned substream
seeds, workers never share mutable state, and results are merged by task
index, so tables are identical under any thread count.  The only
volatile cells in a result CSV are the timestamp header and the
wall-time column; both are suppressed together when ``volatile=False``
(the CLI flag ``--no-timestamp``), which is what makes byte-identical
reruns possible.

Cross-validation protocol: train one model per grid point on the
training set, pick the one with the fewest misclassified validation
points (ties: smaller coefficient norm, then smaller grid index), and
report its misclassification rate on the test set.  Hyperparameter
grids are open-interval lattices: penalty weights beta/(1-beta) with
beta = j/(G+1), and cardinality budgets j*(n/2)/(G+1), j = 1..G.
"""

from __future__ import annotations

import csv
import datetime
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import mps, relax, solve, svm
from .datagen import GeneratedInstance, GenSpec, OutlierClass, generate, \
    load_csv, split
from .errors import SignhullError, ValidationError
from .solve import SolverConfig, SolveStatus
from .svm import Cardinality, Penalty, SvmDataset

BOUND_METHODS = ("exact", "conic1", "conic2", "decomposition", "hinge",
                 "robust-l1", "bigm-export")
CV_METHODS = ("hinge", "robust-l1", "conic1", "conic2", "hinge+conic1",
              "bayes")
LOWER_BOUND_METHODS = frozenset({"conic1", "conic2", "decomposition"})
GAP_ANOMALY_TOLERANCE = 1e-6


class UndefinedGapError(ValidationError):
    """The reference value is nonpositive, so the gap has no meaning."""


@dataclass(frozen=True)
class GapResult:
    value: float
    anomaly: bool


def gap(zeta_ref: float, zeta_relax: float) -> GapResult:
    """(ref - relax) / ref.  Negative values within solver noise are
    clamped to zero; anything below -1e-6 keeps its sign and raises the
    anomaly flag (a relaxation exceeding its reference is a bound bug)."""
    if not zeta_ref > 0.0:
        raise UndefinedGapError("gap needs a positive reference value")
    raw = float((zeta_ref - zeta_relax) / zeta_ref)
    if raw >= 0.0:
        return GapResult(raw, False)
    if raw >= -GAP_ANOMALY_TOLERANCE:
        return GapResult(0.0, False)
    return GapResult(raw, True)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a bound or cross-validation run depends on."""

    methods: tuple[str, ...]
    source: GenSpec | str
    mode_kind: str = "cardinality"
    hyper: float = 1.0
    grid_size: int = 100
    replications: int = 1
    seed: int = 0
    test_points: int = 10_000
    threads: int = 1
    tolerance: float = 1e-8
    time_limit: float = 60.0
    big_m: float = relax.DEFAULT_BIG_M

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.methods:
            raise ValidationError("at least one method required")
        known = set(BOUND_METHODS) | set(CV_METHODS)
        for m in self.methods:
            if m not in known:
                raise ValidationError(f"unknown method {m!r}")
        if self.grid_size < 1:
            raise ValidationError("grid_size must be at least 1")
        if self.replications < 1:
            raise ValidationError("replications must be at least 1")
        if self.threads < 1:
            raise ValidationError("threads must be at least 1")
        if self.mode_kind not in ("penalty", "cardinality"):
            raise ValidationError("mode_kind must be penalty or cardinality")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(tolerance=self.tolerance,
                            time_limit=self.time_limit)

    def to_json(self) -> str:
        if isinstance(self.source, GenSpec):
            source = {"kind": "generated", **self.source.to_dict()}
        else:
            source = {"kind": "csv", "path": str(self.source)}
        payload = {
            "schema": "signhull-experiment-v1",
            "methods": list(self.methods),
            "source": source,
            "mode_kind": self.mode_kind,
            "hyper": self.hyper,
            "grid_size": self.grid_size,
            "replications": self.replications,
            "seed": self.seed,
            "test_points": self.test_points,
            "threads": self.threads,
            "tolerance": self.tolerance,
            "time_limit": self.time_limit,
            "big_m": self.big_m,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValidationError(f"bad experiment config: {e}")
        if payload.get("schema") != "signhull-experiment-v1":
            raise ValidationError("unknown experiment config schema")
        src = payload["source"]
        if src.get("kind") == "generated":
            source: GenSpec | str = GenSpec.from_dict(src)
        elif src.get("kind") == "csv":
            source = str(src["path"])
        else:
            raise ValidationError("source kind must be generated or csv")
        fields = {k: payload[k] for k in (
            "mode_kind", "hyper", "grid_size", "replications", "seed",
            "test_points", "threads", "tolerance", "time_limit", "big_m")
            if k in payload}
        return ExperimentConfig(tuple(payload["methods"]), source, **fields)


@dataclass(frozen=True)
class BenchRow:
    """One result line: a method applied to one instance."""

    instance: str
    method: str
    status: str
    hyperparameter: str
    value: float | None
    gap: float | None
    gap_anomaly: bool
    wall_s: float
    train_rate: float | None
    val_rate: float | None
    test_rate: float | None
    detail: str = ""


CSV_COLUMNS = ("instance", "method", "status", "hyperparameter", "value",
               "gap", "gap_anomaly", "wall_s", "train_rate", "val_rate",
               "test_rate", "detail")


def _seed_from(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint64)[0])


def _mode_for(cfg: ExperimentConfig) -> Cardinality | Penalty:
    if cfg.mode_kind == "penalty":
        return Penalty(cfg.hyper)
    return Cardinality(cfg.hyper)


def _bound_instances(cfg: ExperimentConfig) -> list[tuple[str, SvmDataset]]:
    if isinstance(cfg.source, GenSpec):
        root = np.random.SeedSequence(cfg.seed)
        out = []
        for r, child in enumerate(root.spawn(cfg.replications)):
            spec = replace(cfg.source, seed=_seed_from(child))
            out.append((f"gen{r}", generate(spec).dataset))
        return out
    ds = load_csv(cfg.source)
    return [(Path(str(cfg.source)).stem, ds)]


def _solve_value(program, cfg: ExperimentConfig):
    sol = solve.solve(program, cfg.solver_config())
    if sol.status is SolveStatus.OPTIMAL:
        return float(sol.objective), sol, "optimal"
    return None, sol, sol.status.name.lower()


def _bound_task(cfg: ExperimentConfig, instance_id: str, ds: SvmDataset,
                method: str, out_dir) -> BenchRow:
    mode = _mode_for(cfg)
    hyper = mode.describe()
    start = time.perf_counter()
    value = None
    w = None
    status = "optimal"
    detail = ""
    try:
        if method == "exact":
            res = solve.exact_01_svm(ds, mode, cfg.solver_config())
            value, w = res.objective, res.w
        elif method in ("conic1", "conic2", "decomposition", "hinge",
                        "robust-l1"):
            if method in ("hinge", "robust-l1") \
                    and not isinstance(mode, Penalty):
                raise ValidationError(f"{method} rows need penalty mode")
            if method == "conic1":
                prog = svm.conic1_program(ds, mode)
            elif method == "conic2":
                prog = svm.conic2_program(ds, mode)
            elif method == "decomposition":
                dvec = svm.default_decomposition_dvec(ds)
                prog = svm.build_decomposition_relaxation(ds, dvec, mode)
            elif method == "hinge":
                prog = svm.build_hinge(ds, mode.lam)
            else:
                prog = svm.build_robust_l1(ds, mode.lam)
            value, sol, status = _solve_value(prog, cfg)
            w = _safe_w(prog, sol)
        elif method == "bigm-export":
            if out_dir is None:
                raise ValidationError("bigm-export needs an output directory")
            path = Path(out_dir) / f"{instance_id}-bigm.mps"
            prog = relax.build_bigm_model(ds, mode, cfg.big_m)
            path.write_text(mps.export_mps(prog))
            status, detail = "exported", str(path)
        else:
            raise ValidationError(f"method {method!r} not valid for bound"
                                  " runs")
    except SignhullError as e:
        if isinstance(e, ValidationError):
            raise
        status, detail = "failed", str(e)
    wall = time.perf_counter() - start
    train = svm.misclassification_rate(w, ds) if w is not None else None
    return BenchRow(instance_id, method, status, hyper, value, None, False,
                    wall, train, None, None, detail)


def _safe_w(program, sol) -> np.ndarray | None:
    if sol is None or sol.status is not SolveStatus.OPTIMAL:
        return None
    if "w_vars" not in program.info and "u_vars" not in program.info:
        return None
    return svm.extract_estimator(program, sol).w


def _attach_gaps(rows: list[BenchRow]) -> list[BenchRow]:
    exact_by_instance = {r.instance: r.value for r in rows
                         if r.method == "exact" and r.value is not None}
    out = []
    for r in rows:
        if r.method in LOWER_BOUND_METHODS and r.value is not None \
                and r.instance in exact_by_instance:
            ref = exact_by_instance[r.instance]
            try:
                g = gap(ref, r.value)
                r = replace(r, gap=g.value, gap_anomaly=g.anomaly)
            except UndefinedGapError:
                pass
        out.append(r)
    return out


def run_bound_experiment(cfg: ExperimentConfig,
                         out_dir=None) -> list[BenchRow]:
    """Bound quality per method and instance, with gaps taken against
    the enumeration oracle when the ``exact`` method is included."""
    instances = _bound_instances(cfg)
    tasks = [(inst_id, ds, m) for inst_id, ds in instances
             for m in cfg.methods]

    def run(task):
        inst_id, ds, method = task
        return _bound_task(cfg, inst_id, ds, method, out_dir)

    if cfg.threads == 1:
        rows = [run(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            rows = list(pool.map(run, tasks))
    return _attach_gaps(rows)


def hinge_lambda_grid(grid_size: int) -> list[float]:
    out = []
    for j in range(1, grid_size + 1):
        beta = j / (grid_size + 1)
        out.append(beta / (1.0 - beta))
    return out


def cardinality_grid(grid_size: int, n: int) -> list[float]:
    return [j * (n / 2) / (grid_size + 1) for j in range(1, grid_size + 1)]


@dataclass(frozen=True)
class _CvData:
    instance: str
    train: SvmDataset
    val: SvmDataset
    test: SvmDataset
    bayes_w: np.ndarray | None


def _cv_datasets(cfg: ExperimentConfig) -> list[_CvData]:
    out = []
    if isinstance(cfg.source, GenSpec):
        root = np.random.SeedSequence(cfg.seed)
        for r, child in enumerate(root.spawn(cfg.replications)):
            seeds = child.spawn(3)
            base = cfg.source
            train_inst = generate(replace(base, seed=_seed_from(seeds[0])))
            val_inst = generate(replace(base, seed=_seed_from(seeds[1])),
                                direction=train_inst.direction)
            test_spec = GenSpec(OutlierClass.NONE, cfg.test_points, base.p,
                                base.sigma, _seed_from(seeds[2]))
            test_inst = generate(test_spec, direction=train_inst.direction)
            out.append(_CvData(f"rep{r}", train_inst.dataset,
                               val_inst.dataset, test_inst.dataset,
                               train_inst.bayes_w))
    else:
        ds = load_csv(cfg.source)
        root = np.random.SeedSequence(cfg.seed)
        for r, child in enumerate(root.spawn(cfg.replications)):
            train, val, test = split(ds, (0.35, 0.35, 0.30),
                                     _seed_from(child))
            out.append(_CvData(f"rep{r}", train, val, test, None))
    return out


def _grid_tasks(method: str, train: SvmDataset, grid_size: int):
    """(description, builder) per grid point, in selection order."""
    if method == "hinge":
        return [(f"lam={lam:.6g}", lambda lam=lam: svm.build_hinge(train, lam))
                for lam in hinge_lambda_grid(grid_size)]
    if method == "robust-l1":
        return [(f"lam={lam:.6g}",
                 lambda lam=lam: svm.build_robust_l1(train, lam))
                for lam in hinge_lambda_grid(grid_size)]
    if method in ("conic1", "conic2"):
        build = svm.conic1_program if method == "conic1" \
            else svm.conic2_program
        return [(f"k={k:.6g}",
                 lambda k=k: build(train, Cardinality(k)))
                for k in cardinality_grid(grid_size, train.n)]
    if method == "hinge+conic1":
        half = grid_size // 2
        rest = grid_size - half
        tasks = [(f"lam={lam:.6g}",
                  lambda lam=lam: svm.build_hinge(train, lam))
                 for lam in hinge_lambda_grid(half)]
        tasks += [(f"k={k:.6g}",
                   lambda k=k: svm.conic1_program(train, Cardinality(k)))
                  for k in cardinality_grid(rest, train.n)]
        return tasks
    raise ValidationError(f"method {method!r} not valid for cv runs")


def _misclassified_count(w: np.ndarray, ds: SvmDataset) -> int:
    return int(np.count_nonzero(ds.signed_rows @ w <= 0.0))


def _cv_method_row(cfg: ExperimentConfig, data: _CvData, method: str,
                   pool: ThreadPoolExecutor | None) -> BenchRow:
    if method == "bayes":
        if data.bayes_w is None:
            raise ValidationError(
                "the bayes reference needs generated data")
        w = data.bayes_w
        return BenchRow(
            data.instance, method, "optimal", "-", None, None, False, 0.0,
            svm.misclassification_rate(w, data.train),
            _misclassified_count(w, data.val) / data.val.n,
            svm.misclassification_rate(w, data.test))

    tasks = _grid_tasks(method, data.train, cfg.grid_size)

    def run(item):
        desc, build = item
        start = time.perf_counter()
        try:
            prog = build()
            sol = solve.solve(prog, cfg.solver_config())
        except SignhullError as e:
            return desc, None, time.perf_counter() - start, str(e)
        wall = time.perf_counter() - start
        if sol.status is not SolveStatus.OPTIMAL:
            return desc, None, wall, sol.status.name.lower()
        return desc, svm.extract_estimator(prog, sol).w, wall, ""

    if pool is None:
        results = [run(t) for t in tasks]
    else:
        results = list(pool.map(run, tasks))

    total_wall = sum(wall for _, _, wall, _ in results)
    best = None
    failures = sum(1 for _, w, _, _ in results if w is None)
    for index, (desc, w, _, _) in enumerate(results):
        if w is None:
            continue
        key = (_misclassified_count(w, data.val),
               float(np.linalg.norm(w)), index)
        if best is None or key < best[0]:
            best = (key, desc, w)
    if best is None:
        return BenchRow(data.instance, method, "failed", "-", None, None,
                        False, total_wall, None, None, None,
                        f"all {len(tasks)} grid solves failed")
    _, desc, w = best
    detail = f"{failures} grid failures" if failures else ""
    return BenchRow(
        data.instance, method, "optimal", desc, None, None, False,
        total_wall, svm.misclassification_rate(w, data.train),
        _misclassified_count(w, data.val) / data.val.n,
        svm.misclassification_rate(w, data.test), detail)


def run_cv(cfg: ExperimentConfig) -> list[BenchRow]:
    """Cross-validated model selection: one row per method and
    replication, reporting the chosen hyperparameter, validation and
    test misclassification, and total wall time over the grid."""
    datasets = _cv_datasets(cfg)
    pool = ThreadPoolExecutor(max_workers=cfg.threads) \
        if cfg.threads > 1 else None
    try:
        rows = [_cv_method_row(cfg, data, method, pool)
                for data in datasets for method in cfg.methods]
    finally:
        if pool is not None:
            pool.shutdown()
    return rows


def _cell(value, volatile_ok: bool = True) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_rows_csv(rows, path, volatile: bool = True) -> None:
    """Emits the result table.  ``volatile=False`` drops the timestamp
    header and blanks the wall-time column so reruns (under any thread
    count) are byte-identical."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        if volatile:
            stamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
            fh.write(f"# generated {stamp}\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow([
                r.instance, r.method, r.status, r.hyperparameter,
                _cell(r.value), _cell(r.gap), _cell(r.gap_anomaly),
                _cell(r.wall_s) if volatile else "",
                _cell(r.train_rate), _cell(r.val_rate), _cell(r.test_rate),
                r.detail,
            ])


def format_rows_markdown(rows) -> str:
    """The result table as a Markdown pipe table (full column set)."""
    lines = ["| " + " | ".join(CSV_COLUMNS) + " |",
             "|" + "|".join(" --- " for _ in CSV_COLUMNS) + "|"]
    for r in rows:
        cells = [r.instance, r.method, r.status, r.hyperparameter,
                 _cell(r.value), _cell(r.gap), _cell(r.gap_anomaly),
                 _cell(r.wall_s), _cell(r.train_rate), _cell(r.val_rate),
                 _cell(r.test_rate), r.detail]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def format_rows_table(rows) -> str:
    """Aligned text table of the most useful columns."""
    headers = ["instance", "method", "status", "hyper", "value", "gap",
               "wall_s", "test_rate"]
    table = [headers]
    for r in rows:
        table.append([
            r.instance, r.method, r.status, r.hyperparameter,
            "" if r.value is None else f"{r.value:.6g}",
            "" if r.gap is None else f"{r.gap:.4f}",
            f"{r.wall_s:.2f}",
            "" if r.test_rate is None else f"{r.test_rate:.4f}",
        ])
    widths = [max(len(row[c]) for row in table)
              for c in range(len(headers))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w)
                               for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
