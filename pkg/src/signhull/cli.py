"""Command-line entry point.

Subcommands: ``datagen`` (synthetic instances to CSV and a JSON
sidecar), ``train`` (fit one model, write an estimator JSON), ``bound``
(lower-bound benchmark), ``cv`` (cross-validated model selection),
``hull`` (``rhs``, ``check``, ``socp-export`` on rank-one set inputs),
``export`` (model files in CBF or MPS form), and ``selftest`` (the
desk-scale invariant suites).

Exit codes: 0 success, 1 usage error, 2 solver or runtime failure,
3 validation or invariant failure.
"""

from __future__ import annotations

import json
import sys
import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import cbf, harness, hull, mps, relax, solve, svm
from .datagen import GenSpec, generate, load_csv, save_instance
from .errors import (SignhullError, SolveFailedError, UsageError,
                     ValidationError)
from .hull import HullPoint, RankOneSet, Sidedness
from .svm import Cardinality, Penalty

SYNOPSIS = ("usage: signhull {datagen,train,bound,cv,hull,export,selftest}"
            " ...")


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad flags through the usage exit path."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text: str) -> np.ndarray:
    try:
        values = [float(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise UsageError(f"expected a comma-separated number list, got"
                         f" {text!r}")
    if not values:
        raise UsageError("empty number list")
    return np.asarray(values, dtype=float)


def _mode_from(args) -> Cardinality | Penalty:
    if getattr(args, "lam", None) is not None \
            and getattr(args, "k", None) is not None:
        raise UsageError("give exactly one of --lam and --k")
    if getattr(args, "lam", None) is not None:
        return Penalty(args.lam)
    if getattr(args, "k", None) is not None:
        return Cardinality(args.k)
    raise UsageError("one of --lam (penalty) or --k (cardinality) required")


def _rank_one_inputs(args, need_point: bool):
    """(rset, x, z, t) from --file JSON or the inline flags."""
    d = x = z = None
    t = getattr(args, "t", None)
    sided = Sidedness.ONE_SIDED if getattr(args, "one_sided", False) \
        else Sidedness.TWO_SIDED
    if getattr(args, "file", None):
        try:
            data = json.loads(Path(args.file).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ValidationError(f"cannot read {args.file}: {e}")
        if "d" not in data:
            raise ValidationError("rank-one set file needs a 'd' entry")
        d = np.asarray(data["d"], dtype=float)
        if "x" in data:
            x = np.asarray(data["x"], dtype=float)
        if "z" in data:
            z = np.asarray(data["z"], dtype=float)
        if t is None:
            t = data.get("t")
        if "sidedness" in data:
            sided = Sidedness(data["sidedness"])
    if getattr(args, "d", None) is not None:
        d = args.d
    if getattr(args, "x", None) is not None:
        x = args.x
    if getattr(args, "z", None) is not None:
        z = args.z
    if d is None:
        raise UsageError("direction required: --d or a --file with 'd'")
    rset = RankOneSet(d, sided)
    if need_point and (x is None or z is None):
        raise UsageError("point required: --x and --z (or file entries)")
    return rset, x, z, t


def _rhs_value(rset: RankOneSet, x, z) -> float:
    if rset.sidedness is Sidedness.TWO_SIDED:
        return hull.eval_hull_rhs(rset, x, z)
    return hull.eval_one_sided_rhs(rset, x, z)


def cmd_hull_rhs(args) -> int:
    rset, x, z, _ = _rank_one_inputs(args, need_point=True)
    print(f"{_rhs_value(rset, x, z):g}")
    return 0


def cmd_hull_check(args) -> int:
    rset, x, z, t = _rank_one_inputs(args, need_point=True)
    if t is None:
        raise UsageError("--t (or a 't' file entry) required for check")
    rhs = _rhs_value(rset, x, z)
    member = hull.check_membership(rset, HullPoint(x, z, float(t)))
    print(f"rhs: {rhs:g}")
    print(f"member: {'true' if member else 'false'}")
    return 0


def cmd_hull_socp_export(args) -> int:
    rset, _, _, _ = _rank_one_inputs(args, need_point=False)
    b = hull.ProgramBuilder("hull-socp")
    x_vars = b.new_vars(rset.n, "x")
    z_vars = b.new_vars(rset.n, "z")
    t_var = b.new_var("t")
    rows = []
    for zv in z_vars:
        rows.append(({zv: 1.0}, 0.0))
        rows.append(({zv: -1.0}, 1.0))
    b.add_nonneg(rows, name="zbox")
    if rset.sidedness is Sidedness.TWO_SIDED:
        hull.build_two_sided_socp(rset, b, x_vars, z_vars, t_var)
    else:
        hull.build_one_sided_socp(rset, b, x_vars, z_vars, t_var)
    b.add_objective({t_var: 1.0})
    text = cbf.export_cbf(b.finalize("hull-socp"))
    out = Path(args.out)
    out.write_text(text)
    print(out)
    return 0


def cmd_datagen(args) -> int:
    spec = GenSpec(args.outlier_class, args.n, args.p, args.sigma, args.seed)
    inst = generate(spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = save_instance(inst, out_dir, args.name)
    print(csv_path)
    print(json_path)
    if args.plot:
        from . import plots
        png = out_dir / f"{args.name}.png"
        plots.dataset_scatter(inst.dataset, png, direction=inst.direction)
        print(png)
    return 0


_TRAIN_BUILDERS = {
    "hinge": lambda ds, mode: svm.build_hinge(ds, mode.lam),
    "robust-l1": lambda ds, mode: svm.build_robust_l1(ds, mode.lam),
    "conic1": svm.conic1_program,
    "conic2": svm.conic2_program,
}


def cmd_train(args) -> int:
    ds = load_csv(args.data)
    mode = _mode_from(args)
    if args.method in ("hinge", "robust-l1") \
            and not isinstance(mode, Penalty):
        raise UsageError(f"{args.method} takes --lam, not --k")
    program = _TRAIN_BUILDERS[args.method](ds, mode)
    config = solve.SolverConfig(tolerance=args.tol)
    sol = solve.solve(program, config)
    if sol.status is not solve.SolveStatus.OPTIMAL:
        raise SolveFailedError(f"training ended with {sol.status.value}"
                               f" (engine: {sol.stats.engine_status})")
    est = svm.extract_estimator(program, sol)
    est = replace(est, seed=args.seed)
    text = est.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(args.out)
    else:
        print(text)
    return 0


def _experiment_config(args, methods, needs_mode: bool) -> harness.ExperimentConfig:
    if args.data is not None:
        source: GenSpec | str = args.data
    else:
        if args.n is None or args.p is None:
            raise UsageError("either --data or --class/--n/--p/--sigma"
                             " required")
        source = GenSpec(args.outlier_class, args.n, args.p, args.sigma, 0)
    kwargs = dict(
        grid_size=args.grid, replications=args.replications, seed=args.seed,
        threads=args.threads, tolerance=args.tol,
        time_limit=args.time_limit)
    if needs_mode:
        mode = _mode_from(args)
        if isinstance(mode, Penalty):
            kwargs.update(mode_kind="penalty", hyper=mode.lam)
        else:
            kwargs.update(mode_kind="cardinality", hyper=mode.k)
    if getattr(args, "test_points", None) is not None:
        kwargs.update(test_points=args.test_points)
    if getattr(args, "big_m", None) is not None:
        kwargs.update(big_m=args.big_m)
    return harness.ExperimentConfig(tuple(methods), source, **kwargs)


def _emit_rows(rows, args) -> None:
    if args.out:
        harness.write_rows_csv(rows, args.out, volatile=not args.no_timestamp)
    if args.markdown:
        print(harness.format_rows_markdown(rows), end="")
    else:
        print(harness.format_rows_table(rows), end="")


def cmd_bound(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    cfg = _experiment_config(args, methods, needs_mode=True)
    export_dir = args.export_dir
    if export_dir is None and "bigm-export" in methods:
        export_dir = Path(args.out).parent if args.out else Path(".")
    rows = harness.run_bound_experiment(cfg, out_dir=export_dir)
    _emit_rows(rows, args)
    anomalies = [r for r in rows if r.gap_anomaly]
    if anomalies:
        print(f"bound invariant violated on {len(anomalies)} row(s)",
              file=sys.stderr)
        return 3
    return 0


def cmd_cv(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    cfg = _experiment_config(args, methods, needs_mode=False)
    rows = harness.run_cv(cfg)
    _emit_rows(rows, args)
    return 0


def cmd_export(args) -> int:
    ds = load_csv(args.data)
    mode = _mode_from(args)
    if args.method == "bigm":
        program = relax.build_bigm_model(ds, mode, args.big_m)
    else:
        if args.method in ("hinge", "robust-l1") \
                and not isinstance(mode, Penalty):
            raise UsageError(f"{args.method} takes --lam, not --k")
        program = _TRAIN_BUILDERS[args.method](ds, mode)
    if args.format == "cbf":
        text = cbf.export_cbf(program)
    else:
        text = mps.export_mps(program)
    Path(args.out).write_text(text)
    print(args.out)
    return 0


def _selftest_suites(seed: int):
    rng = np.random.default_rng(seed)

    def hull_membership():
        for _ in range(200):
            n = int(rng.integers(1, 6))
            d = rng.uniform(-1, 1, n)
            rset = RankOneSet(d)
            x = rng.uniform(-1, 1, n)
            z = rng.uniform(0, 1, n)
            rhs = hull.eval_hull_rhs(rset, x, z)
            if not np.isfinite(rhs):
                continue
            if not hull.check_membership(rset, HullPoint(x, z, rhs)):
                return f"boundary point rejected (d={d!r})"
            if rhs > 1e-6 and hull.check_membership(
                    rset, HullPoint(x, z, 0.9 * rhs - 1e-3)):
                return f"interior violation accepted (d={d!r})"
        return None

    def hull_convexity():
        for _ in range(200):
            n = int(rng.integers(1, 6))
            d = rng.uniform(-1, 1, n)
            rset = RankOneSet(d)
            p1 = (rng.uniform(-1, 1, n), rng.uniform(0, 1, n))
            p2 = (rng.uniform(-1, 1, n), rng.uniform(0, 1, n))
            r1 = hull.eval_hull_rhs(rset, *p1)
            r2 = hull.eval_hull_rhs(rset, *p2)
            if not (np.isfinite(r1) and np.isfinite(r2)):
                continue
            mid = hull.eval_hull_rhs(rset, (p1[0] + p2[0]) / 2,
                                     (p1[1] + p2[1]) / 2)
            if mid > (r1 + r2) / 2 + 1e-9:
                return f"midpoint convexity violated (d={d!r})"
        return None

    def phi_loss():
        zgrid = np.linspace(0.0, 1.0, 10_001)[1:]
        for _ in range(60):
            dcap = float(rng.uniform(0.1, 3.0))
            lam = float(rng.uniform(0.1, 3.0))
            params = hull.LossParams(dcap, lam)
            xval = float(rng.uniform(-1.0, 2.0 * params.threshold))
            want = hull.phi_loss(xval, params)
            xplus_sq = max(xval, 0.0) ** 2
            vals = lam * zgrid + dcap * xplus_sq * (1.0 - zgrid) / zgrid
            got = float(np.min(vals))
            if xplus_sq == 0.0:
                got = 0.0
            if abs(want - got) > 1e-4:
                return (f"phi mismatch at x={xval:.6f} d={dcap:.3f}"
                        f" lam={lam:.3f}: {want} vs {got}")
        return None

    def bound_validity():
        for trial in range(3):
            spec = GenSpec("none", 8, 2, 0.3, seed + trial)
            ds = generate(spec).dataset
            mode = Cardinality(1.0)
            exact = solve.exact_01_svm(ds, mode).objective
            for name, prog in (
                    ("conic1", svm.conic1_program(ds, mode)),
                    ("conic2", svm.conic2_program(ds, mode)),
                    ("decomposition", svm.build_decomposition_relaxation(
                        ds, svm.default_decomposition_dvec(ds), mode))):
                sol = solve.solve(prog)
                if sol.status is not solve.SolveStatus.OPTIMAL:
                    return f"{name} failed to solve"
                if sol.objective > exact + 1e-6 * (1.0 + abs(exact)):
                    return (f"{name} bound {sol.objective} exceeds exact"
                            f" {exact}")
        return None

    def format_round_trip():
        ds = generate(GenSpec("none", 6, 2, 0.3, seed)).dataset
        prog = svm.conic1_program(ds, Cardinality(1.0))
        text = cbf.export_cbf(prog)
        back = cbf.import_cbf(text)
        if not cbf.structurally_equal(prog, back):
            return "CBF round trip changed the program"
        bigm = relax.build_bigm_model(ds, Penalty(0.5))
        parsed = mps.parse_mps(mps.export_mps(bigm))
        if sorted(parsed.integers) != sorted(
                bigm.var_names[i] for i in bigm.integers):
            return "MPS integer markers wrong"
        return None

    return (("hull-membership", hull_membership),
            ("hull-convexity", hull_convexity),
            ("phi-loss", phi_loss),
            ("bound-validity", bound_validity),
            ("format-round-trip", format_round_trip))


def cmd_selftest(args) -> int:
    failures = 0
    for name, suite in _selftest_suites(args.seed):
        problem = suite()
        if problem is None:
            print(f"PASS {name}")
        else:
            print(f"FAIL {name}: {problem}")
            failures += 1
    return 3 if failures else 0


def _add_common(sub, *, out=False, data=False, gen=False, mode=False,
                grid=False, markdown=False):
    sub.add_argument("--seed", type=int, default=0,
                     help="root seed for anything random")
    sub.add_argument("--tol", type=float, default=1e-8,
                     help="solver tolerance")
    sub.add_argument("--threads", type=int, default=1,
                     help="worker threads (results do not depend on this)")
    if out:
        sub.add_argument("--out", help="output path")
    if data:
        sub.add_argument("--data", help="dataset CSV path")
    if gen:
        sub.add_argument("--class", dest="outlier_class", default="none",
                         choices=["none", "clustered", "spread"],
                         help="outlier pattern for generated data")
        sub.add_argument("--n", type=int, help="points per generated set")
        sub.add_argument("--p", type=int, help="feature dimension")
        sub.add_argument("--sigma", type=float, default=0.2,
                         help="within-class noise scale")
    if mode:
        sub.add_argument("--lam", type=float,
                         help="penalty weight (penalty mode)")
        sub.add_argument("--k", type=float,
                         help="violation budget (cardinality mode)")
    if grid:
        sub.add_argument("--grid", type=int, default=100,
                         help="hyperparameter grid size")
        sub.add_argument("--replications", type=int, default=1)
        sub.add_argument("--time-limit", type=float, default=60.0,
                         help="per-solve time limit in seconds")
        sub.add_argument("--no-timestamp", action="store_true",
                         help="suppress volatile cells for byte-stable CSVs")
    if markdown:
        sub.add_argument("--markdown", action="store_true",
                         help="print a Markdown table instead of plain text")


def build_parser() -> _Parser:
    parser = _Parser(prog="signhull", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = subs.add_parser("datagen", help="write a synthetic instance")
    _add_common(p, out=True, gen=True)
    p.add_argument("--name", default="instance")
    p.add_argument("--plot", action="store_true",
                   help="also write a scatter plot")
    p.set_defaults(func=cmd_datagen, out_required=True, n_required=True)

    p = subs.add_parser("train", help="fit one model, write estimator JSON")
    _add_common(p, out=True, data=True, mode=True)
    p.set_defaults(func=cmd_train, data_required=True)
    p.add_argument("--method", required=True,
                   choices=sorted(_TRAIN_BUILDERS))

    p = subs.add_parser("bound", help="lower-bound benchmark")
    _add_common(p, out=True, data=True, gen=True, mode=True, grid=True,
                markdown=True)
    p.add_argument("--methods", required=True,
                   help="comma list: " + ",".join(harness.BOUND_METHODS))
    p.add_argument("--big-m", type=float, default=relax.DEFAULT_BIG_M)
    p.add_argument("--export-dir", help="directory for bigm-export files")
    p.set_defaults(func=cmd_bound)

    p = subs.add_parser("cv", help="cross-validated model selection")
    _add_common(p, out=True, data=True, gen=True, grid=True, markdown=True)
    p.add_argument("--methods", required=True,
                   help="comma list: " + ",".join(harness.CV_METHODS))
    p.add_argument("--test-points", type=int, default=10_000)
    p.set_defaults(func=cmd_cv)

    p = subs.add_parser("hull", help="rank-one hull utilities")
    hull_subs = p.add_subparsers(dest="hull_command", parser_class=_Parser)
    for name, func, needs in (("rhs", cmd_hull_rhs, "point"),
                              ("check", cmd_hull_check, "point"),
                              ("socp-export", cmd_hull_socp_export, "d")):
        hp = hull_subs.add_parser(name)
        hp.add_argument("--file", help="JSON with d/x/z/t/sidedness")
        hp.add_argument("--d", type=_float_list, help="direction, comma list")
        hp.add_argument("--one-sided", action="store_true")
        if needs == "point":
            hp.add_argument("--x", type=_float_list)
            hp.add_argument("--z", type=_float_list)
        if name == "check":
            hp.add_argument("--t", type=float)
        if name == "socp-export":
            hp.add_argument("--out", required=True)
        hp.set_defaults(func=func)

    p = subs.add_parser("export", help="write a model file")
    _add_common(p, out=True, data=True, mode=True)
    p.add_argument("--method", required=True,
                   choices=sorted(_TRAIN_BUILDERS) + ["bigm"])
    p.add_argument("--format", required=True, choices=["cbf", "mps"])
    p.add_argument("--big-m", type=float, default=relax.DEFAULT_BIG_M)
    p.set_defaults(func=cmd_export, data_required=True, out_required=True)

    p = subs.add_parser("selftest", help="run the invariant suites")
    _add_common(p)
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError(SYNOPSIS)
        if not hasattr(args, "func"):
            raise UsageError(f"missing subcommand for {args.command!r}")
        if getattr(args, "data_required", False) and not args.data:
            raise UsageError("--data required")
        if getattr(args, "out_required", False) and not args.out:
            raise UsageError("--out required")
        if getattr(args, "n_required", False) and args.n is None:
            raise UsageError("--n and --p required")
        return args.func(args)
    except UsageError as e:
        print(SYNOPSIS, file=sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SolveFailedError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return 2
    except ValidationError as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return 3
    except SignhullError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
