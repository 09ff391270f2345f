"""Command-line front end.

Exit codes: 0 ok, 2 schema/input error, 3 I/O error, 4 ill-conditioned fit,
5 model/data mismatch, 6 solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, make_box, parse_floats
from .datasets import (
    ColumnMap,
    cycle_index_from_name,
    discover_cycles,
    load_column_map,
    load_cycle,
    write_cycle_csv,
)
from .errors import DataIOError, ECTMError, NonInvertibleError, SchemaError
from .evaluation import (
    PROFILES,
    REFERENCE_CELL,
    SynthSpec,
    check_model_dt,
    evaluate_cycle,
    export_profiles,
    synth_generate,
)
from .identify import DEFAULT_DEGREE, FitReport, fit_one_shot
from .model import LinearParams, Mode, PhysicalParams, Polynomial, invert_linear, params_to_linear

log = logging.getLogger("ectm")

EVAL_COLUMNS = ("cycle_index", "rmse", "max_abs_err", "pearson_r", "mode")


def _mkdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create {path}: {exc.strerror or exc}") from None
    return path


def _write_text(path: Path, text: str) -> Path:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc.strerror or exc}") from None
    return path


def _write_json(path: Path, obj) -> Path:
    return _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _column_map(args) -> ColumnMap:
    if args.map:
        return load_column_map(args.map)
    if args.q0 is None:
        raise SchemaError("give --map or --q0 (and optionally --soc0)")
    return ColumnMap.canonical(args.q0, args.soc0)


def report_document(report: FitReport) -> dict:
    doc = report.to_dict()
    try:
        doc["physical"] = invert_linear(report.theta, report.dt).to_dict()
    except NonInvertibleError as exc:
        doc["physical"] = {"error": str(exc)}
    return doc


def report_lines(report: FitReport) -> list:
    lines = [f"theta_{j}={x!r}" for j, x in enumerate(report.coef, start=1)]
    lines += [
        f"rmse_train={report.rmse_train!r}",
        f"condition_number={report.condition_number!r}",
        f"consistency={report.consistency!r}",
        f"residual_norm={report.residual_norm!r}",
        f"solver={report.solver.value}",
        f"base_cycle={report.base_cycle}",
        f"dt={report.dt!r}",
    ]
    if report.active_constraints:
        lines.append("active_constraints=" + ",".join(str(j + 1) for j in sorted(report.active_constraints)))
    try:
        inv = invert_linear(report.theta, report.dt)
        lines += [f"r_t={inv.r_t!r}", f"c_t={inv.c_t!r}"]
        lines += [f"physical_issue={msg}" for msg in inv.issues]
    except NonInvertibleError as exc:
        lines.append(f"physical_issue={exc}")
    return lines


def eval_table(results) -> str:
    head = f"{'cycle':>7} {'rmse_c':>12} {'max_abs_c':>12} {'pearson_r':>10}  mode"
    rows = [
        f"{r.cycle_index:>7d} {r.rmse:>12.6f} {r.max_abs_err:>12.6f} {r.pearson_r:>10.6f}  {r.mode.value}"
        for r in results
    ]
    return "\n".join([head] + rows)


def write_eval_csv(results, path: Path) -> Path:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EVAL_COLUMNS)
            for r in results:
                w.writerow([repr(v) if isinstance(v, float) else v for v in r.row().values()])
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc.strerror or exc}") from None
    return path


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def verify_manifest(path) -> list:
    """Return a list of problems; empty when every listed file hashes as recorded."""
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    problems = []
    for entry in doc["files"]:
        target = path.parent / entry["path"]
        if not target.exists():
            problems.append(f"missing {entry['path']}")
        elif sha256(target) != entry["sha256"]:
            problems.append(f"hash mismatch {entry['path']}")
    return problems


# -- subcommands -------------------------------------------------------------


def cmd_ingest(args) -> int:
    cmap = load_column_map(args.map)
    out = _mkdir(Path(args.out_dir))
    if args.cycle and len(args.cycle) != len(args.inputs):
        raise SchemaError("--cycle must be given once per input file")
    for n, src in enumerate(args.inputs):
        idx = args.cycle[n] if args.cycle else cycle_index_from_name(src)
        cycle, report = load_cycle(src, cmap, idx, args.dt)
        dest = write_cycle_csv(cycle, out / f"cycle_{idx:04d}.csv")
        print(f"file={src}")
        print(f"cycle={idx}")
        print(f"output={dest}")
        print(f"samples={len(cycle)}")
        for line in report.lines():
            print(line)
    return 0


def cmd_identify(args) -> int:
    cmap = _column_map(args)
    idx = args.cycle_index if args.cycle_index is not None else cycle_index_from_name(args.cycle)
    cycle, _ = load_cycle(args.cycle, cmap, idx, args.dt)
    box = make_box(args.box_lower, args.box_upper, args.degree + 4)
    report = fit_one_shot(cycle, args.degree, box, tol=args.tol, max_iter=args.max_iter)
    for line in report_lines(report):
        print(line)
    if args.out:
        out = Path(args.out)
        _mkdir(out.parent)
        _write_json(out, report_document(report))
        print(f"report={out}")
    return 0


def load_report(path) -> FitReport:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not a JSON report ({exc})") from None
    try:
        return FitReport.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ECTMError):
            raise
        raise SchemaError(f"{path}: malformed fit report ({exc})") from None


def cmd_predict(args) -> int:
    report = load_report(args.model)
    cmap = _column_map(args)
    out = _mkdir(Path(args.out_dir))
    results, pairs = [], []
    for src in args.cycles:
        cycle, _ = load_cycle(src, cmap, cycle_index_from_name(src), args.dt)
        check_model_dt(report.dt, cycle)
        res = evaluate_cycle(cycle, report.theta, args.mode)
        results.append(res)
        pairs.append((cycle, res.prediction))
    print(eval_table(results))
    print(f"eval_csv={write_eval_csv(results, out / 'eval.csv')}")
    print(f"profiles={export_profiles(pairs, out / 'profiles.csv')}")
    return 0


def cmd_run(args) -> int:
    cfg = RunConfig.from_file(args.config)
    cmap = load_column_map(cfg.column_map)
    files = discover_cycles(cfg.dataset)
    out = _mkdir(cfg.output_dir)
    cycles_dir = _mkdir(out / "cycles")
    profiles_dir = _mkdir(out / "profiles")
    written = []

    def load(idx, dt):
        if idx not in files:
            raise DataIOError(f"no CSV for cycle {idx} in {cfg.dataset}")
        cycle, ingest = load_cycle(files[idx], cmap, idx, dt)
        written.append(("cycle", write_cycle_csv(cycle, cycles_dir / f"cycle_{idx:04d}.csv")))
        for w in ingest.warnings:
            log.warning("cycle %d: %s", idx, w)
        return cycle

    base = load(cfg.base_cycle, cfg.resample_dt)
    report = fit_one_shot(base, cfg.degree, cfg.box, tol=cfg.tol, max_iter=cfg.max_iter)
    written.append(("fit_report", _write_json(out / "fit_report.json", report_document(report))))
    for line in report_lines(report):
        print(line)

    base_eval = evaluate_cycle(base, report.theta, cfg.mode)
    profiles = [(base, base_eval.prediction)]
    results, failures = [], []
    for idx in cfg.eval_cycles:
        try:
            cycle = load(idx, report.dt)
            check_model_dt(report.dt, cycle)
            res = evaluate_cycle(cycle, report.theta, cfg.mode)
        except ECTMError as exc:
            failures.append(exc)
            print(f"error: cycle {idx}: {exc}", file=sys.stderr)
            continue
        results.append(res)
        profiles.append((cycle, res.prediction))

    written.append(("eval_table", write_eval_csv(results, out / "eval.csv")))
    for cycle, pred in profiles:
        dest = profiles_dir / f"profile_{cycle.cycle_index:04d}.csv"
        written.append(("profile", export_profiles([(cycle, pred)], dest)))

    manifest = {
        "base_cycle": cfg.base_cycle,
        "eval_cycles": list(cfg.eval_cycles),
        "failed_cycles": len(failures),
        "files": sorted(
            (
                {"kind": kind, "path": p.relative_to(out).as_posix(), "sha256": sha256(p)}
                for kind, p in written
            ),
            key=lambda e: e["path"],
        ),
    }
    manifest_path = _write_json(out / "manifest.json", manifest)
    print(eval_table(results))
    print(f"manifest={manifest_path}")
    return failures[0].exit_code if failures else 0


def cmd_synth(args) -> int:
    if args.theta:
        theta = LinearParams(parse_floats(args.theta))
    else:
        eta = Polynomial(parse_floats(args.eta)) if args.eta else REFERENCE_CELL.eta
        theta = params_to_linear(PhysicalParams(args.r_t, args.c_t, eta), args.dt)
    spec = SynthSpec(
        theta_true=theta,
        input_profile=args.profile,
        noise_sigma=args.noise,
        length=args.length,
        seed=args.seed,
        dt=args.dt,
        q0=args.q0,
        soc0=args.soc0,
        i_max=args.i_max,
        ambient_c=args.ambient,
        ambient_swing_c=args.ambient_swing,
        cycle_index=args.cycle_index,
    )
    cycle = synth_generate(spec)
    out = Path(args.out)
    _mkdir(out.parent)
    write_cycle_csv(cycle, out)
    side = {
        "theta_true": list(theta.theta),
        "degree": theta.degree,
        "profile": spec.input_profile,
        "noise_sigma": spec.noise_sigma,
        "length": spec.length,
        "seed": spec.seed,
        "dt": spec.dt,
        "q0_ah": spec.q0,
        "soc0": spec.soc0,
        "cycle_index": spec.cycle_index,
    }
    _write_json(out.with_suffix(".json"), side)
    _write_text(out.with_suffix(".map"), ColumnMap.canonical(spec.q0, spec.soc0).to_text())
    print(f"cycle={out}")
    print(f"truth={out.with_suffix('.json')}")
    print(f"map={out.with_suffix('.map')}")
    return 0


# -- argument parsing --------------------------------------------------------


def _add_cycle_source(p):
    p.add_argument("--map", help="column map file (supplies q0_ah and soc0)")
    p.add_argument("--q0", type=float, help="capacity in Ah, for canonical files without --map")
    p.add_argument("--soc0", type=float, default=0.0, help="initial SOC with --q0 (default 0)")
    p.add_argument("--dt", type=float, help="resample to this interval in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ectm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert raw CSV exports to canonical cycle files")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--map", required=True)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--cycle", type=int, action="append", help="cycle index per input, in order")
    p.add_argument("--dt", type=float)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("identify", help="one-shot fit of the thermal parameters")
    p.add_argument("cycle")
    _add_cycle_source(p)
    p.add_argument("--cycle-index", type=int)
    p.add_argument("--degree", type=int, default=DEFAULT_DEGREE)
    p.add_argument("--box-lower", help="comma-separated lower bounds (inf allowed)")
    p.add_argument("--box-upper", help="comma-separated upper bounds")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("predict", help="predict and score cycles with an identified model")
    p.add_argument("cycles", nargs="+")
    p.add_argument("--model", required=True, help="JSON report from identify")
    _add_cycle_source(p)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.FREE_RUNNING.value)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("run", help="ingest, identify, predict and export from a config file")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="generate a synthetic cycle with known parameters")
    p.add_argument("--out", required=True, help="canonical CSV path; .json and .map written alongside")
    p.add_argument("--profile", choices=PROFILES, default="random_steps")
    p.add_argument("--noise", type=float, default=0.0, help="temperature noise sigma, degC")
    p.add_argument("--length", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float, default=5.0)
    p.add_argument("--q0", type=float, default=2.0)
    p.add_argument("--soc0", type=float, default=0.5)
    p.add_argument("--i-max", type=float, default=4.0)
    p.add_argument("--ambient", type=float, default=25.0)
    p.add_argument("--ambient-swing", type=float, default=0.0)
    p.add_argument("--r-t", type=float, default=REFERENCE_CELL.r_t)
    p.add_argument("--c-t", type=float, default=REFERENCE_CELL.c_t)
    p.add_argument("--eta", help="heat polynomial coefficients, lowest power first")
    p.add_argument("--theta", help="linear parameters directly; overrides --r-t/--c-t/--eta")
    p.add_argument("--cycle-index", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ECTMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataIOError.exit_code


if __name__ == "__main__":
    sys.exit(main())
