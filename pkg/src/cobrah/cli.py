"""Command-line entry point: ``cobrah simulate | fit | report``."""
from __future__ import annotations

import argparse
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .errors import CobrahError, ConfigError, EmptyHistory, OrderError, ParseError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _fail(code: int, message: str) -> int:
    print(f"cobrah: error: {message}", file=sys.stderr)
    return code


def cmd_simulate(config_path, overrides=(), seed=None, out=None) -> int:
    from .config import load_config, snapshot
    from .report import config_hash, file_digest, write_manifest, write_metrics
    from .simulation import run_experiment, worker_count

    overrides = list(overrides)
    if seed is not None:
        overrides.append(f"seed={seed}")
    if out is not None:
        overrides.append(f"output={out}")
    try:
        cfg, parser = load_config(config_path, overrides)
        from .cohort import load_cohort

        arms = load_cohort(cfg.cohort, cfg.seed)
        cfg.validate(len(arms))
        workers = worker_count()
    except (ConfigError, ParseError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    except ValueError as exc:
        return _fail(EXIT_USAGE, f"invalid configuration: {exc}")

    started = _now()
    t0 = time.perf_counter()
    try:
        bundle = run_experiment(cfg, arms, workers=workers)
        out_dir = Path(cfg.output)
        files = write_metrics(bundle, out_dir)
    except Exception as exc:  # surfaced to the shell as a runtime failure
        return _fail(EXIT_RUNTIME, str(exc))
    snap = snapshot(parser)
    manifest = {
        "version": __version__,
        "config": snap,
        "config_hash": config_hash(snap),
        "seeds": {
            "base": cfg.seed,
            "cohort": cfg.cohort.seed if cfg.cohort.seed is not None else cfg.seed,
            "replications": list(range(cfg.replications)),
        },
        "policies": list(bundle.policies),
        "arms": bundle.m,
        "capacity": bundle.capacity,
        "feedback": cfg.feedback,
        "started": started,
        "finished": _now(),
        "elapsed_seconds": round(time.perf_counter() - t0, 3),
        "outputs": {name: file_digest(out_dir / name) for name in files},
    }
    write_manifest(out_dir, manifest)
    print(f"wrote {len(files)} metric files to {out_dir}")
    return EXIT_OK


def cmd_fit(history_csv, out_path, grid_resolution=5, min_visits=0) -> int:
    from .cohort import fit_cohort, parse_history_csv, write_fitted_cohort
    from .simulation import worker_count

    path = Path(history_csv)
    if not path.is_file():
        return _fail(EXIT_USAGE, f"history file not found: {path}")
    if grid_resolution < 1:
        return _fail(EXIT_USAGE, "grid resolution must be at least 1")
    try:
        records = parse_history_csv(path)
        workers = worker_count()
    except (ParseError, OrderError, ConfigError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    records = [r for r in records if r.n_visits >= min_visits]
    if not records:
        return _fail(EXIT_USAGE, f"no patient histories in {path}")
    try:
        fits = fit_cohort(records, grid_resolution, workers=workers)
        write_fitted_cohort(out_path, fits)
    except EmptyHistory as exc:
        return _fail(EXIT_USAGE, str(exc))
    except Exception as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    print(f"fitted {len(fits)} patients -> {out_path}")
    return EXIT_OK


def cmd_report(run_dir) -> int:
    from .report import MANIFEST, render_charts

    run = Path(run_dir)
    if not run.is_dir():
        return _fail(EXIT_USAGE, f"run directory not found: {run}")
    order = ()
    manifest = run / MANIFEST
    if manifest.is_file():
        try:
            order = tuple(json.loads(manifest.read_text(encoding="utf-8")).get("policies", ()))
        except json.JSONDecodeError as exc:
            return _fail(EXIT_USAGE, f"{manifest}: {exc}")
    try:
        charts = render_charts(run, order)
    except ConfigError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except Exception as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    print(f"wrote {', '.join(charts)} to {run}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cobrah", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run an experiment and write metric CSVs")
    sim.add_argument("--config", required=True, help="INI experiment file")
    sim.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config value; policy keys as policy.ID.key=value")
    sim.add_argument("--seed", type=int, help="override the base seed")
    sim.add_argument("--out", help="override the output directory")

    fit = sub.add_parser("fit", help="grid-fit per-patient parameters from a visit history")
    fit.add_argument("--input", required=True, help="CSV with patient_id,period,visited,enrolled")
    fit.add_argument("--out", required=True, help="fitted-cohort CSV to write")
    fit.add_argument("--grid", type=int, default=5, help="lattice points per axis (default 5)")
    fit.add_argument("--min-visits", type=int, default=0, help="skip patients with fewer visits")

    rep = sub.add_parser("report", help="render SVG charts for a finished run")
    rep.add_argument("--run", required=True, help="output directory of a simulate run")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.overrides, args.seed, args.out)
        if args.command == "fit":
            return cmd_fit(args.input, args.out, args.grid, args.min_visits)
        return cmd_report(args.run)
    except CobrahError as exc:
        return _fail(EXIT_RUNTIME, str(exc))


if __name__ == "__main__":
    sys.exit(main())
