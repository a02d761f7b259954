"""Command-line entry point.

    stal run --config exp.yaml [--seed N] [--matrix] [--out DIR] [--force]
    stal ingest --csv data.csv --height H --width W
    stal curves --in DIR

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import shutil
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

from . import __version__
from .active import ActiveConfig, oracle_from_config, run
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .forecast import FnConfig
from .grid import GridSpec
from .records import (DataFormatError, append_jsonl, emit_curves, fmt, ingest_grid_csv,
                      write_checkpoint, write_kriging_csv, write_metrics_csv)

log = logging.getLogger("stal")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
FAILED_MARKER = "FAILED"


class UsageError(Exception):
    pass


def _spec(cfg: ExperimentConfig) -> GridSpec:
    g = cfg.grid
    return GridSpec(g.height, g.width, g.dx, g.dy, g.dt)


def _load_trajectory(cfg: ExperimentConfig, base: Path):
    if cfg.data.source != "csv":
        return None
    path = Path(cfg.data.path)
    if not path.is_absolute():
        path = base / path
    if not path.exists():
        raise UsageError(f"dataset not found: {path}")
    return ingest_grid_csv(path, _spec(cfg))


def run_single(cfg: ExperimentConfig, out_dir: Path, base: Path = Path(".")) -> list[dict]:
    """One experiment into ``out_dir``; returns the metrics rows."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.yaml").write_text(dump_config(cfg))
    traj = _load_trajectory(cfg, base)
    oracle = oracle_from_config(cfg, traj)
    acfg = ActiveConfig.from_experiment(cfg, int(oracle.train.observable.sum()))
    f = cfg.forecast
    fn_cfg = FnConfig(d_pos=f.d_pos, d_lat=f.d_lat, d_fused=f.d_fused, d_hidden=f.d_hidden, lstm_mode=f.lstm_mode)
    rows: list[dict] = []
    lam_log = out_dir / "lambda.jsonl"
    lam_log.unlink(missing_ok=True)
    timing = out_dir / "timing.csv"
    timing.write_text("step,seconds\n")

    def on_step(m, result):
        rows.append(m.row(acfg, cfg.run.record_seconds))
        write_metrics_csv(rows, out_dir / "metrics.csv")
        with open(timing, "a") as fh:
            fh.write(f"{m.step},{fmt(m.seconds)}\n")
        if acfg.physics == "enabled" and result.coefficients:
            append_jsonl({"step": m.step, "lambda_used": m.lam, **result.coefficients[-1].record()}, lam_log)
        elif m.lam is not None:
            append_jsonl({"step": m.step, "lambda_used": m.lam, "form": "fixed"}, lam_log)
        if m.next_sites and acfg.sampler == "kriging" and result.kriging_fields:
            write_kriging_csv(result.kriging_fields[-1].mse, out_dir / f"kriging_step{m.step}.csv")
        if cfg.run.checkpoint_each_step and hasattr(result.learner, "model"):
            write_checkpoint(result.learner.model.params.tensors(), out_dir / f"params_step{m.step}.txt")

    result = run(acfg, oracle, fn_cfg=fn_cfg, epochs=f.epochs, lr=f.lr, on_step=on_step)
    write_checkpoint(result.learner.model.params.tensors(), out_dir / "params.txt")
    return rows


def matrix_configs(cfg: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    out = []
    for sampler in cfg.matrix.samplers:
        for rate in cfg.matrix.rates:
            for phys in cfg.matrix.physics:
                name = f"{sampler}-{round(rate * 100):d}pct-{phys}"
                out.append((name, cfg.with_changes(active={"sampler": sampler, "rate": rate, "n": None},
                                                   physics={"mode": phys})))
    return out


def _matrix_job(args):
    name, cfg, out_dir, base = args
    try:
        return name, run_single(cfg, out_dir, base), None
    except Exception as exc:  # reported per variant
        (out_dir / FAILED_MARKER).write_text(traceback.format_exc())
        return name, None, f"{type(exc).__name__}: {exc}"


def write_summary(results: list[tuple[str, ExperimentConfig, Optional[list[dict]]]], path: Path) -> None:
    steps = max((len(r) for _, _, r in results if r), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "sampler", "rate", "physics", "n"] + [f"step_{k}" for k in range(1, steps + 1)])
        for name, cfg, rows in results:
            rows = rows or []
            n = rows[0]["n"] if rows else ""
            mses = [fmt(r["eval_mse"]) for r in rows] + [""] * (steps - len(rows))
            w.writerow([name, cfg.active.sampler, fmt(cfg.active.rate), cfg.physics.mode, n] + mses)


def _prepare_dir(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise UsageError(f"output directory {path} already exists; use --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {args.config}")
    if args.seed is not None:
        cfg = cfg.with_changes(run={"seed": args.seed})
    run_id = cfg.run.id or Path(args.config).stem
    if args.seed is not None and cfg.run.id is None:
        run_id = f"{run_id}-seed{args.seed}"
    base = Path(args.config).resolve().parent
    out = Path(args.out) / run_id
    if cfg.data.source == "csv":
        _load_trajectory(cfg, base)  # fail fast on missing or malformed data
    _prepare_dir(out, args.force)

    if not args.matrix:
        try:
            rows = run_single(cfg, out, base)
        except Exception as exc:
            (out / FAILED_MARKER).write_text(traceback.format_exc())
            log.error("run failed: %s: %s (partial artifacts in %s)", type(exc).__name__, exc, out)
            return EXIT_RUNTIME
        log.info("wrote %d steps to %s", len(rows), out / "metrics.csv")
        return EXIT_OK

    variants = matrix_configs(cfg)
    (out / "manifest.yaml").write_text(dump_config(cfg))
    jobs = [(name, vcfg, out / name, base) for name, vcfg in variants]
    if cfg.run.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.run.workers) as pool:
            done = list(pool.map(_matrix_job, jobs))
    else:
        done = [_matrix_job(j) for j in jobs]
    results = []
    failed = 0
    for (name, vcfg), (_, rows, err) in zip(variants, done):
        if err:
            failed += 1
            log.error("variant %s failed: %s", name, err)
        results.append((name, vcfg, rows))
    write_summary(results, out / "summary.csv")
    log.info("matrix of %d runs written to %s", len(variants), out)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_ingest(args) -> int:
    spec = GridSpec(args.height, args.width)
    path = Path(args.csv)
    if not path.exists():
        raise UsageError(f"dataset not found: {path}")
    traj = ingest_grid_csv(path, spec)
    lo, hi = traj.value_range()
    missing = int((~traj.observable).sum())
    print(f"{path}: {len(traj)} steps on {spec.height}x{spec.width}, "
          f"{spec.size - missing} observable cells, {missing} unobservable, range [{lo:.6g}, {hi:.6g}]")
    return EXIT_OK


def cmd_curves(args) -> int:
    root = Path(args.input)
    if not root.is_dir():
        raise UsageError(f"not a directory: {root}")
    files = sorted(root.rglob("metrics.csv"))
    written = emit_curves(files, root / "curves")
    for p in written:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stal", description="Physics-coupled spatio-temporal active learning")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment or the sampler/rate/physics matrix")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--matrix", action="store_true")
    r.add_argument("--out", default="runs")
    r.add_argument("--force", action="store_true")
    r.set_defaults(func=cmd_run)

    i = sub.add_parser("ingest", help="validate and summarise a t,i,j,value grid CSV")
    i.add_argument("--csv", required=True)
    i.add_argument("--height", type=int, required=True)
    i.add_argument("--width", type=int, required=True)
    i.set_defaults(func=cmd_ingest)

    c = sub.add_parser("curves", help="write step/eval_mse curve files for every metrics.csv under a directory")
    c.add_argument("--in", dest="input", required=True)
    c.set_defaults(func=cmd_curves)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, DataFormatError) as exc:
        print(f"stal: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"stal: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
