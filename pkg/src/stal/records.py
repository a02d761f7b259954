"""Plain-text file formats: trajectories, metrics, checkpoints, curves."""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import GridSpec
from .wave import Trajectory

log = logging.getLogger(__name__)

TRAJECTORY_HEADER = ["t", "i", "j", "value"]
METRICS_HEADER = ["step", "sampler", "physics", "n", "train_loss", "eval_mse", "lambda", "seconds"]
CHECKPOINT_MAGIC = "# stal-params v1"


class DataFormatError(ValueError):
    pass


def fmt(x: float) -> str:
    """17 significant digits, enough for an exact float round trip."""
    return format(float(x), ".17g")


# -- trajectories ------------------------------------------------------------

def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        vals = traj.values
        for t in range(vals.shape[0]):
            for i in range(vals.shape[1]):
                for j in range(vals.shape[2]):
                    v = vals[t, i, j]
                    if np.isfinite(v):
                        w.writerow([t, i, j, fmt(v)])


def ingest_grid_csv(path, spec: GridSpec) -> Trajectory:
    """Read a ``t,i,j,value`` file; cells with any gap become unobservable."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRAJECTORY_HEADER:
            raise DataFormatError(f"{path}: header must be {','.join(TRAJECTORY_HEADER)}, got {header}")
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataFormatError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            try:
                t, i, j = (int(v) for v in row[:3])
                value = float(row[3])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric cell in {row}") from None
            if t < 0 or not spec.contains(i, j):
                raise DataFormatError(f"{path}:{lineno}: (t={t}, i={i}, j={j}) outside the "
                                      f"{spec.height}x{spec.width} grid")
            if not math.isfinite(value):
                raise DataFormatError(f"{path}:{lineno}: non-finite value")
            if (t, i, j) in rows:
                raise DataFormatError(f"{path}:{lineno}: duplicate row for (t={t}, i={i}, j={j}) "
                                      f"first seen on row {rows[(t, i, j)][0]}")
            rows[(t, i, j)] = (lineno, value)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    steps = max(k[0] for k in rows) + 1
    values = np.full((steps,) + spec.shape, np.nan)
    for (t, i, j), (_, v) in rows.items():
        values[t, i, j] = v
    return Trajectory(values, spec)


# -- metrics -----------------------------------------------------------------

def write_metrics_csv(rows: Iterable[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([r["step"], r["sampler"], r["physics"], r["n"], fmt(r["train_loss"]),
                        fmt(r["eval_mse"]), "" if r["lambda"] is None else fmt(r["lambda"]),
                        "" if r.get("seconds") is None else fmt(r["seconds"])])


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_HEADER:
            raise DataFormatError(f"{path}: unexpected metrics header {reader.fieldnames}")
        out = []
        for r in reader:
            out.append({
                "step": int(r["step"]), "sampler": r["sampler"], "physics": r["physics"], "n": int(r["n"]),
                "train_loss": float(r["train_loss"]), "eval_mse": float(r["eval_mse"]),
                "lambda": float(r["lambda"]) if r["lambda"] else None,
                "seconds": float(r["seconds"]) if r["seconds"] else None,
            })
        return out


def append_jsonl(record: dict, path) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def write_kriging_csv(mse: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "mse"])
        for (i, j), v in np.ndenumerate(mse):
            w.writerow([i, j, fmt(v)])


# -- parameter checkpoints ---------------------------------------------------

def write_checkpoint(tensors: dict, path) -> None:
    """Versioned text checkpoint: per tensor a ``name d0 d1 ...`` line then its row-major values."""
    with open(path, "w") as fh:
        fh.write(CHECKPOINT_MAGIC + "\n")
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype=float)
            fh.write(" ".join([name] + [str(d) for d in arr.shape]) + "\n")
            fh.write(" ".join(fmt(v) for v in arr.ravel()) + "\n")


def read_checkpoint(path) -> dict[str, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: not a parameter checkpoint")
    out = {}
    body = lines[1:]
    if len(body) % 2:
        raise DataFormatError(f"{path}: truncated checkpoint")
    for k in range(0, len(body), 2):
        head = body[k].split()
        name, shape = head[0], tuple(int(d) for d in head[1:])
        vals = np.array([float(v) for v in body[k + 1].split()]) if body[k + 1].strip() else np.zeros(0)
        if vals.size != int(np.prod(shape)):
            raise DataFormatError(f"{path}: tensor {name} has {vals.size} values for shape {shape}")
        out[name] = vals.reshape(shape)
    return out


# -- curves ------------------------------------------------------------------

def emit_curves(metrics_files: Sequence[Path], out_dir) -> list[Path]:
    """Two-column ``step eval_mse`` files per run plus a combined table.

    Runs with differing step counts are reported and padded with NaN.
    """
    out_dir = Path(out_dir)
    if not metrics_files:
        log.warning("no metrics files found; no curves written")
        return []
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    series = {}
    for path in metrics_files:
        path = Path(path)
        name = path.parent.name
        rows = read_metrics_csv(path)
        series[name] = {r["step"]: r["eval_mse"] for r in rows}
        target = out_dir / f"{name}.dat"
        with open(target, "w") as fh:
            fh.write("# step eval_mse\n")
            for r in rows:
                fh.write(f"{r['step']} {fmt(r['eval_mse'])}\n")
        written.append(target)
    counts = {len(s) for s in series.values()}
    if len(counts) > 1:
        log.warning("runs have differing step counts: %s",
                    ", ".join(f"{k}={len(v)}" for k, v in series.items()))
    steps = sorted({s for v in series.values() for s in v})
    names = sorted(series)
    combined = out_dir / "combined.dat"
    with open(combined, "w") as fh:
        fh.write("# step " + " ".join(names) + "\n")
        for s in steps:
            fh.write(" ".join([str(s)] + [fmt(series[n].get(s, float("nan"))) for n in names]) + "\n")
    written.append(combined)
    return written
