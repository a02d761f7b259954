"""Kriging uncertainty maps and top-n site selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import gp
from .grid import GridSpec


@dataclass(frozen=True)
class KrigingField:
    mse: np.ndarray
    mean: np.ndarray
    model: gp.GpModel


def grid_points(spec: GridSpec, t: Optional[float] = None) -> np.ndarray:
    """Physical coordinates (y, x[, t]) of every cell, row-major."""
    ii, jj = np.meshgrid(np.arange(spec.height), np.arange(spec.width), indexing="ij")
    cols = [ii.ravel() * spec.dy, jj.ravel() * spec.dx]
    if t is not None:
        cols.append(np.full(spec.size, t))
    return np.column_stack(cols).astype(float)


def kriging_mse(model: gp.GpModel, spec: GridSpec, t: Optional[float] = None) -> KrigingField:
    """Prediction mean and MSE ``sigma^2 - c^T C^-1 c`` at every cell.

    The MSE is the latent posterior variance (no observation-noise term).
    For a spatio-temporal model pass the physical time ``t`` of the slice.
    """
    if model.dim != (2 if t is None else 3):
        raise ValueError(f"model has {model.dim} inputs; expected {'2 (i, j)' if t is None else '3 (i, j, t)'}")
    mean, var = gp.posterior(model, grid_points(spec, t), latent=True)
    return KrigingField(var.reshape(spec.shape), mean.reshape(spec.shape), model)


def fit_spatial(sites: Sequence[tuple[int, int]], values, spec: GridSpec,
                max_iter: int = 200) -> gp.GpModel:
    """GP over (i, j) site coordinates; length scales bounded to the grid size.

    ``values`` is one value per site, or a (T, n) array of time slices at
    the same sites. Slices are treated as independent replicates when
    fitting the hyperparameters; the model is conditioned on the last one.
    """
    pts = np.array([(i * spec.dy, j * spec.dx) for i, j in sites], dtype=float)
    y = np.atleast_2d(np.asarray(values, dtype=float))
    if y.shape[1] != len(pts):
        raise ValueError(f"{y.shape[1]} values per slice for {len(pts)} sites")
    scale = float(np.std(y)) or 1.0
    extent = (spec.height * spec.dy, spec.width * spec.dx)
    init = gp.Hyperparams((0.25 * extent[0], 0.25 * extent[1]), scale, 0.01 * scale)
    bounds = [(0.5 * spec.dy, 2.0 * extent[0]), (0.5 * spec.dx, 2.0 * extent[1])]
    hyper = gp.fit_hyperparams([(pts, row) for row in y], init=init, max_iter=max_iter,
                               length_bounds=bounds, min_noise=1e-4)
    return gp.build_model(pts, y[-1], hyper)


def select_top_n(field: KrigingField, n: int, exclude: Iterable[tuple[int, int]] = (),
                 candidates: Optional[np.ndarray] = None) -> list[tuple[int, int]]:
    """The ``n`` cells with the largest MSE, ties broken row-major.

    ``candidates`` is an optional boolean mask of selectable cells.
    """
    h, w = field.mse.shape
    allowed = np.ones((h, w), dtype=bool) if candidates is None else np.asarray(candidates, dtype=bool).copy()
    for i, j in exclude:
        allowed[i, j] = False
    flat = np.flatnonzero(allowed.ravel())
    if n > len(flat):
        raise ValueError(f"cannot select {n} sites from {len(flat)} candidate cells")
    # stable sort on -mse keeps row-major order among equal values
    order = flat[np.argsort(-field.mse.ravel()[flat], kind="stable")]
    return [(int(k // w), int(k % w)) for k in order[:n]]
