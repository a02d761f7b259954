"""Nelder-Mead downhill simplex minimiser."""

from __future__ import annotations

from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np


class SimplexResult(NamedTuple):
    x: np.ndarray
    fun: float
    nit: int
    nfev: int
    stop: str


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    x0: Sequence[float],
    max_iter: int = 200,
    x_tol: float = 1e-8,
    f_tol: float = 1e-12,
    step: float | Sequence[float] = 0.5,
    simplex: Optional[np.ndarray] = None,
) -> SimplexResult:
    """Minimise ``objective`` from ``x0``.

    Uses reflection 1, expansion 2, contraction 0.5 and shrink 0.5. The
    initial simplex is ``x0`` plus ``step`` along each coordinate. Stops when
    the simplex diameter (max-norm distance to the best vertex) falls below
    ``x_tol``, when the spread of function values falls below ``f_tol``, or
    after ``max_iter`` iterations. Non-finite values met after the initial
    simplex are treated as +inf.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = x0.size
    if simplex is None:
        steps = np.broadcast_to(np.asarray(step, dtype=float), (n,))
        simplex = np.vstack([x0, x0 + np.diag(steps)])
    else:
        simplex = np.array(simplex, dtype=float)
        if simplex.shape != (n + 1, n):
            raise ValueError(f"simplex must have shape {(n + 1, n)}")

    nfev = 0

    def f(x):
        nonlocal nfev
        nfev += 1
        v = float(objective(x))
        return v if np.isfinite(v) else np.inf

    fvals = np.empty(n + 1)
    for k in range(n + 1):
        nfev += 1
        v = float(objective(simplex[k]))
        if not np.isfinite(v):
            raise ValueError(f"objective is not finite at initial simplex vertex {simplex[k]}")
        fvals[k] = v

    stop = "max_iter"
    nit = 0
    while True:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        if np.max(np.abs(fvals - fvals[0])) <= f_tol:
            stop = "f_tol"
            break
        if np.max(np.abs(simplex[1:] - simplex[0])) <= x_tol:
            stop = "x_tol"
            break
        if nit >= max_iter:
            break
        nit += 1

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + (centroid - worst)
        fr = f(xr)
        if fr < fvals[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = f(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = centroid + 0.5 * (worst - centroid)
            fc = f(xc)
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue
        best = simplex[0].copy()
        for k in range(1, n + 1):
            simplex[k] = best + 0.5 * (simplex[k] - best)
            fvals[k] = f(simplex[k])

    return SimplexResult(simplex[0].copy(), float(fvals[0]), nit, nfev, stop)
