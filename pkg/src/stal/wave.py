"""Reflected-wave simulator used as the ground-truth oracle.

Explicit central differences in space and time with zero values outside the
grid. The same leapfrog routine is used by the learned-physics step so a
learned coefficient equal to c**2 reproduces the simulator exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .grid import FieldState, GridSpec, Observation


def laplacian_terms(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Undivided second differences along columns (x) and rows (y), zero outside the grid."""
    p = np.pad(u, 1)
    uxx = p[1:-1, 2:] - 2.0 * u + p[1:-1, :-2]
    uyy = p[2:, 1:-1] - 2.0 * u + p[:-2, 1:-1]
    return uxx, uyy


def leapfrog(prev: np.ndarray, curr: np.ndarray, coef: float, spec: GridSpec) -> np.ndarray:
    """One step of u_tt = coef * (u_xx + u_yy).

    ``coef`` plays the role of c**2. Courant factors are formed as
    coef / (dx/dt)**2 so that c = 3, dt = 0.1, dx = 1 gives exactly 0.09.
    """
    kx = coef / (spec.dx / spec.dt) ** 2
    ky = coef / (spec.dy / spec.dt) ** 2
    uxx, uyy = laplacian_terms(curr)
    return 2.0 * curr - prev + (kx * uxx + ky * uyy)


@dataclass(frozen=True)
class WaveParams:
    spec: GridSpec
    c: float = 3.0
    amplitude: float = 0.34
    center: Optional[tuple[float, float]] = None  # (s_x, s_y); defaults to the grid centre
    sigma2_x: float = 0.5
    sigma2_y: float = 0.5

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("wave speed must be positive")
        if not (self.sigma2_x > 0 and self.sigma2_y > 0):
            raise ValueError("Gaussian widths must be positive")
        s = self.spec
        courant = self.c * s.dt * math.sqrt(1.0 / s.dx ** 2 + 1.0 / s.dy ** 2)
        if courant > 1.0 + 1e-12:
            raise ValueError(
                f"unstable configuration: c*dt*sqrt(1/dx^2+1/dy^2) = {courant:.4g} > 1 (CFL)"
            )
        if self.center is None:
            object.__setattr__(self, "center", ((s.width - 1) / 2.0, (s.height - 1) / 2.0))


@dataclass
class Trajectory:
    """Time-ordered field values, shape (T, height, width).

    ``observable`` marks cells that can be queried and evaluated; cells with
    gaps in ingested data are False and their values are stored as NaN.
    """

    values: np.ndarray
    spec: GridSpec
    params: Optional[WaveParams] = None
    observable: Optional[np.ndarray] = None
    states_cache: Optional[list] = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[1:] != self.spec.shape:
            raise ValueError(f"trajectory shape {self.values.shape} does not match grid {self.spec.shape}")
        if len(self.values) < 2:
            raise ValueError("a trajectory needs at least two states")
        if self.observable is None:
            self.observable = np.all(np.isfinite(self.values), axis=0)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def states(self) -> list[FieldState]:
        return [FieldState(t, v) for t, v in enumerate(self.values)]

    def value_range(self) -> tuple[float, float]:
        vals = self.values[:, self.observable]
        return float(np.nanmin(vals)), float(np.nanmax(vals))


def init_field(params: WaveParams) -> FieldState:
    s = params.spec
    sx, sy = params.center
    x = np.arange(s.width) * s.dx
    y = np.arange(s.height) * s.dy
    gx = (x - sx) ** 2 / (2.0 * params.sigma2_x)
    gy = (y - sy) ** 2 / (2.0 * params.sigma2_y)
    return FieldState(0, params.amplitude * np.exp(-(gy[:, None] + gx[None, :])))


def step(prev: FieldState, curr: FieldState, params: WaveParams) -> FieldState:
    if prev.t != curr.t - 1:
        raise ValueError(f"states must be consecutive, got t={prev.t} and t={curr.t}")
    prev.check(params.spec)
    curr.check(params.spec)
    return FieldState(curr.t + 1, leapfrog(prev.values, curr.values, params.c * params.c, params.spec))


def simulate(params: WaveParams, steps: int) -> Trajectory:
    """Integrate ``steps`` states starting from the Gaussian bump at rest."""
    if steps < 2:
        raise ValueError("simulate needs steps >= 2")
    coef = params.c * params.c
    out = np.empty((steps,) + params.spec.shape)
    out[0] = init_field(params).values
    # zero initial velocity: the state before t=0 equals the initial state
    prev, curr = out[0], out[0]
    for t in range(1, steps):
        out[t] = leapfrog(prev, curr, coef, params.spec)
        prev, curr = curr, out[t]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("simulation produced non-finite values")
    return Trajectory(out, params.spec, params)


def random_waves(spec: GridSpec, count: int, steps: int, seed: int, **kwargs) -> list[Trajectory]:
    """Waves started from uniformly random interior centres (seeded)."""
    rng = np.random.default_rng(seed)
    waves = []
    for _ in range(count):
        sx = rng.uniform(1.0, (spec.width - 2) * spec.dx)
        sy = rng.uniform(1.0, (spec.height - 2) * spec.dy)
        waves.append(simulate(WaveParams(spec, center=(sx, sy), **kwargs), steps))
    return waves


def query(traj: Trajectory, sites: Iterable[tuple[int, int]], t_range: range) -> list[Observation]:
    """Read the stored values at ``sites`` for every time in ``t_range``."""
    sites = list(sites)
    t_range = range(t_range.start, t_range.stop) if isinstance(t_range, range) else t_range
    if len(t_range) and (min(t_range) < 0 or max(t_range) >= len(traj)):
        raise IndexError(f"time range {t_range} outside trajectory of length {len(traj)}")
    for i, j in sites:
        if not traj.spec.contains(i, j):
            raise IndexError(f"site ({i},{j}) outside grid")
        if not traj.observable[i, j]:
            raise ValueError(f"site ({i},{j}) is not observable")
    return [Observation(i, j, t, float(traj.values[t, i, j])) for i, j in sites for t in t_range]
