"""Grid and observation types shared across the package, plus positional encoding."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

# Moore neighbourhood, clockwise from north-west. Row index i grows southwards.
NEIGHBOR_SLOTS = ("NW", "N", "NE", "E", "SE", "S", "SW", "W")
NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


@dataclass(frozen=True)
class GridSpec:
    height: int
    width: int
    dx: float = 1.0
    dy: float = 1.0
    dt: float = 0.1

    def __post_init__(self):
        if int(self.height) < 2 or int(self.width) < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.height}x{self.width}")
        if not (self.dx > 0 and self.dy > 0 and self.dt > 0):
            raise ValueError("dx, dy and dt must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.height * self.width

    def contains(self, i: int, j: int) -> bool:
        return 0 <= i < self.height and 0 <= j < self.width

    def cells(self) -> list[tuple[int, int]]:
        """All cells in row-major order."""
        return [(i, j) for i in range(self.height) for j in range(self.width)]


@dataclass(frozen=True)
class FieldState:
    t: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("field values must be a 2-D matrix")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"field at t={self.t} contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def check(self, spec: GridSpec) -> None:
        if self.values.shape != spec.shape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {spec.shape}")


@dataclass(frozen=True)
class Observation:
    i: int
    j: int
    t: int
    value: float

    def __post_init__(self):
        if self.i < 0 or self.j < 0 or self.t < 0:
            raise ValueError(f"negative index in observation {self}")
        if not np.isfinite(self.value):
            raise ValueError(f"non-finite observation value at ({self.i},{self.j},{self.t})")


@dataclass
class ObservationSet:
    """Growing training set of point observations.

    Observations are grouped into collection periods; each period covers one
    set of sites over at most ``window`` consecutive time steps.
    """

    window: int
    observations: list[Observation] = field(default_factory=list)
    current_sites: tuple[tuple[int, int], ...] = ()
    periods: list[tuple[tuple[tuple[int, int], ...], int, int]] = field(default_factory=list)

    def __post_init__(self):
        self._keys = {(o.i, o.j, o.t) for o in self.observations}
        if len(self._keys) != len(self.observations):
            raise ValueError("duplicate (i, j, t) observations")

    def __len__(self) -> int:
        return len(self.observations)

    def add_period(self, sites: Sequence[tuple[int, int]], observations: Iterable[Observation]) -> None:
        """Append one collection period; sites become the current sites."""
        obs = list(observations)
        sites = tuple((int(i), int(j)) for i, j in sites)
        if len(set(sites)) != len(sites):
            raise ValueError("duplicate sites in a collection period")
        site_set = set(sites)
        times = sorted({o.t for o in obs})
        if times and times[-1] - times[0] + 1 > self.window:
            raise ValueError(f"period spans {times[-1] - times[0] + 1} steps, window is {self.window}")
        for o in obs:
            if (o.i, o.j) not in site_set:
                raise ValueError(f"observation at ({o.i},{o.j}) is not one of the period's sites")
            key = (o.i, o.j, o.t)
            if key in self._keys:
                raise ValueError(f"duplicate observation {key}")
        for o in obs:
            self._keys.add((o.i, o.j, o.t))
        self.observations.extend(obs)
        self.current_sites = sites
        if times:
            self.periods.append((sites, times[0], times[-1] + 1))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (N, 3) integer (i, j, t) indices and the (N,) values."""
        if not self.observations:
            return np.zeros((0, 3), dtype=int), np.zeros(0)
        idx = np.array([(o.i, o.j, o.t) for o in self.observations], dtype=int)
        vals = np.array([o.value for o in self.observations], dtype=float)
        return idx, vals

    def shifted(self, dt_index: int) -> "ObservationSet":
        """Copy with every time index moved by ``dt_index``."""
        out = ObservationSet(window=self.window)
        for sites, t0, t1 in self.periods:
            obs = [Observation(o.i, o.j, o.t + dt_index, o.value)
                   for o in self.observations if (o.i, o.j) in set(sites) and t0 <= o.t < t1]
            out.add_period(sites, obs)
        return out


def positional_encoding(i: int, j: int, d: int = 4) -> np.ndarray:
    """Sinusoidal encoding of a grid cell.

    Each frequency ``w_k = 1 / 10000**(2k/d)`` contributes the block
    ``[sin(w_k i), cos(w_k i), sin(w_k j), cos(w_k j)]``; blocks are
    concatenated and truncated to length ``d``.
    """
    if not isinstance(d, (int, np.integer)) or d < 4 or d % 2:
        raise ValueError(f"encoding dimension must be an even integer >= 4, got {d}")
    if i < 0 or j < 0:
        raise ValueError("grid indices must be non-negative")
    out = np.empty(d)
    k = 0
    pos = 0
    while pos < d:
        w = 1.0 / 10000.0 ** (2.0 * k / d)
        block = (np.sin(w * i), np.cos(w * i), np.sin(w * j), np.cos(w * j))
        take = min(4, d - pos)
        out[pos:pos + take] = block[:take]
        pos += take
        k += 1
    return out


def encoding_table(spec: GridSpec, d: int = 4) -> np.ndarray:
    """Encodings for every cell, shape (height * width, d), row-major."""
    return np.stack([positional_encoding(i, j, d) for i, j in spec.cells()])


def neighbors(i: int, j: int, spec: GridSpec) -> list[Optional[tuple[int, int]]]:
    """8-connected neighbours in slot order NW, N, NE, E, SE, S, SW, W.

    Off-grid slots are returned as ``None`` so slot positions stay fixed.
    """
    if not spec.contains(i, j):
        raise ValueError(f"cell ({i},{j}) is outside the {spec.height}x{spec.width} grid")
    out = []
    for di, dj in NEIGHBOR_OFFSETS:
        ni, nj = i + di, j + dj
        out.append((ni, nj) if spec.contains(ni, nj) else None)
    return out


def neighbor_index(spec: GridSpec) -> np.ndarray:
    """(N, 8) flat neighbour indices; missing slots point at index N (a zero pad row)."""
    n = spec.size
    table = np.full((n, 8), n, dtype=int)
    for flat, (i, j) in enumerate(spec.cells()):
        for slot, nb in enumerate(neighbors(i, j, spec)):
            if nb is not None:
                table[flat, slot] = nb[0] * spec.width + nb[1]
    return table
