"""Homogeneous (learned-PDE) prediction and its fusion with the network output."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec
from .physics import PdeCoefficients
from .wave import leapfrog


@dataclass
class CouplingParams:
    W_c: np.ndarray  # (d_dyn, 2 * d_dyn), columns [heterogeneous | homogeneous]
    b_c: np.ndarray  # (d_dyn,)

    @classmethod
    def averaging(cls, d_dyn: int = 1) -> "CouplingParams":
        eye = np.eye(d_dyn)
        return cls(np.hstack([0.5 * eye, 0.5 * eye]), np.zeros(d_dyn))


def _coef(lam) -> float:
    if isinstance(lam, PdeCoefficients):
        return lam.laplacian_coefficient
    return float(lam)


def pde_step(s_prev: np.ndarray, s_curr: np.ndarray, lam, spec: GridSpec) -> np.ndarray:
    """Next field from the learned wave equation, zero outside the grid."""
    s_prev = np.asarray(s_prev, dtype=float)
    s_curr = np.asarray(s_curr, dtype=float)
    if s_prev.shape != spec.shape or s_curr.shape != spec.shape:
        raise ValueError(f"fields {s_prev.shape}, {s_curr.shape} do not match grid {spec.shape}")
    return leapfrog(s_prev, s_curr, _coef(lam), spec)


def couple(s_he, s_ho, params: CouplingParams) -> np.ndarray:
    """``relu([s_he, s_ho] @ W_c.T + b_c)``; works on single vectors or row batches."""
    s_he = np.asarray(s_he, dtype=float)
    s_ho = np.asarray(s_ho, dtype=float)
    if s_he.shape != s_ho.shape or s_he.shape[-1] != params.b_c.shape[0]:
        raise ValueError("coupling inputs must both have d_dyn trailing components")
    z = np.concatenate([s_he, s_ho], axis=-1) @ params.W_c.T + params.b_c
    return np.maximum(z, 0.0)
