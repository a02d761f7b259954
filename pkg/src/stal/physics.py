"""PDE coefficient estimation from Gaussian-process derivatives.

A GP is fitted to the observed (i, j, t) -> value data; the derivatives
appearing in a linear PDE are read off its derivative posteriors at the
observed interior points, and the coefficients minimise the
variance-weighted sum of squared residuals.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from . import gp
from .grid import GridSpec, ObservationSet
from .optimize import nelder_mead

log = logging.getLogger(__name__)

RESIDUAL_DELTA = 1e-8

# name -> (input dimension, order); inputs are ordered (i, j, t), i.e. (y, x, t)
DERIVATIVES = {
    "u": (None, 0),
    "u_y": (0, 1),
    "u_x": (1, 1),
    "u_t": (2, 1),
    "u_yy": (0, 2),
    "u_xx": (1, 2),
    "u_tt": (2, 2),
}


class DegenerateDataError(ValueError):
    """The data carry no variation, so PDE coefficients are unidentifiable."""


@dataclass(frozen=True)
class PdeForm:
    """A PDE linear in its coefficients.

    Each term is a sum of derivatives sharing one coefficient; the term at
    ``lhs_index`` has coefficient 1 and is balanced by the others.
    """

    name: str
    terms: tuple[tuple[str, ...], ...]
    lhs_index: int = 0

    def __post_init__(self):
        terms = tuple(tuple(t) if not isinstance(t, str) else (t,) for t in self.terms)
        object.__setattr__(self, "terms", terms)
        if len(terms) < 2:
            raise ValueError("a PDE form needs a left-hand side and at least one term")
        if not 0 <= self.lhs_index < len(terms):
            raise ValueError("lhs_index out of range")
        for t in terms:
            for d in t:
                if d not in DERIVATIVES:
                    raise ValueError(f"unknown derivative {d!r}; choose from {sorted(DERIVATIVES)}")

    @property
    def coefficient_count(self) -> int:
        return len(self.terms) - 1

    @property
    def rhs(self) -> list[tuple[str, ...]]:
        return [t for k, t in enumerate(self.terms) if k != self.lhs_index]

    def describe(self) -> str:
        lhs = "+".join(self.terms[self.lhs_index])
        rhs = " + ".join(f"l{k}*({'+'.join(t)})" for k, t in enumerate(self.rhs))
        return f"{lhs} = {rhs}"


WAVE = PdeForm("wave", (("u_tt",), ("u_xx", "u_yy")))
WAVE_ANISO = PdeForm("wave_aniso", (("u_tt",), ("u_xx",), ("u_yy",)))
FORMS = {"wave": WAVE, "wave_aniso": WAVE_ANISO}


def library_form(terms: Sequence[str], lhs: str = "u_tt") -> PdeForm:
    """``lhs = sum_k l_k * term_k`` with one coefficient per library term."""
    return PdeForm("library:" + ",".join(terms), ((lhs,),) + tuple((t,) for t in terms))


def get_form(spec) -> PdeForm:
    if isinstance(spec, PdeForm):
        return spec
    if isinstance(spec, str):
        if spec not in FORMS:
            raise ValueError(f"unknown PDE form {spec!r}; choose from {sorted(FORMS)} or give a term list")
        return FORMS[spec]
    return library_form(list(spec))


@dataclass(frozen=True)
class ResidualSample:
    point: tuple[int, int, int]
    derivative_means: np.ndarray
    derivative_vars: np.ndarray
    weight: float


@dataclass
class ResidualSamples:
    """Column-stored residual samples; iterating yields ResidualSample records.

    ``means``/``variances`` have one column per form term, the left-hand side
    included, in form order.
    """

    form: PdeForm
    points: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)

    def __iter__(self) -> Iterator[ResidualSample]:
        for k in range(len(self)):
            yield ResidualSample(tuple(int(v) for v in self.points[k]), self.means[k],
                                 self.variances[k], float(self.weights[k]))

    @property
    def lhs(self) -> np.ndarray:
        return self.means[:, self.form.lhs_index]

    @property
    def design(self) -> np.ndarray:
        keep = [k for k in range(len(self.form.terms)) if k != self.form.lhs_index]
        return self.means[:, keep]


@dataclass
class PdeCoefficients:
    lambda_: np.ndarray
    form: PdeForm
    ssre: float
    data_size: int = 0
    wls_lambda: Optional[np.ndarray] = None
    hyper: Optional[gp.Hyperparams] = field(default=None, repr=False)

    def __post_init__(self):
        self.lambda_ = np.atleast_1d(np.asarray(self.lambda_, dtype=float))
        if not np.all(np.isfinite(self.lambda_)) or not np.isfinite(self.ssre) or self.ssre < 0:
            raise ValueError("coefficients must be finite with non-negative SSRE")

    @property
    def laplacian_coefficient(self) -> float:
        """Single coefficient for the leapfrog step (mean of x/y coefficients for anisotropic forms)."""
        return float(np.mean(self.lambda_))

    def record(self) -> dict:
        return {
            "form": self.form.name,
            "lambda": [float(v) for v in self.lambda_],
            "ssre": float(self.ssre),
            "data_size": int(self.data_size),
        }

    def to_json(self) -> str:
        return json.dumps(self.record(), sort_keys=True)


def ssre(samples: ResidualSamples, lambda_) -> float:
    """Weighted sum of squared residuals ``w * (lhs - sum_k l_k term_k)**2``."""
    lam = np.atleast_1d(np.asarray(lambda_, dtype=float))
    if lam.size != samples.form.coefficient_count:
        raise ValueError(f"expected {samples.form.coefficient_count} coefficients, got {lam.size}")
    resid = samples.lhs - samples.design @ lam
    return float(np.sum(samples.weights * resid * resid))


def weighted_least_squares(samples: ResidualSamples) -> np.ndarray:
    """Closed-form minimiser of ``ssre`` for fixed weights."""
    a = samples.design
    w = samples.weights
    return np.linalg.solve(a.T @ (w[:, None] * a), a.T @ (w * samples.lhs))


def _physical(idx: np.ndarray, spec: GridSpec) -> np.ndarray:
    return idx * np.array([spec.dy, spec.dx, spec.dt])


def interior_mask(idx: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Points at least one cell from the boundary with observed time neighbours at the same site."""
    keys = {tuple(p) for p in idx.tolist()}
    inside = ((idx[:, 0] >= 1) & (idx[:, 0] <= spec.height - 2)
              & (idx[:, 1] >= 1) & (idx[:, 1] <= spec.width - 2))
    has_time = np.array([(i, j, t - 1) in keys and (i, j, t + 1) in keys for i, j, t in idx.tolist()],
                        dtype=bool)
    return inside & has_time


def check_spread(values: np.ndarray) -> None:
    if values.size == 0 or np.ptp(values) <= 1e-12:
        raise DegenerateDataError("observed values are constant; PDE coefficients are unidentifiable")


def _term_posterior(model: gp.GpModel, points: np.ndarray, name: str, spec: GridSpec, derivatives: str):
    dim, order = DERIVATIVES[name]
    if order == 0:
        return gp.posterior(model, points, latent=True)
    if derivatives == "stencil":
        step = (spec.dy, spec.dx, spec.dt)[dim]
        return gp.posterior_stencil(model, points, order, dim, step)
    return gp.posterior_derivative(model, points, order, dim)


def build_residual_samples(
    data: ObservationSet,
    form: PdeForm,
    model: gp.GpModel,
    spec: GridSpec,
    max_points: int = gp.MAX_POINTS,
    seed: int = 0,
    derivatives: str = "analytic",
) -> ResidualSamples:
    """Evaluate every form term at the observed interior points.

    The candidate points are the same seeded subsample the GP was fitted on.
    Weights are ``1 / (sum of term latent variances + delta)``, computed once.
    """
    if derivatives not in ("analytic", "stencil"):
        raise ValueError(f"derivatives must be 'analytic' or 'stencil', got {derivatives!r}")
    idx, vals = data.arrays()
    check_spread(vals)
    interior = interior_mask(idx, spec)
    keep = gp.subsample(len(vals), max_points, seed)
    keep = keep[interior[keep]]
    if len(keep) == 0:
        raise DegenerateDataError("no interior observations with temporal neighbours to evaluate the PDE at")
    pts = _physical(idx[keep].astype(float), spec)
    means = np.zeros((len(keep), len(form.terms)))
    variances = np.zeros_like(means)
    for k, term in enumerate(form.terms):
        for name in term:
            mu, var = _term_posterior(model, pts, name, spec, derivatives)
            means[:, k] += mu
            variances[:, k] += var
    weights = 1.0 / (variances.sum(axis=1) + RESIDUAL_DELTA)
    return ResidualSamples(form, idx[keep], means, variances, weights)


def physics_gp_init(values: np.ndarray, spec: GridSpec) -> gp.Hyperparams:
    scale = float(np.std(values)) or 1.0
    return gp.Hyperparams((spec.dy, spec.dx, 3.0 * spec.dt), scale, 1e-3 * scale)


def fit_field_gp(data: ObservationSet, spec: GridSpec, max_points: int = gp.MAX_POINTS,
                 seed: int = 0, max_iter: int = 200) -> gp.GpModel:
    idx, vals = data.arrays()
    check_spread(vals)
    steps = np.array([spec.dy, spec.dx, spec.dt])
    bounds = [(0.2 * s, 200.0 * s) for s in steps]
    return gp.fit(_physical(idx.astype(float), spec), vals, init=physics_gp_init(vals, spec),
                  max_iter=max_iter, max_points=max_points, seed=seed, length_bounds=bounds)


def estimate_coefficients(
    data: ObservationSet,
    form: PdeForm = WAVE,
    spec: Optional[GridSpec] = None,
    max_points: int = gp.MAX_POINTS,
    seed: int = 0,
    gp_iter: int = 200,
    max_iter: int = 200,
    derivatives: str = "analytic",
    model: Optional[gp.GpModel] = None,
) -> PdeCoefficients:
    """Fit a GP to the data and minimise the weighted SSRE with Nelder-Mead.

    Starts from all-ones coefficients. The result is checked against the
    closed-form weighted least-squares solution; if the simplex stopped
    short it is restarted from its best point.
    """
    spec = spec or GridSpec(2, 2)
    form = get_form(form)
    idx, vals = data.arrays()
    check_spread(vals)
    if len(np.unique(idx[:, 2])) < 3:
        raise DegenerateDataError("need at least three time steps to estimate time derivatives")
    if model is None:
        model = fit_field_gp(data, spec, max_points=max_points, seed=seed, max_iter=gp_iter)
    samples = build_residual_samples(data, form, model, spec, max_points=max_points,
                                     seed=seed, derivatives=derivatives)
    lam, f = minimise_ssre(samples, max_iter=max_iter)
    wls = weighted_least_squares(samples)
    log.info("physics: %s -> lambda=%s (wls %s), ssre=%.4g on %d samples",
             form.name, np.round(lam, 5), np.round(wls, 5), f, len(samples))
    return PdeCoefficients(lam, form, f, len(vals), wls, model.hyper)


def minimise_ssre(samples: ResidualSamples, max_iter: int = 200, restarts: int = 3,
                  rtol: float = 1e-3) -> tuple[np.ndarray, float]:
    n = samples.form.coefficient_count
    x0 = np.ones(n)
    f0 = ssre(samples, x0)
    obj = lambda lam: ssre(samples, lam)  # noqa: E731
    res = nelder_mead(obj, x0, max_iter=max_iter, x_tol=1e-10, f_tol=1e-16 * max(f0, 1e-300), step=0.5)
    wls = weighted_least_squares(samples)
    for _ in range(restarts):
        if np.all(np.abs(res.x - wls) <= rtol * np.maximum(np.abs(wls), 1e-12)):
            break
        step = np.maximum(0.1 * np.abs(res.x), 1e-3)
        res = nelder_mead(obj, res.x, max_iter=max_iter, x_tol=1e-12, f_tol=0.0, step=step)
    else:
        if not np.all(np.abs(res.x - wls) <= rtol * np.maximum(np.abs(wls), 1e-12)):
            log.warning("Nelder-Mead coefficients %s differ from least squares %s", res.x, wls)
    return res.x, res.fun
