"""Gaussian-process regression with a squared-exponential kernel.

Besides the usual posterior this module provides posteriors of first and
second partial derivatives, obtained by differentiating the kernel. Kernel
derivatives are taken with respect to the *second* argument (the query
point); ``r = v - v2`` throughout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .optimize import nelder_mead

log = logging.getLogger(__name__)

MAX_POINTS = 1500
JITTER_START = 1e-10
JITTER_ESCALATIONS = 4


class IllConditionedError(np.linalg.LinAlgError):
    """Covariance matrix could not be factored even after jitter escalation."""


@dataclass(frozen=True)
class Hyperparams:
    length_scales: tuple[float, ...]
    signal_scale: float = 1.0
    noise_std: float = 0.0

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.length_scales))
        object.__setattr__(self, "length_scales", ls)
        if not all(np.isfinite(v) and v > 0 for v in ls):
            raise ValueError(f"length scales must be positive and finite, got {ls}")
        if not (np.isfinite(self.signal_scale) and self.signal_scale > 0):
            raise ValueError("signal scale must be positive")
        if not (np.isfinite(self.noise_std) and self.noise_std >= 0):
            raise ValueError("noise std must be non-negative")

    @property
    def dim(self) -> int:
        return len(self.length_scales)

    @property
    def ls(self) -> np.ndarray:
        return np.asarray(self.length_scales)


@dataclass(frozen=True)
class GpModel:
    inputs: np.ndarray
    targets: np.ndarray
    hyper: Hyperparams
    prior_mean: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


# -- kernels ---------------------------------------------------------------

def _check_dim(hyper: Hyperparams, dim: int) -> None:
    if not 0 <= dim < hyper.dim:
        raise ValueError(f"invalid input dimension {dim} for a {hyper.dim}-D kernel")


def _pair(v, v2, hyper):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    v2 = np.atleast_1d(np.asarray(v2, dtype=float))
    if v.shape != v2.shape or v.size != hyper.dim:
        raise ValueError(f"input dimensions {v.shape}, {v2.shape} do not match kernel dimension {hyper.dim}")
    return v, v2


def kernel(v, v2, hyper: Hyperparams) -> float:
    v, v2 = _pair(v, v2, hyper)
    return float(hyper.signal_scale ** 2 * np.exp(-0.5 * np.sum((v - v2) ** 2 / hyper.ls ** 2)))


def kernel_d1(v, v2, hyper: Hyperparams, dim: int) -> float:
    """d k / d v2[dim]."""
    _check_dim(hyper, dim)
    v, v2 = _pair(v, v2, hyper)
    l2 = hyper.ls[dim] ** 2
    return kernel(v, v2, hyper) * (v[dim] - v2[dim]) / l2


def kernel_d2(v, v2, hyper: Hyperparams, dim: int) -> float:
    """d^2 k / d v2[dim]^2."""
    _check_dim(hyper, dim)
    v, v2 = _pair(v, v2, hyper)
    l2 = hyper.ls[dim] ** 2
    return kernel(v, v2, hyper) / l2 * ((v[dim] - v2[dim]) ** 2 / l2 - 1.0)


def kernel_d1d1(v, v2, hyper: Hyperparams, dim: int) -> float:
    """d^2 k / d v[dim] d v2[dim]."""
    _check_dim(hyper, dim)
    v, v2 = _pair(v, v2, hyper)
    l2 = hyper.ls[dim] ** 2
    return kernel(v, v2, hyper) / l2 * (1.0 - (v[dim] - v2[dim]) ** 2 / l2)


def kernel_d2d2(v, v2, hyper: Hyperparams, dim: int) -> float:
    """d^4 k / d v[dim]^2 d v2[dim]^2, the prior covariance of second derivatives."""
    _check_dim(hyper, dim)
    v, v2 = _pair(v, v2, hyper)
    l2 = hyper.ls[dim] ** 2
    q = (v[dim] - v2[dim]) ** 2 / l2
    return kernel(v, v2, hyper) / l2 ** 2 * (3.0 - 6.0 * q + q * q)


def kernel_matrix(a: np.ndarray, b: np.ndarray, hyper: Hyperparams) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d2 = np.zeros((len(a), len(b)))
    for j, l in enumerate(hyper.length_scales):
        d2 += ((a[:, j][:, None] - b[:, j][None, :]) / l) ** 2
    return hyper.signal_scale ** 2 * np.exp(-0.5 * d2)


def _cross_derivative(a, b, hyper, order, dim):
    """cov(y(a), d^order y(b) / d b[dim]^order) as an (len(a), len(b)) matrix."""
    k = kernel_matrix(a, b, hyper)
    r = a[:, dim][:, None] - b[:, dim][None, :]
    l2 = hyper.ls[dim] ** 2
    if order == 1:
        return k * r / l2
    return k / l2 * (r * r / l2 - 1.0)


# -- fitting ---------------------------------------------------------------

def _factor(cov: np.ndarray) -> tuple[np.ndarray, float]:
    n = len(cov)
    try:
        return np.linalg.cholesky(cov), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START * np.trace(cov) / n
    for _ in range(JITTER_ESCALATIONS + 1):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise IllConditionedError(
        f"covariance of {n} points is not positive definite after jitter {jitter / 10.0:.3g}"
    )


def build_model(inputs, targets, hyper: Hyperparams, prior_mean: Optional[float] = None) -> GpModel:
    """Condition a GP with fixed hyperparameters on the data."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    if x.shape[0] != y.size:
        raise ValueError("inputs and targets differ in length")
    if x.shape[1] != hyper.dim:
        raise ValueError(f"inputs have {x.shape[1]} columns, kernel has {hyper.dim}")
    if y.size < 1:
        raise ValueError("need at least one training point")
    mean = float(np.mean(y)) if prior_mean is None else float(prior_mean)
    cov = kernel_matrix(x, x, hyper)
    cov[np.diag_indices_from(cov)] += hyper.noise_std ** 2
    chol, jitter = _factor(cov)
    alpha = cho_solve((chol, True), y - mean)
    return GpModel(x, y, hyper, mean, chol, alpha, jitter)


def log_marginal_likelihood(inputs, targets, hyper: Hyperparams, prior_mean: Optional[float] = None) -> float:
    m = build_model(inputs, targets, hyper, prior_mean)
    resid = m.targets - m.prior_mean
    n = resid.size
    return float(-0.5 * resid @ m.alpha - np.sum(np.log(np.diag(m.chol))) - 0.5 * n * np.log(2 * np.pi))


def default_hyperparams(inputs, targets) -> Hyperparams:
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float)
    spread = np.std(x, axis=0)
    spread[spread == 0] = 1.0
    scale = float(np.std(y)) or 1.0
    return Hyperparams(tuple(0.5 * spread), scale, 0.01 * scale)


def subsample(n: int, cap: int, seed: int) -> np.ndarray:
    """Sorted indices of a seeded uniform subsample of size min(n, cap)."""
    if n <= cap:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=cap, replace=False))


def fit(
    inputs,
    targets,
    init: Optional[Hyperparams] = None,
    max_iter: int = 200,
    fit_noise: bool = True,
    max_points: int = MAX_POINTS,
    seed: int = 0,
    min_noise: float = 1e-6,
    length_bounds: Optional[Sequence[tuple[float, float]]] = None,
) -> GpModel:
    """Maximum-likelihood hyperparameters by Nelder-Mead on log parameters.

    Data beyond ``max_points`` are subsampled uniformly at random. The
    constant prior mean is the sample mean of the (subsampled) targets.
    ``min_noise`` is a floor on the noise std relative to the target spread
    and only applies when the noise is fitted.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    if len(y) < 2:
        raise ValueError("fit needs at least two points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("training data contain non-finite values")
    keep = subsample(len(y), max_points, seed)
    x, y = x[keep], y[keep]
    hyper = fit_hyperparams([(x, y)], init, max_iter, fit_noise, min_noise, length_bounds)
    return build_model(x, y, hyper, float(np.mean(y)))


def fit_hyperparams(
    groups: Sequence[tuple[np.ndarray, np.ndarray]],
    init: Optional[Hyperparams] = None,
    max_iter: int = 200,
    fit_noise: bool = True,
    min_noise: float = 1e-6,
    length_bounds: Optional[Sequence[tuple[float, float]]] = None,
) -> Hyperparams:
    """Hyperparameters shared by independent replicate data sets ``(inputs, targets)``.

    The objective is the summed log marginal likelihood, each group with
    its own constant prior mean.
    """
    groups = [(np.atleast_2d(np.asarray(gx, dtype=float)), np.asarray(gy, dtype=float).ravel())
              for gx, gy in groups]
    x = np.vstack([g[0] for g in groups])
    y = np.concatenate([g[1] for g in groups])
    if init is None:
        init = default_hyperparams(x, y)
    m = x.shape[1]
    if init.dim != m:
        raise ValueError(f"init has {init.dim} length scales, data have {m} inputs")
    scale = float(np.std(y)) or 1.0
    noise_floor = min_noise * scale

    theta0 = list(np.log(init.ls)) + [np.log(init.signal_scale)]
    if fit_noise:
        theta0.append(np.log(max(init.noise_std, noise_floor)))
    theta0 = np.array(theta0)
    if length_bounds is None:
        lo_ls = np.zeros(m)
        hi_ls = np.full(m, np.inf)
    else:
        lo_ls = np.array([b[0] for b in length_bounds], dtype=float)
        hi_ls = np.array([b[1] for b in length_bounds], dtype=float)
    with np.errstate(divide="ignore"):
        lo, hi = np.log(lo_ls), np.log(hi_ls)

    def unpack(theta):
        ls = np.clip(np.exp(np.clip(theta[:m], lo, hi)), lo_ls, hi_ls)
        sig = np.exp(np.clip(theta[m], -30, 30))
        noise = max(np.exp(np.clip(theta[m + 1], -30, 30)), noise_floor) if fit_noise else init.noise_std
        return Hyperparams(tuple(ls), sig, noise)

    means = [float(np.mean(gy)) for _, gy in groups]

    def objective(theta):
        hyper = unpack(theta)
        try:
            return -sum(log_marginal_likelihood(gx, gy, hyper, mu) for (gx, gy), mu in zip(groups, means))
        except (np.linalg.LinAlgError, ValueError, FloatingPointError):
            return np.inf

    res = nelder_mead(objective, theta0, max_iter=max_iter, x_tol=1e-6, f_tol=1e-9)
    log.debug("gp fit: %d points in %d groups, -lml %.6g -> %.6g in %d iterations", len(y),
              len(groups), objective(theta0), res.fun, res.nit)
    return unpack(res.x)


# -- prediction ------------------------------------------------------------

def _queries(model: GpModel, queries) -> np.ndarray:
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    if q.shape[1] != model.dim:
        raise ValueError(f"queries have {q.shape[1]} columns, model has {model.dim}")
    return q


def posterior(model: GpModel, queries, latent: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and marginal variance at ``queries``.

    With ``latent=False`` the variance includes the observation noise
    (predictive distribution of a new measurement); with ``latent=True`` it
    is the variance of the noise-free function, i.e. the Kriging MSE.
    """
    q = _queries(model, queries)
    cross = kernel_matrix(model.inputs, q, model.hyper)
    mean = model.prior_mean + cross.T @ model.alpha
    v = solve_triangular(model.chol, cross, lower=True)
    var = model.hyper.signal_scale ** 2 - np.sum(v * v, axis=0)
    if not latent:
        var = var + model.hyper.noise_std ** 2
    return mean, np.maximum(var, 0.0)


def posterior_derivative(model: GpModel, queries, order: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance of d^order f / d v[dim]^order."""
    if order not in (1, 2):
        raise ValueError(f"derivative order must be 1 or 2, got {order}")
    _check_dim(model.hyper, dim)
    q = _queries(model, queries)
    cross = _cross_derivative(model.inputs, q, model.hyper, order, dim)
    mean = cross.T @ model.alpha
    l2 = model.hyper.ls[dim] ** 2
    prior = model.hyper.signal_scale ** 2 / l2 * (1.0 if order == 1 else 3.0 / l2)
    v = solve_triangular(model.chol, cross, lower=True)
    return mean, np.maximum(prior - np.sum(v * v, axis=0), 0.0)


def with_hyper(model: GpModel, **changes) -> GpModel:
    """Rebuild ``model`` on its own data with some hyperparameters replaced."""
    return build_model(model.inputs, model.targets, replace(model.hyper, **changes), model.prior_mean)


def posterior_stencil(model: GpModel, queries, order: int, dim: int, step: float) -> tuple[np.ndarray, np.ndarray]:
    """Posterior of a central difference of the latent function along ``dim``.

    Order 1 is ``(f(v+h) - f(v-h)) / 2h``, order 2 is
    ``(f(v+h) - 2 f(v) + f(v-h)) / h**2``. The difference is a linear
    functional of the GP, so its mean and latent variance are exact.
    """
    if order not in (1, 2):
        raise ValueError(f"derivative order must be 1 or 2, got {order}")
    _check_dim(model.hyper, dim)
    q = _queries(model, queries)
    if order == 1:
        offsets, coefs = np.array([step, -step]), np.array([0.5, -0.5]) / step
    else:
        offsets, coefs = np.array([step, 0.0, -step]), np.array([1.0, -2.0, 1.0]) / step ** 2
    cross = np.zeros((len(model.inputs), len(q)))
    for off, cf in zip(offsets, coefs):
        shifted = q.copy()
        shifted[:, dim] += off
        cross += cf * kernel_matrix(model.inputs, shifted, model.hyper)
    mean = cross.T @ model.alpha
    l2 = model.hyper.ls[dim] ** 2
    diff = offsets[:, None] - offsets[None, :]
    prior = float(coefs @ (model.hyper.signal_scale ** 2 * np.exp(-0.5 * diff ** 2 / l2)) @ coefs)
    v = solve_triangular(model.chol, cross, lower=True)
    return mean, np.maximum(prior - np.sum(v * v, axis=0), 0.0)
