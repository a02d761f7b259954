"""The active-learning loop: learn physics, train, evaluate, select sites, query.

Sites are queried in collection periods of ``window`` consecutive steps;
period ``k`` covers times ``[k * window, (k + 1) * window)`` of the oracle's
training trajectory. The forecasting network is warm-started between steps
and evaluated one step ahead on held-out trajectories.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from . import kriging, physics
from .config import ExperimentConfig
from .forecast import Adam, FnConfig, FnParams, ForecastModel, Scaler, Window, evaluate, train
from .grid import GridSpec, ObservationSet
from .wave import Trajectory, WaveParams, query, random_waves, simulate

log = logging.getLogger(__name__)

__all__ = ["ActiveConfig", "StepMetrics", "RunResult", "Oracle", "NetLearner", "run", "evaluate",
           "stable_lambda_max", "wave_oracle", "csv_oracle", "oracle_from_config"]


@dataclass(frozen=True)
class ActiveConfig:
    n: int
    window: int = 10
    max_steps: int = 10
    loss_threshold: float = 0.0
    sampler: str = "kriging"
    physics: str = "enabled"
    fixed_lambda: float = 9.0
    seed: int = 0
    form: object = "wave"
    derivatives: str = "analytic"
    gp_max_points: int = 1500
    gp_iter: int = 200
    physics_iter: int = 200
    kriging_inputs: str = "spatial"
    kriging_iter: int = 200
    exclude_current: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("site budget n must be at least 1")
        if self.window < 2:
            raise ValueError("window must be at least 2")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.sampler not in ("kriging", "random"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.physics not in ("enabled", "disabled", "fixed"):
            raise ValueError(f"unknown physics mode {self.physics!r}")
        if self.kriging_inputs not in ("spatial", "spatiotemporal"):
            raise ValueError(f"unknown kriging inputs {self.kriging_inputs!r}")

    @classmethod
    def from_experiment(cls, cfg: ExperimentConfig, observable_cells: int) -> "ActiveConfig":
        return cls(
            n=cfg.site_budget(observable_cells), window=cfg.active.window, max_steps=cfg.active.max_steps,
            loss_threshold=cfg.active.loss_threshold, sampler=cfg.active.sampler, physics=cfg.physics.mode,
            fixed_lambda=cfg.physics.fixed_lambda, seed=cfg.run.seed, form=cfg.physics.form,
            derivatives=cfg.physics.derivatives, gp_max_points=cfg.gp.max_points, gp_iter=cfg.gp.max_iter,
            physics_iter=cfg.physics.max_iter, kriging_inputs=cfg.kriging.inputs,
            kriging_iter=cfg.kriging.max_iter, exclude_current=cfg.kriging.exclude_current,
        )


@dataclass
class StepMetrics:
    step: int
    train_loss: float
    eval_mse: float
    lam: Optional[float]
    sites: tuple[tuple[int, int], ...]
    dataset_size: int
    seconds: float = 0.0
    next_sites: tuple[tuple[int, int], ...] = ()

    def row(self, cfg: ActiveConfig, record_seconds: bool = False) -> dict:
        return {"step": self.step, "sampler": cfg.sampler, "physics": cfg.physics, "n": cfg.n,
                "train_loss": self.train_loss, "eval_mse": self.eval_mse, "lambda": self.lam,
                "seconds": self.seconds if record_seconds else None}


@dataclass
class Oracle:
    """Training trajectory that answers queries plus held-out evaluation trajectories."""

    train: Trajectory
    evaluation: list[Trajectory]

    def __post_init__(self):
        if not self.evaluation:
            raise ValueError("oracle needs at least one evaluation trajectory")

    @property
    def spec(self) -> GridSpec:
        return self.train.spec

    def scaler(self) -> Scaler:
        lo, hi = self.train.value_range()
        return Scaler(lo, hi)

    def eval_windows(self, scaler: Scaler) -> list[Window]:
        out = []
        for traj in self.evaluation:
            vals = traj.values.reshape(len(traj), -1)
            observed = np.isfinite(vals) & traj.observable.ravel()[None, :]
            out.append(Window(scaler.transform(np.where(observed, vals, 0.0)), observed))
        return out


def wave_oracle(spec: GridSpec, steps: int, c: float = 3.0, amplitude: float = 0.34,
                center=None, sigma2_x: float = 0.5, sigma2_y: float = 0.5,
                eval_waves: int = 16, eval_steps: int = 50, eval_seed: int = 1234) -> Oracle:
    """Training wave from ``center`` (grid centre by default) and seeded random-centre eval waves."""
    params = WaveParams(spec, c=c, amplitude=amplitude, center=center, sigma2_x=sigma2_x, sigma2_y=sigma2_y)
    train_traj = simulate(params, steps)
    evals = random_waves(spec, eval_waves, eval_steps, eval_seed, c=c, amplitude=amplitude,
                         sigma2_x=sigma2_x, sigma2_y=sigma2_y)
    return Oracle(train_traj, evals)


def csv_oracle(traj: Trajectory, split: int) -> Oracle:
    """Times before ``split`` answer queries; the rest form one evaluation trajectory."""
    if not 2 <= split <= len(traj) - 2:
        raise ValueError(f"split {split} must leave at least two steps on each side of a "
                         f"{len(traj)}-step series")
    train_traj = Trajectory(traj.values[:split], traj.spec, observable=traj.observable)
    eval_traj = Trajectory(traj.values[split:], traj.spec, observable=traj.observable)
    return Oracle(train_traj, [eval_traj])


def oracle_from_config(cfg: ExperimentConfig, trajectory: Optional[Trajectory] = None) -> Oracle:
    spec = GridSpec(cfg.grid.height, cfg.grid.width, cfg.grid.dx, cfg.grid.dy, cfg.grid.dt)
    if cfg.data.source == "csv":
        if trajectory is None:
            raise ValueError("csv data source needs an ingested trajectory")
        return csv_oracle(trajectory, cfg.data.split)
    w = cfg.wave
    steps = w.steps or cfg.active.max_steps * cfg.active.window
    return wave_oracle(spec, steps, c=w.c, amplitude=w.amplitude, center=w.center,
                       sigma2_x=w.sigma2_x, sigma2_y=w.sigma2_y, eval_waves=cfg.eval.waves,
                       eval_steps=cfg.eval.steps, eval_seed=cfg.eval.seed)


def stable_lambda_max(spec: GridSpec) -> float:
    """Largest Laplacian coefficient for which the explicit step stays stable."""
    return 1.0 / (spec.dt ** 2 * (1.0 / spec.dx ** 2 + 1.0 / spec.dy ** 2))


class Learner(Protocol):
    """What the loop needs from a forecasting model bundle."""

    def set_physics(self, lam: Optional[float]) -> None: ...

    def fit(self, windows: Sequence[Window]) -> float: ...

    def forward(self, win: Window) -> np.ndarray: ...


class NetLearner:
    """The forecasting network with a persistent Adam state across active steps."""

    def __init__(self, fn_cfg: FnConfig, spec: GridSpec, scaler: Scaler, physics_on: bool,
                 seed: int = 0, epochs: int = 10, lr: float = 1e-3):
        self.model = ForecastModel(fn_cfg, spec, FnParams.init(fn_cfg, seed), physics=physics_on,
                                   scaler=scaler)
        self.epochs = epochs
        self.opt = Adam(lr)

    def set_physics(self, lam: Optional[float]) -> None:
        self.model.lam = lam

    def fit(self, windows: Sequence[Window]) -> float:
        return train(self.model, windows, epochs=self.epochs, optimizer=self.opt)[-1]

    def forward(self, win: Window) -> np.ndarray:
        return self.model.forward(win)


@dataclass
class RunResult:
    steps: list[StepMetrics]
    data: ObservationSet
    learner: object
    coefficients: list = field(default_factory=list)
    kriging_fields: list = field(default_factory=list)
    stopped_early: bool = False


def _period_window(data: ObservationSet, period, spec: GridSpec, scaler: Scaler) -> Window:
    sites, t0, t1 = period
    vals = np.zeros((t1 - t0, spec.size))
    observed = np.zeros((t1 - t0, spec.size), dtype=bool)
    site_set = set(sites)
    for o in data.observations:
        if (o.i, o.j) in site_set and t0 <= o.t < t1:
            k = o.i * spec.width + o.j
            vals[o.t - t0, k] = o.value
            observed[o.t - t0, k] = True
    return Window(np.where(observed, scaler.transform(vals), 0.0), observed)


def _kriging_sites(cfg: ActiveConfig, data: ObservationSet, spec: GridSpec, candidates: np.ndarray,
                   next_t: int):
    sites, t0, t1 = data.periods[-1]
    idx, vals = data.arrays()
    in_period = (idx[:, 2] >= t0) & (idx[:, 2] < t1)
    idx, vals = idx[in_period], vals[in_period]
    if cfg.kriging_inputs == "spatial":
        times = np.unique(idx[:, 2])
        slices = np.empty((len(times), len(sites)))
        pos = {s: k for k, s in enumerate(sites)}
        for (i, j, t), v in zip(idx, vals):
            slices[np.searchsorted(times, t), pos[(i, j)]] = v
        model = kriging.fit_spatial(sites, slices, spec, cfg.kriging_iter)
        field_ = kriging.kriging_mse(model, spec)
    else:
        pts = idx * np.array([spec.dy, spec.dx, spec.dt])
        scale = float(np.std(vals)) or 1.0
        extent = (spec.height * spec.dy, spec.width * spec.dx, (t1 - t0) * spec.dt)
        init = kriging.gp.Hyperparams((0.25 * extent[0], 0.25 * extent[1], 0.25 * extent[2]), scale, 0.01 * scale)
        bounds = [(0.5 * spec.dy, 2 * extent[0]), (0.5 * spec.dx, 2 * extent[1]), (0.5 * spec.dt, 2 * extent[2])]
        model = kriging.gp.fit(pts, vals, init=init, max_iter=cfg.kriging_iter, length_bounds=bounds,
                               min_noise=1e-4, max_points=cfg.gp_max_points, seed=cfg.seed)
        field_ = kriging.kriging_mse(model, spec, t=next_t * spec.dt)
    exclude = sites if cfg.exclude_current else ()
    return kriging.select_top_n(field_, cfg.n, exclude=exclude, candidates=candidates), field_


def _random_sites(cfg: ActiveConfig, rng: np.random.Generator, candidates: np.ndarray, exclude=()):
    allowed = candidates.copy()
    for i, j in exclude:
        allowed[i, j] = False
    flat = np.flatnonzero(allowed.ravel())
    if cfg.n > len(flat):
        raise ValueError(f"cannot select {cfg.n} sites from {len(flat)} candidate cells")
    pick = np.sort(rng.choice(flat, size=cfg.n, replace=False))
    w = candidates.shape[1]
    return [(int(k // w), int(k % w)) for k in pick]


def run(cfg: ActiveConfig, oracle: Oracle, learner: Optional[Learner] = None,
        fn_cfg: Optional[FnConfig] = None, epochs: int = 10, lr: float = 1e-3,
        physics_fn: Callable = physics.estimate_coefficients,
        on_step: Optional[Callable] = None) -> RunResult:
    """Execute the loop; returns per-step metrics plus the final data and learner.

    ``learner`` replaces the forecasting network (any object with
    ``set_physics``, ``fit`` and ``forward``); ``physics_fn`` replaces the
    coefficient estimator. ``on_step(metrics, result)`` is called after
    every step.
    """
    spec = oracle.spec
    needed = cfg.max_steps * cfg.window
    if len(oracle.train) < needed:
        raise ValueError(f"oracle has {len(oracle.train)} steps; {cfg.max_steps} steps of window "
                         f"{cfg.window} need {needed}")
    candidates = oracle.train.observable.copy()
    if cfg.n > int(candidates.sum()):
        raise ValueError(f"site budget {cfg.n} exceeds the {int(candidates.sum())} observable cells")
    scaler = oracle.scaler()
    eval_windows = oracle.eval_windows(scaler)
    if learner is None:
        learner = NetLearner(fn_cfg or FnConfig(), spec, scaler, cfg.physics != "disabled",
                             seed=cfg.seed, epochs=epochs, lr=lr)
    form = physics.get_form(cfg.form)
    lam_max = stable_lambda_max(spec)

    # separate streams: initial sites do not depend on the sampler
    init_rng = np.random.default_rng([cfg.seed, 0])
    sampler_rng = np.random.default_rng([cfg.seed, 1])
    sites = _random_sites(cfg, init_rng, candidates)
    data = ObservationSet(window=cfg.window)
    data.add_period(sites, query(oracle.train, sites, range(0, cfg.window)))
    result = RunResult([], data, learner)

    lam = cfg.fixed_lambda if cfg.physics == "fixed" else None
    windows: list[Window] = []
    for step in range(1, cfg.max_steps + 1):
        start = time.perf_counter()
        if cfg.physics == "enabled":
            try:
                coefs = physics_fn(data, form=form, spec=spec, max_points=cfg.gp_max_points,
                                   seed=cfg.seed, gp_iter=cfg.gp_iter, max_iter=cfg.physics_iter,
                                   derivatives=cfg.derivatives)
            except physics.DegenerateDataError as exc:
                log.warning("step %d: physics not updated (%s)", step, exc)
            else:
                result.coefficients.append(coefs)
                raw = coefs.laplacian_coefficient
                lam = float(np.clip(raw, 0.0, lam_max))
                if lam != raw:
                    log.warning("step %d: lambda %.4g clipped to the stable range [0, %.4g]", step, raw, lam_max)
        learner.set_physics(lam if cfg.physics != "disabled" else None)
        windows.append(_period_window(data, data.periods[-1], spec, scaler))
        train_loss = float(learner.fit(windows))
        eval_mse = evaluate(learner, eval_windows)
        metrics = StepMetrics(step, train_loss, eval_mse, lam if cfg.physics != "disabled" else None,
                              tuple(data.current_sites), len(data))
        done = eval_mse < cfg.loss_threshold or step == cfg.max_steps
        if not done:
            t0 = step * cfg.window
            if cfg.sampler == "kriging":
                nxt, kf = _kriging_sites(cfg, data, spec, candidates, t0)
                result.kriging_fields.append(kf)
            else:
                excl = data.current_sites if cfg.exclude_current else ()
                nxt = _random_sites(cfg, sampler_rng, candidates, excl)
            data.add_period(nxt, query(oracle.train, nxt, range(t0, t0 + cfg.window)))
            metrics.next_sites = tuple(nxt)
        metrics.seconds = time.perf_counter() - start
        log.info("step %d: train_loss=%.5g eval_mse=%.5g lambda=%s |D|=%d",
                 step, train_loss, eval_mse, metrics.lam, metrics.dataset_size)
        result.steps.append(metrics)
        if on_step is not None:
            on_step(metrics, result)
        if eval_mse < cfg.loss_threshold:
            result.stopped_early = True
            break
    return result
