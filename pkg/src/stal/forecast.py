"""Per-node recurrent forecasting network with lateral message passing.

Every grid cell runs the same network: a linear fusion of its position
encoding, its current value and the lateral vectors emitted by its eight
neighbours on the previous step, an LSTM cell, and a ReLU output head that
emits the next-step prediction plus a new lateral vector. Optionally the
prediction is fused with one step of the learned wave equation.

All cells are processed together as a batch; gradients are computed by
hand with backpropagation through time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .coupling import CouplingParams, pde_step
from .grid import GridSpec, encoding_table, neighbor_index
from .wave import laplacian_terms

LSTM_MODES = ("standard", "literal")


@dataclass(frozen=True)
class FnConfig:
    d_pos: int = 4
    d_dyn: int = 1
    d_lat: int = 4
    d_fused: int = 32
    d_hidden: int = 256
    lstm_mode: str = "standard"

    def __post_init__(self):
        for f in ("d_pos", "d_dyn", "d_lat", "d_fused", "d_hidden"):
            if int(getattr(self, f)) < 1:
                raise ValueError(f"{f} must be positive")
        if self.lstm_mode not in LSTM_MODES:
            raise ValueError(f"lstm_mode must be one of {LSTM_MODES}")

    @property
    def d_in(self) -> int:
        return self.d_pos + self.d_dyn + 8 * self.d_lat

    @property
    def d_out(self) -> int:
        return self.d_dyn + self.d_lat


@dataclass
class FnParams:
    W_fusion: np.ndarray
    b_fusion: np.ndarray
    W: np.ndarray        # (4 d_hidden, d_fused), gate blocks [input, forget, cell, output]
    T: np.ndarray        # (4 d_hidden, d_hidden)
    W_out: np.ndarray    # (d_dyn + d_lat, d_hidden)
    b_out: np.ndarray
    W_c: np.ndarray      # coupling, (d_dyn, 2 d_dyn)
    b_c: np.ndarray
    seed: Optional[int] = field(default=None, compare=False)

    @classmethod
    def init(cls, cfg: FnConfig, seed: int = 0) -> "FnParams":
        rng = np.random.default_rng(seed)

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        h = cfg.d_hidden
        cp = CouplingParams.averaging(cfg.d_dyn)
        return cls(
            W_fusion=uniform((cfg.d_fused, cfg.d_in), cfg.d_in),
            b_fusion=uniform((cfg.d_fused,), cfg.d_in),
            W=uniform((4 * h, cfg.d_fused), cfg.d_fused),
            T=uniform((4 * h, h), h),
            W_out=uniform((cfg.d_out, h), h),
            # outputs live in (0, 1); starting the ReLU head mid-range keeps every unit active
            b_out=np.full(cfg.d_out, 0.5),
            W_c=cp.W_c,
            b_c=cp.b_c,
            seed=seed,
        )

    @classmethod
    def zeros(cls, cfg: FnConfig) -> "FnParams":
        h = cfg.d_hidden
        return cls(np.zeros((cfg.d_fused, cfg.d_in)), np.zeros(cfg.d_fused),
                   np.zeros((4 * h, cfg.d_fused)), np.zeros((4 * h, h)),
                   np.zeros((cfg.d_out, h)), np.zeros(cfg.d_out),
                   np.zeros((cfg.d_dyn, 2 * cfg.d_dyn)), np.zeros(cfg.d_dyn))

    def tensors(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "seed"}

    def copy(self) -> "FnParams":
        return FnParams(**{k: v.copy() for k, v in self.tensors().items()}, seed=self.seed)

    @property
    def coupling(self) -> CouplingParams:
        return CouplingParams(self.W_c, self.b_c)


@dataclass
class NodeState:
    h: np.ndarray
    c: np.ndarray
    lateral_out: np.ndarray

    @classmethod
    def zeros(cls, cfg: FnConfig) -> "NodeState":
        return cls(np.zeros(cfg.d_hidden), np.zeros(cfg.d_hidden), np.zeros(cfg.d_lat))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- single-node building blocks ------------------------------------------

def fuse(p, s, lat_in, params: FnParams) -> np.ndarray:
    x = np.concatenate([np.atleast_1d(p), np.atleast_1d(s), np.atleast_1d(lat_in)])
    if x.shape[-1] != params.W_fusion.shape[1]:
        raise ValueError(f"fusion input has {x.shape[-1]} entries, layer expects {params.W_fusion.shape[1]}")
    return params.W_fusion @ x + params.b_fusion


def _gates(f, h_prev, params):
    z = f @ params.W.T + h_prev @ params.T.T
    dh = params.T.shape[1]
    return (sigmoid(z[..., :dh]), sigmoid(z[..., dh:2 * dh]),
            np.tanh(z[..., 2 * dh:3 * dh]), sigmoid(z[..., 3 * dh:]))


def lstm_step(f, state: NodeState, params: FnParams, mode: str = "standard") -> NodeState:
    i, fg, g, o = _gates(np.asarray(f, dtype=float), state.h, params)
    if mode == "standard":
        c = fg * state.c + i * g
        h = o * np.tanh(c)
    elif mode == "literal":
        c = g * i
        h = o * c
    else:
        raise ValueError(f"unknown lstm mode {mode!r}")
    return NodeState(h, c, state.lateral_out)


def output_head(h, params: FnParams, d_dyn: int = 1) -> tuple[np.ndarray, np.ndarray]:
    r = np.maximum(params.W_out @ np.asarray(h, dtype=float) + params.b_out, 0.0)
    return r[:d_dyn], r[d_dyn:]


# -- grid-wide network -----------------------------------------------------

@dataclass(frozen=True)
class Scaler:
    """Affine map of physical values onto (0, 1)."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("scaler range must be non-empty")

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo)

    def inverse(self, x):
        return self.lo + np.asarray(x, dtype=float) * (self.hi - self.lo)


IDENTITY = Scaler(0.0, 1.0)


@dataclass
class Window:
    """Values of one training/evaluation window, shape (T, N, d_dyn), with an (T, N) observed mask."""

    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        self.observed = np.asarray(self.observed, dtype=bool)
        if self.observed.shape != self.values.shape[:2]:
            raise ValueError("observed mask must have shape (T, N)")
        if len(self.values) < 2:
            raise ValueError("a window needs at least two time steps")
        self.values = np.where(self.observed[:, :, None], self.values, 0.0)

    @property
    def steps(self) -> int:
        return len(self.values)


@dataclass
class ForecastModel:
    """Network parameters plus the fixed context they run in."""

    cfg: FnConfig
    spec: GridSpec
    params: FnParams
    physics: bool = True
    lam: Optional[float] = None
    scaler: Scaler = IDENTITY
    encodings: np.ndarray = field(init=False, repr=False)
    nbr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.encodings = encoding_table(self.spec, self.cfg.d_pos)
        self.nbr = neighbor_index(self.spec)

    @property
    def uses_pde(self) -> bool:
        return self.physics and self.lam is not None

    # physics step in normalised units: denormalise, leapfrog, renormalise
    def _homogeneous(self, x_prev, x_curr):
        h, w = self.spec.shape
        out = np.empty_like(x_curr)
        for k in range(x_curr.shape[1]):
            a = self.scaler.inverse(x_prev[:, k].reshape(h, w))
            b = self.scaler.inverse(x_curr[:, k].reshape(h, w))
            out[:, k] = self.scaler.transform(pde_step(a, b, self.lam, self.spec)).ravel()
        return out

    def _homogeneous_adjoint(self, g):
        """Gradients of the physics step w.r.t. (x_curr, x_prev) given its output gradient."""
        h, w = self.spec.shape
        kx = self.lam / (self.spec.dx / self.spec.dt) ** 2
        ky = self.lam / (self.spec.dy / self.spec.dt) ** 2
        gc = np.empty_like(g)
        for k in range(g.shape[1]):
            gg = g[:, k].reshape(h, w)
            gxx, gyy = laplacian_terms(gg)
            gc[:, k] = (2.0 * gg + kx * gxx + ky * gyy).ravel()
        return gc, -g

    def forward(self, win: Window, params: Optional[FnParams] = None, cache: bool = False):
        """Unroll over ``win``; returns predictions for times 1..T-1, shape (T-1, N, d_dyn).

        Unobserved cells are fed the model's own previous prediction; at
        t = 0 they get the mean of the observed values at t = 0.
        """
        p = params or self.params
        cfg = self.cfg
        n = self.spec.size
        if win.values.shape[1] != n or win.values.shape[2] != cfg.d_dyn:
            raise ValueError(f"window has shape {win.values.shape}, grid needs (T, {n}, {cfg.d_dyn})")
        dh, dd, dl = cfg.d_hidden, cfg.d_dyn, cfg.d_lat
        h = np.zeros((n, dh))
        c = np.zeros((n, dh))
        lat = np.zeros((n, dl))
        obs0 = win.observed[0]
        fill = win.values[0][obs0].mean(axis=0) if obs0.any() else np.full(dd, 0.5)
        x = np.where(obs0[:, None], win.values[0], fill)
        x_prev = x
        preds = np.empty((win.steps - 1, n, dd))
        steps = []
        for t in range(win.steps - 1):
            lat_in = np.vstack([lat, np.zeros((1, dl))])[self.nbr].reshape(n, 8 * dl)
            inp = np.hstack([self.encodings, x, lat_in])
            f = inp @ p.W_fusion.T + p.b_fusion
            i, fg, g, o = _gates(f, h, p)
            if cfg.lstm_mode == "standard":
                c_new = fg * c + i * g
                tc = np.tanh(c_new)
                h_new = o * tc
            else:
                c_new = g * i
                tc = None
                h_new = o * c_new
            y = h_new @ p.W_out.T + p.b_out
            r = np.maximum(y, 0.0)
            s_he, lat_new = r[:, :dd], r[:, dd:]
            if self.uses_pde:
                s_ho = self._homogeneous(x_prev, x)
                cat = np.hstack([s_he, s_ho])
                zc = cat @ p.W_c.T + p.b_c
                pred = np.maximum(zc, 0.0)
            else:
                cat = zc = None
                pred = s_he
            preds[t] = pred
            if cache:
                steps.append(dict(x=x, inp=inp, f=f, i=i, fg=fg, g=g, o=o, c_prev=c, c=c_new, tc=tc,
                                  h_prev=h, h=h_new, y=y, cat=cat, zc=zc))
            h, c, lat = h_new, c_new, lat_new
            x_prev = x
            obs = win.observed[t + 1]
            x = np.where(obs[:, None], win.values[t + 1], pred)
        return (preds, steps) if cache else preds

    def backward(self, win: Window, steps: list, dpreds: np.ndarray, params: Optional[FnParams] = None) -> dict:
        """Gradients of a loss with d loss / d predictions ``dpreds`` (T-1, N, d_dyn)."""
        p = params or self.params
        cfg = self.cfg
        n = self.spec.size
        dh, dd, dl, dp = cfg.d_hidden, cfg.d_dyn, cfg.d_lat, cfg.d_pos
        grads = {k: np.zeros_like(v) for k, v in p.tensors().items()}
        nsteps = len(steps)
        gx = np.zeros((nsteps + 1, n, dd))
        dh_next = np.zeros((n, dh))
        dc_next = np.zeros((n, dh))
        dlat_next = np.zeros((n, dl))
        for t in reversed(range(nsteps)):
            s = steps[t]
            dpred = dpreds[t].copy()
            if t + 1 < nsteps:
                dpred += np.where(win.observed[t + 1][:, None], 0.0, gx[t + 1])
            if self.uses_pde:
                dzc = dpred * (s["zc"] > 0)
                grads["W_c"] += dzc.T @ s["cat"]
                grads["b_c"] += dzc.sum(0)
                dcat = dzc @ p.W_c
                ds_he = dcat[:, :dd]
                gcurr, gprev = self._homogeneous_adjoint(dcat[:, dd:])
                gx[t] += gcurr
                gx[max(t - 1, 0)] += gprev
            else:
                ds_he = dpred
            dy = np.hstack([ds_he, dlat_next]) * (s["y"] > 0)
            grads["W_out"] += dy.T @ s["h"]
            grads["b_out"] += dy.sum(0)
            dhid = dy @ p.W_out + dh_next
            i, fg, g, o = s["i"], s["fg"], s["g"], s["o"]
            if cfg.lstm_mode == "standard":
                tc = s["tc"]
                do = dhid * tc
                dc = dhid * o * (1.0 - tc * tc) + dc_next
                dfg = dc * s["c_prev"]
                dc_next = dc * fg
            else:
                do = dhid * s["c"]
                dc = dhid * o
                dfg = np.zeros_like(fg)
            di = dc * g
            dg = dc * i
            dz = np.hstack([di * i * (1 - i), dfg * fg * (1 - fg), dg * (1 - g * g), do * o * (1 - o)])
            grads["W"] += dz.T @ s["f"]
            grads["T"] += dz.T @ s["h_prev"]
            df = dz @ p.W
            dh_next = dz @ p.T
            grads["W_fusion"] += df.T @ s["inp"]
            grads["b_fusion"] += df.sum(0)
            dinp = df @ p.W_fusion
            gx[t] += dinp[:, dp:dp + dd]
            dlat_pad = np.zeros((n + 1, dl))
            np.add.at(dlat_pad, self.nbr, dinp[:, dp + dd:].reshape(n, 8, dl))
            dlat_next = dlat_pad[:n]
        return grads


def window_loss(preds: np.ndarray, win: Window) -> tuple[float, np.ndarray]:
    """Summed per-step L1 + L2-norm error over observed cells, each divided by the observed count.

    Returns the loss and its gradient with respect to ``preds``.
    """
    total = 0.0
    grad = np.zeros_like(preds)
    for t in range(len(preds)):
        mask = win.observed[t + 1]
        count = int(mask.sum())
        if count == 0:
            continue
        e = win.values[t + 1][mask] - preds[t][mask]
        norm = float(np.sqrt(np.sum(e * e)))
        total += (np.sum(np.abs(e)) + norm) / count
        de = np.sign(e) + (e / norm if norm > 0 else 0.0)
        grad[t][mask] = -de / count
    return total, grad


def loss_and_grads(model: ForecastModel, win: Window, params: Optional[FnParams] = None):
    preds, steps = model.forward(win, params, cache=True)
    loss, dpreds = window_loss(preds, win)
    return loss, model.backward(win, steps, dpreds, params)


class Adam:
    def __init__(self, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: FnParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, g in grads.items():
            w = getattr(params, name)
            m = self.m.setdefault(name, np.zeros_like(w))
            v = self.v.setdefault(name, np.zeros_like(w))
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            w -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train(model: ForecastModel, windows: Sequence[Window], epochs: int = 10, lr: float = 1e-3,
          optimizer: Optional[Adam] = None, frozen: Sequence[str] = ()) -> list[float]:
    """Adam on each window in turn, ``epochs`` passes; returns the mean window loss per epoch.

    Parameters named in ``frozen`` are left untouched (the coupling layer is
    frozen automatically when the physics step is inactive).
    """
    if not windows:
        raise ValueError("no training windows")
    opt = optimizer or Adam(lr)
    skip = set(frozen)
    if not model.uses_pde:
        skip |= {"W_c", "b_c"}
    history = []
    for _ in range(epochs):
        losses = []
        for win in windows:
            loss, grads = loss_and_grads(model, win)
            if not np.isfinite(loss):
                raise FloatingPointError("training loss became non-finite")
            opt.step(model.params, {k: g for k, g in grads.items() if k not in skip})
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


def evaluate(model: ForecastModel, windows: Sequence[Window]) -> float:
    """Pooled squared error of one-step-ahead predictions over observed cells and steps."""
    if not windows:
        raise ValueError("empty evaluation set")
    sq = 0.0
    count = 0
    for win in windows:
        preds = model.forward(win)
        mask = win.observed[1:]
        err = (win.values[1:] - preds)[mask]
        sq += float(np.sum(err * err))
        count += err.size
    if count == 0:
        raise ValueError("evaluation windows contain no observed cells")
    return sq / count
