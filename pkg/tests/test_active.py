import numpy as np
import pytest

from stal import active
from stal.active import ActiveConfig, Oracle, run, stable_lambda_max, wave_oracle
from stal.config import parse_config
from stal.forecast import FnConfig, Window, evaluate
from stal.grid import GridSpec
from stal.physics import WAVE, DegenerateDataError, PdeCoefficients
from stal.wave import Trajectory

SPEC = GridSpec(8, 8)
TINY = FnConfig(d_fused=6, d_hidden=6)


class Stub:
    """Learner that predicts a constant and records what the loop asks of it."""

    def __init__(self, value=0.5, perfect=False):
        self.value = value
        self.perfect = perfect
        self.lams = []
        self.fits = []

    def set_physics(self, lam):
        self.lams.append(lam)

    def fit(self, windows):
        self.fits.append(len(windows))
        return 1.0

    def forward(self, win):
        if self.perfect:
            return win.values[1:].copy()
        return np.full_like(win.values[1:], self.value)


class Physics:
    def __init__(self, values):
        self.values = list(values)
        self.sizes = []

    def __call__(self, data, **kw):
        self.sizes.append(len(data))
        v = self.values.pop(0)
        if v is None:
            raise DegenerateDataError("flat")
        return PdeCoefficients([v], WAVE, 0.0, len(data))


@pytest.fixture(scope="module")
def oracle():
    return wave_oracle(SPEC, 40, eval_waves=3, eval_steps=12)


def test_dataset_grows_by_one_period_per_step(oracle):
    cfg = ActiveConfig(n=25, max_steps=3, sampler="random", physics="fixed")
    res = run(cfg, oracle, learner=Stub())
    assert [m.dataset_size for m in res.steps] == [250, 500, 750]
    assert [len(p[0]) for p in res.data.periods] == [25, 25, 25]
    assert [(p[1], p[2]) for p in res.data.periods] == [(0, 10), (10, 20), (20, 30)]
    assert res.steps[-1].next_sites == ()


def test_fixed_mode_never_estimates(oracle):
    calls = Physics([])
    stub = Stub()
    res = run(ActiveConfig(n=4, max_steps=3, physics="fixed", fixed_lambda=9.0), oracle, learner=stub,
              physics_fn=calls)
    assert calls.sizes == []
    assert stub.lams == [9.0] * 3 and [m.lam for m in res.steps] == [9.0] * 3


def test_disabled_mode_passes_no_coefficient(oracle):
    stub = Stub()
    res = run(ActiveConfig(n=4, max_steps=2, physics="disabled", sampler="random"), oracle, learner=stub,
              physics_fn=Physics([]))
    assert stub.lams == [None, None] and res.steps[0].lam is None


def test_enabled_mode_clips_and_keeps_last_on_degenerate_data(oracle):
    calls = Physics([None, 7.5, 80.0, None])
    stub = Stub()
    res = run(ActiveConfig(n=4, max_steps=4, sampler="random"), oracle, learner=stub, physics_fn=calls)
    assert calls.sizes == [40, 80, 120, 160]
    assert stub.lams == [None, 7.5, stable_lambda_max(SPEC), stable_lambda_max(SPEC)]
    assert stable_lambda_max(SPEC) == pytest.approx(50.0)
    assert len(res.coefficients) == 2
    assert stub.fits == [1, 2, 3, 4]


def test_perfect_predictor_stops_after_first_step(oracle):
    res = run(ActiveConfig(n=4, max_steps=4, loss_threshold=1e-9, physics="fixed"), oracle,
              learner=Stub(perfect=True))
    assert len(res.steps) == 1 and res.stopped_early
    assert res.steps[0].eval_mse == 0.0 and res.steps[0].next_sites == ()


def test_evaluate_examples():
    obs = np.ones((4, 6), dtype=bool)
    truth = np.linspace(0.1, 0.9, 24).reshape(4, 6)
    win = Window(truth, obs)
    assert evaluate(Stub(perfect=True), [win]) == 0.0

    class Offset(Stub):
        def forward(self, w):
            return w.values[1:] + 0.01

    assert evaluate(Offset(), [win]) == pytest.approx(1e-4)
    assert evaluate(Stub(value=0.0), [win]) == pytest.approx(np.mean(truth[1:] ** 2))


def test_initial_sites_shared_across_samplers(oracle):
    a = run(ActiveConfig(n=5, max_steps=2, sampler="random", physics="fixed", seed=3), oracle, learner=Stub())
    b = run(ActiveConfig(n=5, max_steps=2, sampler="kriging", physics="fixed", seed=3, kriging_iter=20),
            oracle, learner=Stub())
    assert a.steps[0].sites == b.steps[0].sites
    assert len(set(b.steps[0].next_sites)) == 5
    assert len(b.kriging_fields) == 1 and b.kriging_fields[0].mse.shape == SPEC.shape


def test_spatiotemporal_kriging_runs(oracle):
    res = run(ActiveConfig(n=5, max_steps=2, physics="fixed", kriging_inputs="spatiotemporal",
                           kriging_iter=20, gp_max_points=100), oracle, learner=Stub())
    assert len(res.steps[0].next_sites) == 5


def test_exclude_current(oracle):
    for sampler in ("random", "kriging"):
        res = run(ActiveConfig(n=5, max_steps=3, sampler=sampler, physics="fixed", exclude_current=True,
                               kriging_iter=20), oracle, learner=Stub())
        for m in res.steps[:-1]:
            assert not set(m.sites) & set(m.next_sites)


def test_unobservable_cells_never_selected():
    o = wave_oracle(SPEC, 30, eval_waves=1, eval_steps=5)
    o.train.observable[:, :4] = False
    for sampler in ("random", "kriging"):
        res = run(ActiveConfig(n=6, max_steps=3, sampler=sampler, physics="fixed", kriging_iter=20), o,
                  learner=Stub())
        for m in res.steps:
            assert all(j >= 4 for _, j in m.sites + m.next_sites)


def test_reproducible_with_network(oracle):
    cfg = ActiveConfig(n=6, max_steps=3, sampler="kriging", physics="enabled", gp_max_points=200, gp_iter=30,
                       physics_iter=50, kriging_iter=30)
    a = run(cfg, oracle, fn_cfg=TINY, epochs=2)
    b = run(cfg, oracle, fn_cfg=TINY, epochs=2)
    assert [m.row(cfg) for m in a.steps] == [m.row(cfg) for m in b.steps]
    assert [m.sites for m in a.steps] == [m.sites for m in b.steps]
    assert all(np.isfinite(m.eval_mse) for m in a.steps)


def test_validation(oracle):
    with pytest.raises(ValueError):
        ActiveConfig(n=0)
    with pytest.raises(ValueError):
        ActiveConfig(n=1, sampler="greedy")
    with pytest.raises(ValueError, match="oracle has"):
        run(ActiveConfig(n=2, max_steps=5), oracle, learner=Stub())
    with pytest.raises(ValueError, match="exceeds"):
        run(ActiveConfig(n=65, max_steps=1), oracle, learner=Stub())


def test_config_bridge_and_csv_oracle():
    cfg = parse_config("active: {rate: 0.25, sampler: random}\nphysics: {mode: fixed}\nrun: {seed: 4}\n")
    ac = ActiveConfig.from_experiment(cfg, 64)
    assert (ac.n, ac.sampler, ac.physics, ac.seed) == (16, "random", "fixed", 4)
    traj = Trajectory(np.random.default_rng(0).normal(size=(12, 3, 3)), GridSpec(3, 3))
    o = active.csv_oracle(traj, 8)
    assert len(o.train) == 8 and len(o.evaluation[0]) == 4
    with pytest.raises(ValueError):
        active.csv_oracle(traj, 11)
    with pytest.raises(ValueError):
        Oracle(traj, [])
