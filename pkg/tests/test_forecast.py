import numpy as np
import pytest

from stal.forecast import (Adam, FnConfig, FnParams, ForecastModel, NodeState, Scaler, Window, evaluate, fuse,
                           loss_and_grads, lstm_step, output_head, sigmoid, train, window_loss)
from stal.grid import GridSpec, encoding_table
from stal.wave import WaveParams, simulate

SMALL = FnConfig(d_fused=6, d_hidden=5)


def wave_window(spec, steps=6, t0=0):
    traj = simulate(WaveParams(spec), t0 + steps)
    sc = Scaler(*traj.value_range())
    v = sc.transform(traj.values[t0:].reshape(steps, -1))
    return Window(v, np.ones(v.shape, dtype=bool)), sc


def test_config_validation():
    assert SMALL.d_in == 4 + 1 + 32 and SMALL.d_out == 5
    with pytest.raises(ValueError):
        FnConfig(d_hidden=0)
    with pytest.raises(ValueError):
        FnConfig(lstm_mode="peephole")


def test_fuse_is_affine_on_concatenation():
    p = FnParams.init(SMALL, seed=0)
    rng = np.random.default_rng(0)
    pos, s, lat = rng.normal(size=4), rng.normal(size=1), rng.normal(size=32)
    np.testing.assert_allclose(fuse(pos, s, lat, p), p.W_fusion @ np.concatenate([pos, s, lat]) + p.b_fusion)
    with pytest.raises(ValueError):
        fuse(pos, s, lat[:8], p)


def test_lstm_with_zero_weights():
    p = FnParams.zeros(SMALL)
    st0 = NodeState(np.zeros(5), np.full(5, 2.0), np.zeros(4))
    out = lstm_step(np.ones(6), st0, p)
    # all gates are sigmoid(0) = 0.5 and the candidate is tanh(0) = 0
    np.testing.assert_allclose(out.c, 1.0)
    np.testing.assert_allclose(out.h, 0.5 * np.tanh(1.0))
    lit = lstm_step(np.ones(6), st0, p, mode="literal")
    np.testing.assert_array_equal(lit.c, 0.0)
    np.testing.assert_array_equal(lit.h, 0.0)


def test_lstm_matches_reference_and_literal_ignores_cell_state():
    p = FnParams.init(SMALL, seed=3)
    rng = np.random.default_rng(3)
    f, h, c = rng.normal(size=6), rng.normal(size=5), rng.normal(size=5)
    z = p.W @ f + p.T @ h
    i, fg, g, o = (1 / (1 + np.exp(-z[:5])), 1 / (1 + np.exp(-z[5:10])), np.tanh(z[10:15]),
                   1 / (1 + np.exp(-z[15:])))
    out = lstm_step(f, NodeState(h, c, np.zeros(4)), p)
    np.testing.assert_allclose(out.c, fg * c + i * g, rtol=1e-12)
    np.testing.assert_allclose(out.h, o * np.tanh(fg * c + i * g), rtol=1e-12)
    a = lstm_step(f, NodeState(h, c, np.zeros(4)), p, mode="literal")
    b = lstm_step(f, NodeState(h, -7 * c, np.zeros(4)), p, mode="literal")
    np.testing.assert_array_equal(a.h, b.h)
    np.testing.assert_allclose(a.h, o * g * i, rtol=1e-12)
    assert sigmoid(np.array([-800.0, 0.0, 800.0])).tolist() == [0.0, 0.5, 1.0]


def test_output_head_nonnegative_and_split():
    p = FnParams.init(SMALL, seed=1)
    rng = np.random.default_rng(1)
    for _ in range(20):
        s, lat = output_head(rng.normal(size=5) * 10, p)
        assert s.shape == (1,) and lat.shape == (4,)
        assert np.all(s >= 0) and np.all(lat >= 0)


def test_zero_parameters_predict_zero_and_zero_target_loss():
    spec = GridSpec(4, 4)
    m = ForecastModel(SMALL, spec, FnParams.zeros(SMALL), physics=False)
    win = Window(np.zeros((5, 16)), np.ones((5, 16), dtype=bool))
    preds = m.forward(win)
    assert preds.shape == (4, 16, 1) and np.all(preds == 0.0)
    loss, grad = window_loss(preds, win)
    assert loss == 0.0 and np.all(grad == 0.0)


def test_window_loss_hand_example():
    win = Window(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[True, True], [True, False]]))
    preds = np.array([[[0.5], [9.0]]])
    loss, grad = window_loss(preds, win)
    # one observed cell with error 0.5: L1 0.5 plus norm 0.5, divided by a count of 1
    assert loss == pytest.approx(1.0)
    assert grad[0, 0, 0] == pytest.approx(-2.0) and grad[0, 1, 0] == 0.0


def test_scaler_round_trip():
    sc = Scaler(-0.2, 0.6)
    x = np.linspace(-0.2, 0.6, 9)
    np.testing.assert_allclose(sc.inverse(sc.transform(x)), x)
    assert sc.transform(-0.2) == 0.0 and sc.transform(0.6) == 1.0
    with pytest.raises(ValueError):
        Scaler(1.0, 1.0)


def test_window_validation_and_masking():
    with pytest.raises(ValueError):
        Window(np.zeros((1, 4)), np.ones((1, 4), dtype=bool))
    with pytest.raises(ValueError):
        Window(np.zeros((3, 4)), np.ones((3, 5), dtype=bool))
    w = Window(np.full((2, 2), np.nan), np.array([[True, False], [False, True]]))
    assert w.values[0, 1, 0] == 0.0


@pytest.mark.parametrize("physics", [False, True])
def test_information_travels_one_cell_per_step(physics):
    spec = GridSpec(9, 9)
    cfg = FnConfig(d_fused=6, d_hidden=6)
    m = ForecastModel(cfg, spec, FnParams.init(cfg, seed=2), physics=physics, lam=9.0 if physics else None)
    rng = np.random.default_rng(0)
    v = rng.uniform(0.2, 0.8, size=(6, spec.size))
    base = m.forward(Window(v, np.ones(v.shape, dtype=bool)))
    v2 = v.copy()
    v2[0, 4 * 9 + 4] += 0.3
    moved = m.forward(Window(v2, np.ones(v.shape, dtype=bool)))
    ii, jj = np.divmod(np.arange(spec.size), 9)
    dist = np.maximum(np.abs(ii - 4), np.abs(jj - 4))
    reach = 1 if physics else 0
    for t in range(5):
        changed = np.abs(moved[t, :, 0] - base[t, :, 0]) > 0
        assert not np.any(changed & (dist > t + reach))
        assert np.any(changed & (dist == t))


def test_encodings_feed_the_network():
    spec = GridSpec(3, 3)
    m = ForecastModel(SMALL, spec, FnParams.init(SMALL, seed=0), physics=False)
    np.testing.assert_array_equal(m.encodings, encoding_table(spec, 4))
    win = Window(np.full((3, 9), 0.5), np.ones((3, 9), dtype=bool))
    preds = m.forward(win)
    assert len(np.unique(np.round(preds[0, :, 0], 12))) > 1


def fd_check(model, win, names, eps=1e-6, picks=4, seed=0):
    loss, grads = loss_and_grads(model, win)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in names:
        w = getattr(model.params, name)
        for flat in rng.choice(w.size, size=min(picks, w.size), replace=False):
            idx = np.unravel_index(flat, w.shape)
            old = w[idx]
            w[idx] = old + eps
            up, _ = loss_and_grads(model, win)
            w[idx] = old - eps
            dn, _ = loss_and_grads(model, win)
            w[idx] = old
            num = (up - dn) / (2 * eps)
            worst = max(worst, abs(num - grads[name][idx]) / max(1e-8, abs(num) + abs(grads[name][idx])))
    return worst


@pytest.mark.parametrize("mode", ["standard", "literal"])
@pytest.mark.parametrize("physics", [False, True])
def test_gradients_match_finite_differences(mode, physics):
    spec = GridSpec(3, 3)
    cfg = FnConfig(d_fused=5, d_hidden=4, lstm_mode=mode)
    win, sc = wave_window(spec, steps=4)
    obs = win.observed.copy()
    obs[1:, ::2] = False
    win = Window(win.values, obs)
    m = ForecastModel(cfg, spec, FnParams.init(cfg, seed=5), physics=physics, lam=9.0 if physics else None,
                      scaler=sc)
    m.params.W_c[:] = [[0.7, 0.4]]
    names = list(m.params.tensors()) if physics else [n for n in m.params.tensors() if n not in ("W_c", "b_c")]
    assert fd_check(m, win, names) < 1e-4


def test_training_reduces_loss_and_is_deterministic():
    spec = GridSpec(5, 5)
    win, sc = wave_window(spec, steps=8)

    def fit():
        m = ForecastModel(SMALL, spec, FnParams.init(SMALL, seed=4), physics=True, lam=9.0, scaler=sc)
        return m, train(m, [win], epochs=30, lr=1e-2)

    m1, h1 = fit()
    m2, h2 = fit()
    assert h1 == h2
    for k, v in m1.params.tensors().items():
        np.testing.assert_array_equal(v, m2.params.tensors()[k])
    assert h1[-1] < h1[0]
    assert evaluate(m1, [win]) >= 0


def test_adam_first_step_moves_by_lr():
    p = FnParams.zeros(SMALL)
    g = {k: np.ones_like(v) for k, v in p.tensors().items()}
    Adam(lr=0.01).step(p, g)
    np.testing.assert_allclose(p.b_out, -0.01, rtol=1e-6)


def test_frozen_and_inactive_coupling_untouched():
    spec = GridSpec(3, 3)
    win, sc = wave_window(spec, steps=4)
    m = ForecastModel(SMALL, spec, FnParams.init(SMALL, seed=0), physics=False, scaler=sc)
    wc = m.params.W_c.copy()
    w_out = m.params.W_out.copy()
    train(m, [win], epochs=2, frozen=["W_out"])
    np.testing.assert_array_equal(m.params.W_c, wc)
    np.testing.assert_array_equal(m.params.W_out, w_out)
    with pytest.raises(ValueError):
        train(m, [])


def test_evaluate_examples():
    spec = GridSpec(2, 2)
    m = ForecastModel(SMALL, spec, FnParams.zeros(SMALL), physics=False)
    win = Window(np.full((3, 4), 0.1), np.ones((3, 4), dtype=bool))
    assert evaluate(m, [win]) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        evaluate(m, [])


def test_params_copy_is_deep():
    p = FnParams.init(SMALL, seed=0)
    q = p.copy()
    q.W[0, 0] += 1
    assert p.W[0, 0] != q.W[0, 0]
    assert set(p.tensors()) == {"W_fusion", "b_fusion", "W", "T", "W_out", "b_out", "W_c", "b_c"}
