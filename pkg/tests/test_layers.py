import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rasor import tensor as T
from rasor.errors import ConfigError, ContractError, DimensionError
from rasor.layers import (FFNN, NO_DROPOUT, BiLSTM, Dropout, LSTMCell, ffnn_forward,
                          lstm_cell_step, shared_dropout)


def _zero(*params):
    for p in params:
        p.data[...] = 0


def test_ffnn_identity_relu():
    net = FFNN([2, 2], np.random.default_rng(0))
    net.weights[0].data[...] = np.eye(2)
    _zero(net.biases[0])
    assert ffnn_forward(net, T.tensor([[1.0, -1.0]])).data.tolist() == [[1.0, 0.0]]


def test_ffnn_zero_weights_gives_relu_bias():
    net = FFNN([3, 3], np.random.default_rng(0))
    _zero(net.weights[0])
    net.biases[0].data[...] = [1.0, -2.0, 0.5]
    out = ffnn_forward(net, T.tensor(np.random.default_rng(1).normal(size=(4, 3)))).data
    assert np.array_equal(out, np.tile([1.0, 0.0, 0.5], (4, 1)).astype(np.float32))


def test_ffnn_matches_matrix_chain():
    rng = np.random.default_rng(2)
    net = FFNN([3, 4, 2], rng)
    for b in net.biases:
        b.data[...] = rng.normal(size=b.shape)
    x = rng.normal(size=(1, 3))
    W1, W2 = (w.data.astype(np.float64) for w in net.weights)
    b1, b2 = (b.data.astype(np.float64) for b in net.biases)
    want = np.maximum(0, np.maximum(0, x @ W1 + b1) @ W2 + b2)
    assert np.allclose(net(T.tensor(x)).data, want, atol=1e-6)


def test_ffnn_output_relu_flag():
    net = FFNN([2, 2], np.random.default_rng(0), output_relu=False)
    net.weights[0].data[...] = np.eye(2)
    assert net(T.tensor([[1.0, -1.0]])).data.tolist() == [[1.0, -1.0]]


def test_ffnn_dimension_error():
    with pytest.raises(DimensionError):
        FFNN([3, 2], np.random.default_rng(0))(T.zeros((1, 4)))


def test_init_ranges():
    net = FFNN([50, 60], np.random.default_rng(0))
    assert np.all(np.abs(net.weights[0].data) <= 0.1)
    assert np.all(net.biases[0].data == 0)


def _zero_cell(in_dim=1, d=1):
    cell = LSTMCell(in_dim, d, np.random.default_rng(0))
    _zero(cell.Wx, cell.Wh, cell.b)
    return cell


def test_lstm_zero_fixed_point():
    h, c = lstm_cell_step(_zero_cell(), T.zeros((1, 1)), T.zeros((1, 1)), T.zeros((1, 1)))
    assert h.item() == 0 and c.item() == 0


def test_lstm_zero_params_decay_cell():
    h, c = lstm_cell_step(_zero_cell(), T.zeros((1, 1)), T.zeros((1, 1)), T.tensor([[2.0]]))
    assert c.item() == pytest.approx(1.0)
    assert h.item() == pytest.approx(0.5 * math.tanh(1.0), abs=1e-6)
    assert h.item() == pytest.approx(0.380797, abs=1e-6)


def _sig(z):
    return 1 / (1 + np.exp(-z))


def test_lstm_step_hand_expansion():
    rng = np.random.default_rng(3)
    cell = LSTMCell(4, 3, rng)
    cell.b.data[...] = rng.normal(size=9) * 0.1
    x, h0, c0 = rng.normal(size=(1, 4)), rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
    Wx, Wh, b = (p.data.astype(np.float64) for p in (cell.Wx, cell.Wh, cell.b))
    z = x @ Wx + h0 @ Wh + b
    i, o, g = _sig(z[:, :3]), _sig(z[:, 3:6]), np.tanh(z[:, 6:])
    c = (1 - i) * c0 + i * g
    h = o * np.tanh(c)
    got_h, got_c = lstm_cell_step(cell, T.tensor(x), T.tensor(h0), T.tensor(c0))
    assert np.allclose(got_c.data, c, atol=1e-6)
    assert np.allclose(got_h.data, h, atol=1e-6)


@given(st.floats(-3, 3), st.floats(-0.99, 0.99), st.floats(-4, 4), st.floats(-4, 4))
@settings(max_examples=100)
def test_coupled_gate_moves_cell_toward_candidate(c_prev, g, z1, z2):
    """c = c_prev + i (g - c_prev): a larger input gate lands closer to g."""
    lo, hi = sorted((z1, z2))
    if hi - lo < 1e-3 or abs(g - c_prev) < 1e-3:
        return
    cs = []
    for zi in (lo, hi):
        cell = _zero_cell()
        cell.b.data[...] = [zi, 0.0, math.atanh(g)]
        with T.precision(np.float64):
            cell64 = LSTMCell(1, 1, np.random.default_rng(0))
            for a, b in zip((cell64.Wx, cell64.Wh, cell64.b), (cell.Wx, cell.Wh, cell.b)):
                a.data[...] = b.data
            _, c = lstm_cell_step(cell64, T.zeros((1, 1)), T.zeros((1, 1)), T.tensor([[c_prev]]))
        cs.append(c.item())
    assert abs(cs[1] - g) < abs(cs[0] - g)


def test_lstm_dimension_error():
    cell = LSTMCell(3, 2, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        lstm_cell_step(cell, T.zeros((1, 4)), T.zeros((1, 2)), T.zeros((1, 2)))


def test_bilstm_zero_params():
    net = BiLSTM(4, 3, 2, np.random.default_rng(0))
    _zero(*(p for _, p in net.named_parameters()))
    out = net(T.tensor(np.random.default_rng(1).normal(size=(5, 4))))
    assert out.shape == (5, 6) and not out.data.any()


def test_bilstm_shape():
    net = BiLSTM(8, 5, 2, np.random.default_rng(0))
    assert net(T.zeros((7, 8))).shape == (7, 10)
    rows = [T.zeros((1, 8)) for _ in range(7)]
    assert net(rows).shape == (7, 10)


def test_bilstm_single_step():
    rng = np.random.default_rng(4)
    net = BiLSTM(3, 2, 1, rng)
    x = T.tensor(rng.normal(size=(1, 3)))
    fw, bw = net.layers[0]
    zero = T.zeros((1, 2))
    want = np.concatenate([lstm_cell_step(fw, x, zero, zero)[0].data,
                           lstm_cell_step(bw, x, zero, zero)[0].data], axis=1)
    assert np.allclose(net(x).data, want, atol=1e-7)


@pytest.mark.parametrize("layers", [1, 2])
def test_bilstm_reversal_symmetry(layers):
    rng = np.random.default_rng(5)
    net = BiLSTM(3, 4, layers, rng)
    X = rng.normal(size=(6, 3)).astype(np.float32)
    out = net(T.tensor(X)).data
    swapped = BiLSTM(3, 4, layers, rng)
    for k, (fw, bw) in enumerate(net.layers):
        sfw, sbw = swapped.layers[k]
        for src, dst in ((bw, sfw), (fw, sbw)):
            for a, b in zip((dst.Wx, dst.Wh, dst.b), (src.Wx, src.Wh, src.b)):
                a.data[...] = b.data
        if k > 0:
            # upper layers read [forward; backward], which swap halves too
            for cell in (sfw, sbw):
                top, bottom = cell.Wx.data[:4].copy(), cell.Wx.data[4:].copy()
                cell.Wx.data[:4], cell.Wx.data[4:] = bottom, top
    rev = swapped(T.tensor(X[::-1].copy())).data[::-1]
    want = np.concatenate([out[:, 4:], out[:, :4]], axis=1)
    if layers == 1:
        assert np.array_equal(rev, want)
    else:
        # permuted weight rows change the summation order, so not bitwise
        assert np.allclose(rev, want, atol=1e-6)


def test_bilstm_empty_rejected():
    net = BiLSTM(3, 2, 1, np.random.default_rng(0))
    with pytest.raises(ContractError):
        net([])


def test_dropout_degenerate_cases():
    x = T.tensor(np.ones((4, 6)))
    assert shared_dropout(x, 0.0, True, seed=1) is x
    assert shared_dropout(x, 0.5, False, seed=1) is x


def test_dropout_mask_shared_across_timesteps():
    x = T.tensor(np.ones((10, 32)))
    out = shared_dropout(x, 0.5, True, seed=3).data
    zeros = out == 0
    assert zeros[0].any() and not zeros[0].all()
    assert all(np.array_equal(zeros[0], zeros[t]) for t in range(10))
    assert np.allclose(out[~zeros], 2.0)
    rows = shared_dropout([T.tensor(np.ones((1, 32))) for _ in range(5)], 0.5, True, seed=3)
    assert all(np.array_equal(rows[0].data, r.data) for r in rows)


def test_dropout_rate_validation():
    with pytest.raises(ConfigError):
        shared_dropout(T.zeros((1, 2)), 1.0, True)
    with pytest.raises(ConfigError):
        Dropout(0.1, True, None, ("embeddings",))


def test_dropout_preserves_expectation():
    rng = np.random.default_rng(6)
    x = rng.uniform(0.5, 1.5, size=8)
    drop = Dropout(0.1, True, rng)
    masks = np.concatenate([drop.mask(8, np.float64) for _ in range(10_000)])
    assert np.allclose((masks * x).mean(axis=0), x, rtol=0.02)


def test_bilstm_dropout_masks_shared_in_time():
    # with input dropout only, a feature dropped for the forward direction
    # never influences any forward step
    rng = np.random.default_rng(7)
    net = BiLSTM(6, 3, 1, rng)
    X = rng.normal(size=(5, 6))
    drop_rng_seed = 11
    base = net(T.tensor(X), Dropout(0.5, True, np.random.default_rng(drop_rng_seed), ("input",))).data
    dropped = ~(np.random.default_rng(drop_rng_seed).random((1, 6)) >= 0.5)[0]
    X2 = X.copy()
    X2[:, dropped] += 100.0
    again = net(T.tensor(X2), Dropout(0.5, True, np.random.default_rng(drop_rng_seed), ("input",))).data
    assert dropped.any() and np.array_equal(base[:, :3], again[:, :3])


def test_bilstm_counts_calls():
    net = BiLSTM(3, 2, 2, np.random.default_rng(0))
    net(T.zeros((4, 3)), NO_DROPOUT)
    assert net.calls == 1
