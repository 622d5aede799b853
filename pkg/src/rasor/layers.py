"""Feed-forward nets, coupled-gate LSTMs, stacked BiLSTMs and shared dropout."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor

INIT_SCALE = 0.1
DROPOUT_PLACEMENTS = ("input", "recurrent")


def uniform_weight(rng: np.random.Generator, shape, scale: float = INIT_SCALE) -> Tensor:
    return T.parameter(rng.uniform(-scale, scale, size=shape))


def zero_bias(n: int) -> Tensor:
    return T.parameter(np.zeros(n))


class FFNN:
    """Stack of affine layers, each followed by relu.

    ``sizes`` lists the input width followed by every layer's width.  With
    ``output_relu`` off the last layer stays affine.
    """

    def __init__(self, sizes, rng: np.random.Generator, output_relu: bool = True):
        if len(sizes) < 2:
            raise ConfigError("an FFNN needs at least one layer")
        self.sizes = list(sizes)
        self.output_relu = output_relu
        self.weights = [uniform_weight(rng, (a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        self.biases = [zero_bias(b) for b in sizes[1:]]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def __call__(self, x: Tensor) -> Tensor:
        return ffnn_forward(self, x)

    def named_parameters(self):
        out = []
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out += [(f"{k}.W", w), (f"{k}.b", b)]
        return out


def ffnn_forward(params: FFNN, x: Tensor) -> Tensor:
    """Apply the FFNN to every row of ``x`` (rows, in_dim)."""
    if x.data.ndim != 2 or x.shape[1] != params.sizes[0]:
        raise DimensionError(f"FFNN expects (*, {params.sizes[0]}) input, got {x.shape}")
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = T.add_bias(T.matmul(x, w), b)
        if k < last or params.output_relu:
            x = T.relu(x)
    return x


class LSTMCell:
    """LSTM cell whose forget gate is tied to the input gate (f = 1 - i).

    The projections are stored fused, gate blocks ordered [input, output,
    candidate] along the columns.
    """

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.hidden = hidden
        self.Wx = uniform_weight(rng, (in_dim, 3 * hidden))
        self.Wh = uniform_weight(rng, (hidden, 3 * hidden))
        self.b = zero_bias(3 * hidden)

    def named_parameters(self):
        return [("Wx", self.Wx), ("Wh", self.Wh), ("b", self.b)]


def _gates_to_state(z: Tensor, c_prev: Tensor, d: int):
    i = T.sigmoid(z[:, :d])
    o = T.sigmoid(z[:, d:2 * d])
    g = T.tanh(z[:, 2 * d:])
    c = c_prev + i * (g - c_prev)  # == (1 - i) * c_prev + i * g
    h = o * T.tanh(c)
    return h, c


def lstm_cell_step(params: LSTMCell, x: Tensor, h_prev: Tensor, c_prev: Tensor):
    """One step on row vectors: x (1, in_dim), h_prev and c_prev (1, d)."""
    d = params.hidden
    if x.shape != (1, params.in_dim) or h_prev.shape != (1, d) or c_prev.shape != (1, d):
        raise DimensionError(
            f"lstm step expects x (1, {params.in_dim}) and states (1, {d}); "
            f"got {x.shape}, {h_prev.shape}, {c_prev.shape}")
    z = T.add_bias(T.matmul(x, params.Wx) + T.matmul(h_prev, params.Wh), params.b)
    return _gates_to_state(z, c_prev, d)


@dataclass
class Dropout:
    """Per-call dropout settings; masks are drawn from ``rng``."""

    rate: float = 0.0
    training: bool = False
    rng: np.random.Generator | None = None
    placement: tuple = DROPOUT_PLACEMENTS

    def __post_init__(self):
        if not 0 <= self.rate < 1:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.rate}")
        unknown = set(self.placement) - set(DROPOUT_PLACEMENTS)
        if unknown:
            raise ConfigError(f"unknown dropout placement {sorted(unknown)}")

    @property
    def active(self) -> bool:
        return self.training and self.rate > 0

    def mask(self, width: int, dtype) -> np.ndarray:
        keep = self.rng.random((1, width)) >= self.rate
        return (keep / (1 - self.rate)).astype(dtype)


NO_DROPOUT = Dropout()


def shared_dropout(xs, rate: float, training: bool, seed=None):
    """Drop the same features at every timestep of a sequence.

    ``xs`` is either a (steps, width) tensor or a list of (1, width) rows;
    the result has the same form.
    """
    drop = Dropout(rate=rate, training=training, rng=np.random.default_rng(seed))
    if not drop.active:
        return xs
    if isinstance(xs, Tensor):
        mask = drop.mask(xs.shape[1], xs.dtype)
        return xs * T.Tensor(np.repeat(mask, xs.shape[0], axis=0), dtype=xs.dtype)
    xs = list(xs)
    mask = T.Tensor(drop.mask(xs[0].shape[-1], xs[0].dtype), dtype=xs[0].dtype)
    return [x * mask for x in xs]


def _run_direction(cell: LSTMCell, X: Tensor, reverse: bool, drop: Dropout):
    m = X.shape[0]
    d = cell.hidden
    dtype = X.dtype
    if drop.active and "input" in drop.placement:
        mask = drop.mask(X.shape[1], dtype)
        X = X * T.Tensor(np.repeat(mask, m, axis=0), dtype=dtype)
    hmask = None
    if drop.active and "recurrent" in drop.placement:
        hmask = T.Tensor(drop.mask(d, dtype), dtype=dtype)
    proj = T.add_bias(T.matmul(X, cell.Wx), cell.b)
    order = range(m - 1, -1, -1) if reverse else range(m)
    outs = [None] * m
    h = None
    c = T.zeros((1, d), dtype=dtype)
    for t in order:
        z = proj[t:t + 1]
        if h is not None:
            hin = h * hmask if hmask is not None else h
            z = z + T.matmul(hin, cell.Wh)
        h, c = _gates_to_state(z, c, d)
        outs[t] = h
    return T.concat(outs, axis=0)


class BiLSTM:
    """Stacked bidirectional LSTM; each layer reads the previous layer's
    concatenated [forward; backward] outputs.

    ``calls`` counts forward passes, which the tests use to check that a
    passage is encoded once no matter how many spans are scored.
    """

    def __init__(self, in_dim: int, hidden: int, layers: int, rng: np.random.Generator):
        if layers < 1:
            raise ConfigError("a BiLSTM needs at least one layer")
        self.in_dim = in_dim
        self.hidden = hidden
        self.layers = []
        for k in range(layers):
            size = in_dim if k == 0 else 2 * hidden
            self.layers.append((LSTMCell(size, hidden, rng), LSTMCell(size, hidden, rng)))
        self.calls = 0

    @property
    def out_dim(self) -> int:
        return 2 * self.hidden

    def named_parameters(self):
        out = []
        for k, (fw, bw) in enumerate(self.layers):
            out += [(f"{k}.fw.{n}", p) for n, p in fw.named_parameters()]
            out += [(f"{k}.bw.{n}", p) for n, p in bw.named_parameters()]
        return out

    def __call__(self, xs, drop: Dropout = NO_DROPOUT, all_layers: bool = False):
        return bilstm_forward(self, xs, drop, all_layers)


def bilstm_forward(params: BiLSTM, xs, drop: Dropout = NO_DROPOUT, all_layers: bool = False):
    """Encode a sequence given as a (steps, in_dim) tensor or a list of rows.

    Returns the top layer output (steps, 2d), or the list of every layer's
    output when ``all_layers`` is set.
    """
    if isinstance(xs, Tensor):
        X = xs
    else:
        xs = list(xs)
        if not xs:
            raise ContractError("BiLSTM input sequence is empty")
        X = T.concat(xs, axis=0)
    if X.data.ndim != 2 or X.shape[0] < 1:
        raise ContractError("BiLSTM input sequence is empty")
    if X.shape[1] != params.in_dim:
        raise DimensionError(f"BiLSTM expects inputs of width {params.in_dim}, got {X.shape[1]}")
    params.calls += 1
    outputs = []
    for fw, bw in params.layers:
        X = T.concat([_run_direction(fw, X, False, drop), _run_direction(bw, X, True, drop)], axis=1)
        outputs.append(X)
    return outputs if all_layers else outputs[-1]
