"""Central-difference gradient checks for every op, layer and the composed model.

Everything runs in float64.  The error for one parameter is

    max_i |g_i - n_i| / max(1, |g_i|, |n_i|)

with ``g`` the backprop gradient and ``n`` the numerical estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import objectives as obj
from . import tensor as T
from .config import OBJECTIVES, TrainConfig
from .embeddings import Embedder, EmbeddingStore
from .layers import FFNN, BiLSTM, Dropout, LSTMCell, lstm_cell_step
from .model import RasorModel
from .question import (QuestionEncoder, build_question_focused_embeddings,
                       passage_aligned_repr, passage_independent_repr)
from .span_model import SpanScorer, enumerate_spans, nll_loss, score_and_normalize, span_embeddings

OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3
EPS = 1e-6


@dataclass
class GradResult:
    case: str
    parameter: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_gradient(f: Callable[[], float], p: T.Tensor, eps: float = EPS) -> np.ndarray:
    g = np.zeros_like(p.data)
    flat, out = p.data.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        out[i] = (up - down) / (2 * eps)
    return g


def check(case: str, loss_fn: Callable[[], T.Tensor], params: dict,
          tolerance: float = OP_TOLERANCE, eps: float = EPS) -> list[GradResult]:
    """Compare backprop against central differences for each named leaf."""
    names = list(params)
    leaves = [params[n] for n in names]
    analytic = T.grad(loss_fn(), leaves)

    def value():
        with T.no_grad():
            return loss_fn().item()

    return [GradResult(case, n, relative_error(a, numeric_gradient(value, p, eps)), tolerance)
            for n, p, a in zip(names, leaves, analytic)]


def _leaf(rng, shape, low=-1.0, high=1.0):
    return T.parameter(rng.uniform(low, high, size=shape), dtype=np.float64)


def _project(out: T.Tensor, rng) -> T.Tensor:
    """Random linear functional of ``out`` so every output entry matters."""
    w = T.Tensor(rng.normal(size=out.shape), dtype=np.float64)
    return T.sum_all(T.mul(out, w))


def _op_cases(rng):
    """(name, loss_fn, params) for each primitive op."""
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    m1, m2 = _leaf(rng, (3, 4)), _leaf(rng, (4, 2))
    pos = _leaf(rng, (3, 4), 0.5, 2.0)
    away = T.parameter(rng.choice([-1, 1], size=(3, 4)) * rng.uniform(0.2, 1.0, size=(3, 4)),
                       dtype=np.float64)
    bias, row = _leaf(rng, (4,)), _leaf(rng, (1, 4))
    p = lambda f, **kw: (lambda: _project(f(), np.random.default_rng(1)), kw)
    cases = {
        "add": p(lambda: T.add(a, b), a=a, b=b),
        "sub": p(lambda: T.sub(a, b), a=a, b=b),
        "mul": p(lambda: T.mul(a, b), a=a, b=b),
        "scale": p(lambda: T.scale(a, -2.5), a=a),
        "neg": p(lambda: -a, a=a),
        "tanh": p(lambda: T.tanh(a), a=a),
        "sigmoid": p(lambda: T.sigmoid(a), a=a),
        "relu": p(lambda: T.relu(away), x=away),
        "exp": p(lambda: T.exp(a), a=a),
        "log": p(lambda: T.log(pos), a=pos),
        "softplus": p(lambda: T.softplus(a), a=a),
        "matmul": p(lambda: T.matmul(m1, m2), a=m1, b=m2),
        "add_bias": p(lambda: T.add_bias(a, bias), x=a, b=bias),
        "repeat_rows": p(lambda: T.repeat_rows(row, 5), x=row),
        "transpose": p(lambda: T.transpose(a), a=a),
        "reshape": p(lambda: T.reshape(a, (2, 6)), a=a),
        "concat_rows": p(lambda: T.concat([a, row], axis=0), a=a, b=row),
        "concat_cols": p(lambda: T.concat([a, b], axis=1), a=a, b=b),
        "getitem_slice": p(lambda: a[1:3, ::2], a=a),
        "getitem_fancy": p(lambda: a[np.array([0, 2, 0]), np.array([1, 1, 3])], a=a),
        "take_rows": p(lambda: T.take_rows(a, [2, 0, 2, 1]), a=a),
        "sum_all": (lambda: T.sum_all(a), {"a": a}),
        "log_sum_exp": (lambda: T.log_sum_exp(a), {"a": a}),
        "log_sum_exp_axis0": p(lambda: T.log_sum_exp(a, axis=0), a=a),
        "log_sum_exp_axis1": p(lambda: T.log_sum_exp(a, axis=1), a=a),
        "softmax_rows": p(lambda: T.softmax_rows(a), a=a),
        "log_softmax_rows": p(lambda: T.log_softmax_rows(a), a=a),
    }
    return [(name, fn, params) for name, (fn, params) in cases.items()]


def _named(module) -> dict:
    return dict(module.named_parameters())


def _layer_cases(rng):
    n_in, d, m, n = 4, 3, 4, 3
    cases = []
    ffnn = FFNN([n_in, 5, 3], rng, output_relu=False)
    x = _leaf(rng, (m, n_in))
    cases.append(("ffnn", lambda: _project(ffnn(x), np.random.default_rng(2)),
                  {**_named(ffnn), "x": x}))
    cell = LSTMCell(n_in, d, rng)
    x1, h0, c0 = _leaf(rng, (1, n_in)), _leaf(rng, (1, d)), _leaf(rng, (1, d))
    cases.append(("lstm_cell", lambda: _project(T.concat(list(lstm_cell_step(cell, x1, h0, c0)),
                                                         axis=1), np.random.default_rng(3)),
                  {**_named(cell), "x": x1, "h": h0, "c": c0}))
    bilstm = BiLSTM(n_in, d, 2, rng)

    def bilstm_loss():
        drop = Dropout(0.3, True, np.random.default_rng(4), ("input", "recurrent"))
        return _project(bilstm(x, drop), np.random.default_rng(5))

    cases.append(("bilstm_dropout", bilstm_loss, {**_named(bilstm), "x": x}))
    enc = QuestionEncoder(n_in, d, 2, rng, ffnn_width=3)
    P, Q = _leaf(rng, (m, n_in)), _leaf(rng, (n, n_in))
    cases.append(("question_aligned",
                  lambda: _project(passage_aligned_repr(enc, P, Q)[0], np.random.default_rng(6)),
                  {**{k: v for k, v in _named(enc).items() if k.startswith("align")}, "P": P, "Q": Q}))
    cases.append(("question_independent",
                  lambda: _project(passage_independent_repr(enc, Q)[0], np.random.default_rng(7)),
                  {**{k: v for k, v in _named(enc).items() if not k.startswith("align")}, "Q": Q}))
    cases.append(("question_focused",
                  lambda: _project(build_question_focused_embeddings(enc, P, Q)[0],
                                   np.random.default_rng(8)),
                  {**_named(enc), "P": P, "Q": Q}))
    H = _leaf(rng, (m, 2 * d))
    spans = enumerate_spans(m, 3)
    scorer = SpanScorer(4 * d, 3, 1, rng)
    cases.append(("span_softmax_nll",
                  lambda: nll_loss(score_and_normalize(scorer, span_embeddings(H, spans), spans),
                                   (1, 2)),
                  {**_named(scorer), "H": H}))
    s = _leaf(rng, (m,), -2, 2)
    cases.append(("membership_loss", lambda: obj.membership_loss(s, (1, 2)), {"s": s}))
    E, Tr = _leaf(rng, (m, 3)), _leaf(rng, (3, 3))
    for constrained in (True, False):
        name = "bio_crf_loss" + ("" if constrained else "_unconstrained")
        cases.append((name, lambda c=constrained: obj.bio_crf_loss(obj.BioPotentials(E, Tr),
                                                                   (1, 2), c),
                      {"emissions": E, "transitions": Tr}))
    st, en = _leaf(rng, (m,)), _leaf(rng, (m,))
    cases.append(("endpoints_loss",
                  lambda: obj.endpoints_loss(obj.EndpointDistributions(st, en), (0, 2)),
                  {"start": st, "end": en}))
    scores = _leaf(rng, (6, 1), -2, 2)
    cases.append(("span_logistic_loss", lambda: obj.span_logistic_loss(scores, 4),
                  {"scores": scores}))
    return cases


TOY_VOCAB = ["what", "turns", "the", "rotor", "wind", "blades", "spin"]


def toy_model(objective: str, seed: int = 0, hidden: int = 3, emb_dim: int = 4) -> RasorModel:
    """A tiny float64 model with trainable OOV buckets."""
    config = TrainConfig(hidden_dim=hidden, ffnn_width=3, embedding_dim=emb_dim, objective=objective,
                         oov_buckets=3, train_oov=True, seed=seed, max_span_length=3)
    rng = np.random.default_rng(seed + 100)
    store = EmbeddingStore({w: i for i, w in enumerate(TOY_VOCAB)},
                           rng.normal(size=(len(TOY_VOCAB), emb_dim)), oov_buckets=3, seed=seed)
    with T.precision(np.float64):
        return RasorModel(config, Embedder(store, train_oov=True, dtype=np.float64))


TOY_QUESTION = ["what", "turns", "rotor"]
TOY_PASSAGE = ["wind", "spins", "the", "blades"]  # "spins" is out of vocabulary
TOY_GOLD = (2, 3)


def _model_cases(objectives=OBJECTIVES):
    cases = []
    for objective in objectives:
        model = toy_model(objective)

        def loss(model=model):
            # a fresh, identically seeded rng keeps the dropout masks fixed
            out = model.forward(TOY_QUESTION, TOY_PASSAGE, training=True,
                                rng=np.random.default_rng(11))
            return model.loss(out, TOY_GOLD)

        cases.append((f"model_{objective}", loss, model.named_parameters()))
    return cases


def run_suite(include_model: bool = True, objectives=OBJECTIVES, seed: int = 0) -> list[GradResult]:
    results = []
    with T.precision(np.float64):
        rng = np.random.default_rng(seed)
        for name, fn, params in _op_cases(rng) + _layer_cases(rng):
            results += check(name, fn, params, OP_TOLERANCE)
        if include_model:
            for name, fn, params in _model_cases(objectives):
                results += check(name, fn, params, MODEL_TOLERANCE)
    return results


def worst(results) -> GradResult:
    return max(results, key=lambda r: r.error / r.tolerance)
