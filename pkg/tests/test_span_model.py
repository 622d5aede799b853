import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from rasor import tensor as T
from rasor.config import TrainConfig
from rasor.embeddings import Embedder, EmbeddingStore
from rasor.errors import ContractError, UnreachableGold
from rasor.layers import BiLSTM
from rasor.model import RasorModel
from rasor.span_model import (Span, SpanDistribution, SpanScorer, decode_argmax, encode_passage,
                              enumerate_spans, nll_loss, score_and_normalize, span_count,
                              span_embeddings)


def test_enumeration_examples():
    assert len(enumerate_spans(4, 30)) == 10
    assert len(enumerate_spans(5, 2)) == 9
    assert enumerate_spans(1) == [(0, 0)]
    with pytest.raises(ContractError):
        enumerate_spans(0)


@given(st.integers(1, 12), st.integers(1, 14))
def test_enumeration_matches_brute_force(m, L):
    spans = enumerate_spans(m, L)
    assert [tuple(s) for s in spans] == oracles.brute_spans(m, L)
    assert len(spans) == span_count(m, L) == sum(min(L, m - i) for i in range(m))


@given(st.integers(1, 10), st.integers(1, 5), st.integers(0, 7))
def test_enumeration_shift_equivariance(m, L, k):
    shifted = [(s + k, e + k) for s, e in enumerate_spans(m, L)]
    window = [(s, e) for s, e in enumerate_spans(m + k, L) if s >= k]
    assert shifted == window


def test_encode_passage_zero_params_and_shape():
    net = BiLSTM(8, 50, 2, np.random.default_rng(0))
    assert encode_passage(net, T.zeros((6, 8))).shape == (6, 100)
    for _, p in net.named_parameters():
        p.data[...] = 0
    assert not encode_passage(net, T.ones((6, 8))).data.any()


def test_span_embeddings():
    v = T.tensor(np.arange(12, dtype=float).reshape(4, 3))
    h = span_embeddings(v, [Span(2, 2), Span(0, 3)]).data
    assert np.array_equal(h[0], np.concatenate([v.data[2], v.data[2]]))
    assert np.array_equal(h[1], np.concatenate([v.data[0], v.data[3]]))
    assert span_embeddings(T.zeros((3, 100)), enumerate_spans(3)).shape[1] == 200
    with pytest.raises(ContractError):
        span_embeddings(v, [Span(2, 4)])


def test_identical_embeddings_uniform():
    scorer = SpanScorer(4, 5, 1, np.random.default_rng(0))
    h = T.tensor(np.tile([0.3, -0.1, 0.5, 1.0], (10, 1)))
    dist = score_and_normalize(scorer, h)
    assert np.allclose(dist.probs, 0.1)


def test_scores_match_direct_softmax():
    rng = np.random.default_rng(1)
    scorer = SpanScorer(4, 6, 1, rng)
    scorer.ffnn.biases[0].data[...] = rng.normal(size=6) * 0.1
    x = rng.normal(size=(5, 4))
    W, b, w = scorer.ffnn.weights[0].data, scorer.ffnn.biases[0].data, scorer.w_a.data
    s = (np.maximum(0, x @ W + b) @ w).reshape(-1)
    dist = score_and_normalize(scorer, T.tensor(x))
    assert np.allclose(dist.probs, np.exp(s) / np.exp(s).sum(), atol=1e-6)
    assert abs(dist.probs.sum() - 1) < 1e-6


def _dist(scores, m=None):
    scores = np.asarray(scores, dtype=np.float64)
    spans = enumerate_spans(m) if m else [Span(i, i) for i in range(len(scores))]
    with T.precision(np.float64):
        return SpanDistribution(spans, T.parameter(scores.reshape(-1, 1)))


def test_decode_examples():
    assert decode_argmax(_dist([0, 3, 1])) == (1, 1)
    assert decode_argmax(_dist(np.zeros(6), m=3)) == (0, 0)


def test_decode_vs_exhaustive():
    rng = np.random.default_rng(2)
    for _ in range(20):
        m = int(rng.integers(1, 8))
        scores = rng.integers(-2, 3, size=span_count(m)).astype(float)
        spans = enumerate_spans(m)
        best = max(scores)
        want = min(s for s, v in zip(spans, scores) if v == best)
        assert decode_argmax(_dist(scores, m)) == want


def test_nll_examples():
    assert nll_loss(_dist(np.zeros(10)), (3, 3)).item() == pytest.approx(math.log(10), abs=1e-9)
    scores = np.zeros(10)
    scores[4] = 30
    assert nll_loss(_dist(scores), (4, 4)).item() < 1e-12


def test_nll_gradient_is_p_minus_onehot():
    rng = np.random.default_rng(3)
    dist = _dist(rng.normal(size=7))
    T.backward(nll_loss(dist, (2, 2)))
    onehot = np.eye(7)[2]
    assert np.allclose(dist.scores.grad.reshape(-1), dist.probs - onehot, atol=1e-6)


def test_gold_outside_candidates_signals_skip():
    with pytest.raises(UnreachableGold):
        nll_loss(_dist(np.zeros(6), m=3), (0, 5))


def _model(objective="span_softmax", max_len=30, seed=0):
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(20)]
    store = EmbeddingStore({w: i for i, w in enumerate(words)}, rng.normal(size=(20, 8)),
                           oov_buckets=3)
    cfg = TrainConfig(hidden_dim=4, ffnn_width=6, embedding_dim=8, oov_buckets=3,
                      objective=objective, max_span_length=max_len, seed=seed)
    return RasorModel(cfg, Embedder(store)), words


def test_model_global_normalization_various_lengths():
    model, words = _model()
    rng = np.random.default_rng(4)
    for m in (1, 5, 50, 200):
        _, out = model.predict(["w1", "w2"], [words[i] for i in rng.integers(0, 20, size=m)])
        assert len(out.spans) == span_count(m, 30)
        assert abs(out.distribution.probs.sum() - 1) < 1e-6


def test_model_single_bilstm_pass_per_example():
    model, words = _model()
    before = model.passage.calls
    model.predict(["w1"], words * 10)
    assert model.passage.calls - before == 1


def test_model_rejects_overlong_gold():
    model, words = _model(max_len=3)
    out = model.forward(["w1"], words[:8])
    with pytest.raises(UnreachableGold):
        model.loss(out, (0, 5))
    T.current_graph().clear()


def test_model_top_spans_sorted():
    model, words = _model()
    _, out = model.predict(["w3"], words[:6])
    top = model.top_spans(out, 3)
    assert len(top) == 3
    assert top[0][1] >= top[1][1] >= top[2][1]
    assert top[0][0] == model.decode(out)
