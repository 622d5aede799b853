"""Span enumeration, endpoint span embeddings, global span scoring and decoding.

All candidate spans of a passage share one passage BiLSTM pass; a span is
represented by concatenating the BiLSTM outputs at its two endpoints, so
scoring stays quadratic in passage length.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .errors import ContractError, UnreachableGold
from .layers import FFNN, NO_DROPOUT, BiLSTM, Dropout, uniform_weight
from .tensor import Tensor

MAX_SPAN_LENGTH = 30


class Span(NamedTuple):
    """Inclusive, 0-based token span."""

    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start + 1


SpanCandidate = Span


def enumerate_spans(m: int, max_length: int = MAX_SPAN_LENGTH) -> list[Span]:
    """All spans of at most ``max_length`` tokens, sorted by (start, end)."""
    if m < 1:
        raise ContractError("cannot enumerate spans of an empty passage")
    if max_length < 1:
        raise ContractError("max span length must be positive")
    return [Span(i, j) for i in range(m) for j in range(i, min(m, i + max_length))]


def span_count(m: int, max_length: int = MAX_SPAN_LENGTH) -> int:
    return sum(min(max_length, m - i) for i in range(m))


class SpanScorer:
    """Shared hidden layer(s) plus score vector ``w_a`` applied to every span."""

    def __init__(self, span_dim: int, width: int, depth: int, rng: np.random.Generator,
                 output_relu: bool = True):
        self.ffnn = FFNN([span_dim] + [width] * depth, rng, output_relu)
        self.w_a = uniform_weight(rng, (width, 1))

    def named_parameters(self):
        return [(f"ffnn.{n}", p) for n, p in self.ffnn.named_parameters()] + [("w_a", self.w_a)]


def encode_passage(bilstm: BiLSTM, p_star, drop: Dropout = NO_DROPOUT) -> Tensor:
    """Top-layer passage BiLSTM outputs, one (2d) row per token."""
    return bilstm(p_star, drop)


def span_embeddings(encoded: Tensor, spans) -> Tensor:
    """Rows ``[v_start; v_end]`` for every span, shape (len(spans), 2 * width)."""
    spans = list(spans)
    if not spans:
        raise ContractError("no spans given")
    m = encoded.shape[0]
    idx = np.asarray(spans, dtype=np.intp)
    if idx.min() < 0 or idx[:, 1].max() >= m or np.any(idx[:, 0] > idx[:, 1]):
        raise ContractError(f"span out of range for a passage of {m} tokens")
    return T.concat([T.take_rows(encoded, idx[:, 0]), T.take_rows(encoded, idx[:, 1])], axis=1)


@dataclass
class SpanDistribution:
    spans: list
    scores: Tensor  # (n_spans, 1)
    probs: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.probs is None:
            s = self.scores.data.reshape(-1).astype(np.float64)
            e = np.exp(s - s.max())
            self.probs = e / e.sum()
        self._index = None

    def __len__(self):
        return len(self.spans)

    def index(self, span) -> int:
        if self._index is None:
            self._index = {s: k for k, s in enumerate(self.spans)}
        try:
            return self._index[Span(*span)]
        except KeyError:
            raise UnreachableGold(f"gold span {tuple(span)} is not a candidate") from None

    def top(self, k: int = 3):
        order = np.argsort(-self.probs, kind="stable")[:k]
        return [(self.spans[i], float(self.probs[i])) for i in order]


def span_scores(scorer: SpanScorer, h: Tensor) -> Tensor:
    return T.matmul(scorer.ffnn(h), scorer.w_a)


def score_and_normalize(scorer: SpanScorer, h: Tensor, spans=None) -> SpanDistribution:
    """Score every span embedding and softmax over all candidates of the example."""
    if h.data.ndim != 2 or h.shape[0] < 1:
        raise ContractError("no span candidates to score")
    if spans is None:
        spans = list(range(h.shape[0]))
    return SpanDistribution(list(spans), span_scores(scorer, h))


def decode_argmax(dist: SpanDistribution) -> Span:
    """Most probable span; the candidate list order breaks ties."""
    return dist.spans[int(np.argmax(dist.scores.data.reshape(-1)))]


def nll_loss(dist: SpanDistribution, gold) -> Tensor:
    """-log P(gold) = logsumexp(s) - s_gold."""
    k = dist.index(gold)
    return T.log_sum_exp(dist.scores) - dist.scores[k, 0]
