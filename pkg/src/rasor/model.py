"""The full question answering model: question-focused passage embeddings,
one passage BiLSTM pass, and an objective-specific output head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import objectives as obj
from . import tensor as T
from .config import TrainConfig
from .embeddings import Embedder
from .errors import ContractError, UnreachableGold
from .layers import FFNN, NO_DROPOUT, BiLSTM, Dropout, uniform_weight
from .question import QuestionEncoder, build_question_focused_embeddings
from .span_model import (Span, SpanDistribution, SpanScorer, decode_argmax, encode_passage,
                         enumerate_spans, nll_loss, score_and_normalize, span_embeddings)
from .tensor import Tensor


class WordHead:
    """FFNN over each encoded passage word followed by a linear map to ``outputs`` logits."""

    def __init__(self, in_dim: int, width: int, depth: int, outputs: int,
                 rng: np.random.Generator, output_relu: bool = True):
        self.ffnn = FFNN([in_dim] + [width] * depth, rng, output_relu)
        self.w = uniform_weight(rng, (width, outputs))

    def __call__(self, encoded: Tensor) -> Tensor:
        return T.matmul(self.ffnn(encoded), self.w)

    def named_parameters(self):
        return [(f"ffnn.{n}", p) for n, p in self.ffnn.named_parameters()] + [("w", self.w)]


@dataclass
class Output:
    """Everything a forward pass produced for one example."""

    objective: str
    spans: list
    encoded: Tensor
    attention: dict
    distribution: SpanDistribution | None = None
    word_scores: Tensor | None = None
    potentials: obj.BioPotentials | None = None
    endpoints: obj.EndpointDistributions | None = None
    extras: dict = field(default_factory=dict)


class RasorModel:
    def __init__(self, config: TrainConfig, embedder: Embedder):
        if embedder.dim != config.embedding_dim:
            raise ContractError(f"embeddings have dimension {embedder.dim}, "
                                f"config expects {config.embedding_dim}")
        self.config = config
        self.embedder = embedder
        self.dtype = embedder.dtype
        rng = np.random.default_rng(config.seed)
        c = config
        qlayer = "top" if c.qindep_layer == "top" else int(c.qindep_layer)
        with T.precision(self.dtype):
            self.question = QuestionEncoder(
                c.embedding_dim, c.hidden_dim, c.question_layers, rng,
                ffnn_width=c.ffnn_width, ffnn_depth=c.ffnn_depth,
                output_relu=c.ffnn_output_relu, tie_align=c.tie_align_ffnn, qindep_layer=qlayer)
            self.passage = BiLSTM(self.question.out_dim, c.hidden_dim, c.passage_layers, rng)
            enc = self.passage.out_dim
            head = dict(width=c.ffnn_width, depth=c.ffnn_depth, rng=rng,
                        output_relu=c.ffnn_output_relu)
            self.heads = {}
            if c.objective in ("span_softmax", "span_logistic"):
                self.heads["span"] = SpanScorer(2 * enc, c.ffnn_width, c.ffnn_depth, rng,
                                                c.ffnn_output_relu)
            elif c.objective == "endpoints":
                self.heads["start"] = WordHead(enc, outputs=1, **head)
                self.heads["end"] = WordHead(enc, outputs=1, **head)
            elif c.objective == "membership":
                self.heads["member"] = WordHead(enc, outputs=1, **head)
            elif c.objective == "bio_crf":
                self.heads["bio"] = WordHead(enc, outputs=3, **head)
                self.transitions = T.parameter(rng.uniform(-0.1, 0.1, size=(3, 3)))

    def named_parameters(self) -> dict:
        out = {}
        for prefix, part in (("embedding", self.embedder), ("question", self.question),
                             ("passage", self.passage)):
            for name, p in part.named_parameters():
                out[f"{prefix}.{name}"] = p
        for key in sorted(self.heads):
            for name, p in self.heads[key].named_parameters():
                out[f"head.{key}.{name}"] = p
        if self.config.objective == "bio_crf":
            out["head.bio.transitions"] = self.transitions
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def dropout(self, training: bool, rng: np.random.Generator | None) -> Dropout:
        if not training or self.config.dropout == 0:
            return NO_DROPOUT
        return Dropout(self.config.dropout, True, rng, self.config.placement)

    def forward(self, question_tokens, passage_tokens, training: bool = False,
                rng: np.random.Generator | None = None) -> Output:
        if not passage_tokens:
            raise ContractError("passage is empty")
        if not question_tokens:
            raise ContractError("question is empty")
        drop = self.dropout(training, rng)
        P = self.embedder(passage_tokens)
        Q = self.embedder(question_tokens)
        p_star, attention = build_question_focused_embeddings(self.question, P, Q, drop)
        encoded = encode_passage(self.passage, p_star, drop)
        objective = self.config.objective
        m = len(passage_tokens)
        out = Output(objective, [], encoded, attention)
        if objective in ("span_softmax", "span_logistic"):
            out.spans = enumerate_spans(m, self.config.max_span_length)
            h = span_embeddings(encoded, out.spans)
            out.distribution = score_and_normalize(self.heads["span"], h, out.spans)
        elif objective == "endpoints":
            out.endpoints = obj.EndpointDistributions(
                T.reshape(self.heads["start"](encoded), (-1,)),
                T.reshape(self.heads["end"](encoded), (-1,)))
        elif objective == "membership":
            out.word_scores = T.reshape(self.heads["member"](encoded), (-1,))
        else:
            out.potentials = obj.BioPotentials(self.heads["bio"](encoded), self.transitions)
        return out

    def loss(self, out: Output, gold) -> Tensor:
        """Per-example training loss for the configured objective."""
        gold = Span(*gold)
        if gold.length > self.config.max_span_length:
            raise UnreachableGold(f"gold span {tuple(gold)} has {gold.length} tokens, "
                                  f"the cap is {self.config.max_span_length}")
        objective = out.objective
        if objective == "span_softmax":
            return nll_loss(out.distribution, gold)
        if objective == "span_logistic":
            return obj.span_logistic_loss(out.distribution.scores, out.distribution.index(gold))
        if objective == "endpoints":
            return obj.endpoints_loss(out.endpoints, gold)
        if objective == "membership":
            return obj.membership_loss(out.word_scores, gold)
        return obj.bio_crf_loss(out.potentials, gold, self.config.crf_constrained_training)

    def decode(self, out: Output) -> Span:
        """Exact decoder paired with the objective."""
        objective = out.objective
        if objective in ("span_softmax", "span_logistic"):
            return decode_argmax(out.distribution)
        if objective == "endpoints":
            return obj.endpoints_decode(out.endpoints.start_probs, out.endpoints.end_probs)
        if objective == "membership":
            scores = out.word_scores.data
            if self.config.membership_scores == "prob_centered":
                scores = obj.centered_membership_scores(scores)
            return obj.membership_decode(scores)
        return obj.bio_viterbi_decode(out.potentials.emissions.data,
                                      out.potentials.transitions.data)

    def top_spans(self, out: Output, k: int = 3):
        """Up to ``k`` (span, probability) pairs, best first.

        Span objectives rank the global span distribution and endpoints ranks
        P_start * P_end over valid pairs; the word-level objectives only
        report their decoded span, without a probability.
        """
        if out.distribution is not None:
            return out.distribution.top(k)
        if out.endpoints is not None:
            ps, pe = out.endpoints.start_probs, out.endpoints.end_probs
            m = ps.size
            pairs = [(Span(i, j), ps[i] * pe[j]) for i in range(m) for j in range(i, m)]
            pairs.sort(key=lambda x: -x[1])
            return [(s, float(p)) for s, p in pairs[:k]]
        return [(self.decode(out), None)]

    def predict(self, question_tokens, passage_tokens):
        with T.no_grad():
            out = self.forward(question_tokens, passage_tokens, training=False)
        return self.decode(out), out

