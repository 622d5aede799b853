"""Question-focused passage word embeddings.

Each passage position gets ``[p_i, q_align_i, q_indep]``: its own word
vector, an attention-weighted mix of question word vectors aligned to it, and
a single attention summary of the question BiLSTM shared by all positions.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .layers import FFNN, NO_DROPOUT, BiLSTM, Dropout, uniform_weight
from .tensor import Tensor


class QuestionEncoder:
    def __init__(self, emb_dim: int, hidden: int, layers: int, rng: np.random.Generator,
                 ffnn_width: int = 100, ffnn_depth: int = 1, output_relu: bool = True,
                 tie_align: bool = False, qindep_layer="top"):
        sizes = [emb_dim] + [ffnn_width] * ffnn_depth
        self.emb_dim = emb_dim
        self.tie_align = tie_align
        self.align_p = FFNN(sizes, rng, output_relu)
        self.align_q = self.align_p if tie_align else FFNN(sizes, rng, output_relu)
        self.bilstm = BiLSTM(emb_dim, hidden, layers, rng)
        self.indep_ffnn = FFNN([2 * hidden] + [ffnn_width] * ffnn_depth, rng, output_relu)
        self.w_q = uniform_weight(rng, (ffnn_width, 1))
        if qindep_layer != "top" and not (isinstance(qindep_layer, int) and 1 <= qindep_layer <= layers):
            raise ConfigError(f"qindep_layer must be 'top' or a layer number in 1..{layers}")
        self.qindep_layer = qindep_layer

    @property
    def out_dim(self) -> int:
        return 2 * self.emb_dim + self.bilstm.out_dim

    def named_parameters(self):
        out = [(f"align_p.{n}", p) for n, p in self.align_p.named_parameters()]
        if not self.tie_align:
            out += [(f"align_q.{n}", p) for n, p in self.align_q.named_parameters()]
        out += [(f"bilstm.{n}", p) for n, p in self.bilstm.named_parameters()]
        out += [(f"indep_ffnn.{n}", p) for n, p in self.indep_ffnn.named_parameters()]
        out.append(("w_q", self.w_q))
        return out


def _check_inputs(P: Tensor | None, Q: Tensor, dim: int):
    if Q.data.ndim != 2 or Q.shape[0] < 1:
        raise ContractError("question must contain at least one word")
    if Q.shape[1] != dim or (P is not None and (P.data.ndim != 2 or P.shape[1] != dim)):
        raise DimensionError(f"word embeddings must have width {dim}")


def passage_aligned_repr(params: QuestionEncoder, P: Tensor, Q: Tensor):
    """Soft-align every passage word to the question.

    Returns ``(q_align, attention)``: (m, dim) mixtures of the raw question
    vectors and the (m, n) row-stochastic attention matrix.
    """
    _check_inputs(P, Q, params.emb_dim)
    scores = T.matmul(params.align_p(P), T.transpose(params.align_q(Q)))
    attention = T.softmax_rows(scores)
    return T.matmul(attention, Q), attention


def passage_independent_repr(params: QuestionEncoder, Q: Tensor, drop: Dropout = NO_DROPOUT):
    """Attention summary of the question BiLSTM against a learned query vector.

    Returns ``(q_indep, attention)`` with shapes (1, 2d) and (1, n).
    """
    _check_inputs(None, Q, params.emb_dim)
    layers = params.bilstm(Q, drop, all_layers=True)
    encoded = layers[-1] if params.qindep_layer == "top" else layers[params.qindep_layer - 1]
    scores = T.matmul(params.indep_ffnn(encoded), params.w_q)
    attention = T.softmax_rows(T.transpose(scores))
    return T.matmul(attention, encoded), attention


def build_question_focused_embeddings(params: QuestionEncoder, P: Tensor, Q: Tensor,
                                      drop: Dropout = NO_DROPOUT):
    """Return ``(p_star, attentions)`` where p_star is (m, 2*dim + 2d).

    ``attentions`` maps "aligned" and "independent" to their attention tensors.
    """
    q_align, aligned = passage_aligned_repr(params, P, Q)
    q_indep, independent = passage_independent_repr(params, Q, drop)
    p_star = T.concat([P, q_align, T.repeat_rows(q_indep, P.shape[0])], axis=1)
    return p_star, {"aligned": aligned, "independent": independent}
