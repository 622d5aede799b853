"""Alternative learning objectives over the passage BiLSTM, with exact decoders.

* membership: per-word logistic loss, decoded by maximum contiguous sum
* BIO sequence: linear-chain CRF, decoded by constrained Viterbi
* endpoints: independent start/end softmaxes, decoded under start <= end
* span logistic: independent binary logistic loss on every span score
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .span_model import Span
from .tensor import Tensor

B, I, O = 0, 1, 2
LABELS = "BIO"
# Stands in for -inf inside the autodiff graph: exp() underflows to exactly
# zero while every intermediate stays finite.
NEG_INF = -1e30

# Constrained lattice over one contiguous segment: O* B I* O*.  The two O
# states separate "before the answer" from "after the answer".
_STATE_LABEL = np.array([B, I, O, O])  # states: B, I, O_before, O_after
_ALLOWED = np.array([
    # to:  B      I      Ob     Oa
    [False, True, False, True],   # from B
    [False, True, False, True],   # from I
    [True, False, True, False],   # from O_before
    [False, False, False, True],  # from O_after
])
_START = np.array([True, False, True, False])
_STOP = np.array([True, True, False, True])
# Viterbi tie preference: an earlier start, then an earlier end.
_PREFERENCE = (0, 3, 1, 2)


def _check_gold(gold, m: int) -> Span:
    gold = Span(*gold)
    if not 0 <= gold.start <= gold.end < m:
        raise ContractError(f"gold span {tuple(gold)} invalid for {m} tokens")
    return gold


def _flat(scores: Tensor) -> Tensor:
    return scores if scores.data.ndim == 1 else T.reshape(scores, (-1,))


# ---------------------------------------------------------------------------
# membership


def membership_labels(m: int, gold) -> np.ndarray:
    gold = _check_gold(gold, m)
    labels = np.zeros(m)
    labels[gold.start:gold.end + 1] = 1
    return labels


def membership_loss(scores: Tensor, gold) -> Tensor:
    """Sum of per-word logistic losses, label 1 inside the gold span."""
    s = _flat(scores)
    gold = _check_gold(gold, s.shape[0])
    return T.sum_all(T.softplus(s)) - T.sum_all(s[gold.start:gold.end + 1])


def membership_decode(scores) -> Span:
    """Nonempty contiguous span of maximum total score, in one linear pass.

    Ties go to the shorter span, then the leftmost.
    """
    s = np.asarray(getattr(scores, "data", scores), dtype=np.float64).reshape(-1)
    if s.size == 0:
        raise ContractError("cannot decode an empty passage")
    best = (s[0], 0, 0)
    run_sum, run_start = s[0], 0
    for i in range(1, s.size):
        # compare the rounded sums themselves; restarting wins ties because the
        # singleton is the shorter span ending at i
        extended = run_sum + s[i]
        if s[i] >= extended:
            run_sum, run_start = s[i], i
        else:
            run_sum = extended
        cur_len, best_len = i - run_start, best[2] - best[1]
        if run_sum > best[0] or (run_sum == best[0] and cur_len < best_len):
            best = (run_sum, run_start, i)
    return Span(best[1], best[2])


def centered_membership_scores(logits) -> np.ndarray:
    """Alternative decode scores: P(member) - 1/2."""
    s = np.asarray(getattr(logits, "data", logits), dtype=np.float64).reshape(-1)
    return 0.5 * np.tanh(0.5 * s)


# ---------------------------------------------------------------------------
# BIO CRF


@dataclass
class BioPotentials:
    emissions: Tensor    # (m, 3) over B, I, O
    transitions: Tensor  # (3, 3), transitions[a, b] scores label a -> label b

    @property
    def length(self) -> int:
        return self.emissions.shape[0]


def bio_labels(m: int, gold) -> np.ndarray:
    gold = _check_gold(gold, m)
    labels = np.full(m, O)
    labels[gold.start] = B
    labels[gold.start + 1:gold.end + 1] = I
    return labels


def _lattice(pot: BioPotentials, constrained: bool):
    if constrained:
        idx = _STATE_LABEL
        emissions = pot.emissions[:, idx]
        trans = T.add(pot.transitions[idx[:, None], idx[None, :]],
                      T.Tensor(np.where(_ALLOWED, 0.0, NEG_INF), dtype=pot.emissions.dtype))
        start = np.where(_START, 0.0, NEG_INF)
        stop = np.where(_STOP, 0.0, NEG_INF)
    else:
        emissions, trans = pot.emissions, pot.transitions
        start = stop = np.zeros(3)
    return emissions, trans, start, stop


def bio_log_partition(pot: BioPotentials, constrained: bool = True) -> Tensor:
    """Forward algorithm.  Constrained mode sums only over sequences with
    exactly one B I* segment; unconstrained mode over all 3^m sequences."""
    emissions, trans, start, stop = _lattice(pot, constrained)
    k = trans.shape[0]
    dtype = pot.emissions.dtype
    alpha = emissions[0:1] + T.Tensor(start[None, :], dtype=dtype)
    for t in range(1, pot.length):
        spread = T.transpose(T.repeat_rows(alpha, k)) + trans  # [prev, next]
        alpha = T.reshape(T.log_sum_exp(spread, axis=0), (1, k)) + emissions[t:t + 1]
    return T.log_sum_exp(alpha + T.Tensor(stop[None, :], dtype=dtype))


def bio_sequence_score(pot: BioPotentials, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.intp)
    m = pot.length
    score = T.sum_all(pot.emissions[np.arange(m), labels])
    if m > 1:
        score = score + T.sum_all(pot.transitions[labels[:-1], labels[1:]])
    return score


def bio_crf_loss(pot: BioPotentials, gold, constrained: bool = True) -> Tensor:
    """-log P(gold label sequence) under the CRF."""
    labels = bio_labels(pot.length, gold)
    return bio_log_partition(pot, constrained) - bio_sequence_score(pot, labels)


def bio_viterbi_decode(emissions, transitions) -> Span:
    """Best label sequence with exactly one B I* segment, returned as its span.

    Equal-scoring sequences resolve to the smallest (start, end).
    """
    E = np.asarray(getattr(emissions, "data", emissions), dtype=np.float64)
    Tr = np.asarray(getattr(transitions, "data", transitions), dtype=np.float64)
    m = E.shape[0]
    if m < 1:
        raise ContractError("cannot decode an empty passage")
    E4 = E[:, _STATE_LABEL]
    T4 = np.where(_ALLOWED, Tr[_STATE_LABEL[:, None], _STATE_LABEL[None, :]], -np.inf)
    # best[t, s]: best score of positions t+1.. given state s at t
    best = np.empty((m, 4))
    best[m - 1] = np.where(_STOP, 0.0, -np.inf)
    for t in range(m - 2, -1, -1):
        best[t] = np.max(T4 + E4[t + 1][None, :] + best[t + 1][None, :], axis=1)

    def pick(values):
        top = max(values[s] for s in _PREFERENCE)
        for s in _PREFERENCE:
            if values[s] >= top - 1e-9 * (1 + abs(top)):
                return s

    state = pick(np.where(_START, E4[0] + best[0], -np.inf))
    states = [state]
    for t in range(1, m):
        state = pick(T4[state] + E4[t] + best[t])
        states.append(state)
    start = states.index(0)
    end = start
    while end + 1 < m and states[end + 1] == 1:
        end += 1
    return Span(start, end)


# ---------------------------------------------------------------------------
# endpoints


@dataclass
class EndpointDistributions:
    start_logits: Tensor  # (m,)
    end_logits: Tensor    # (m,)

    def _probs(self, logits: Tensor) -> np.ndarray:
        s = logits.data.reshape(-1).astype(np.float64)
        e = np.exp(s - s.max())
        return e / e.sum()

    @property
    def start_probs(self) -> np.ndarray:
        return self._probs(self.start_logits)

    @property
    def end_probs(self) -> np.ndarray:
        return self._probs(self.end_logits)


def _log_softmax_vector(logits: Tensor) -> Tensor:
    return T.log_softmax_rows(T.reshape(logits, (1, -1)))


def endpoints_loss(dists: EndpointDistributions, gold) -> Tensor:
    """-log P_start(gold.start) - log P_end(gold.end)."""
    m = dists.start_logits.data.size
    gold = _check_gold(gold, m)
    return -(_log_softmax_vector(dists.start_logits)[0, gold.start]
             + _log_softmax_vector(dists.end_logits)[0, gold.end])


def endpoints_decode(p_start, p_end) -> Span:
    """argmax over i <= j of p_start[i] * p_end[j] in a single scan.

    Ties resolve to the smallest (start, end).
    """
    ps = np.asarray(p_start, dtype=np.float64).reshape(-1)
    pe = np.asarray(p_end, dtype=np.float64).reshape(-1)
    if ps.size == 0 or ps.size != pe.size:
        raise ContractError("endpoint distributions must be nonempty and equally long")
    best_start = 0
    best = (-np.inf, 0, 0)
    for j in range(ps.size):
        if ps[j] > ps[best_start]:
            best_start = j
        value = ps[best_start] * pe[j]
        if value > best[0] or (value == best[0] and (best_start, j) < best[1:]):
            best = (value, best_start, j)
    return Span(best[1], best[2])


# ---------------------------------------------------------------------------
# span logistic


def span_logistic_loss(scores: Tensor, gold_index: int) -> Tensor:
    """Independent binary logistic loss per candidate; only the gold is positive."""
    s = _flat(scores)
    if not 0 <= gold_index < s.shape[0]:
        raise ContractError(f"gold index {gold_index} outside {s.shape[0]} candidates")
    return T.sum_all(T.softplus(s)) - s[gold_index]
