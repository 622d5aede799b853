"""SQuAD v1.1 reading, offset-preserving tokenization and answer alignment."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import FormatError
from .punctuation import is_punctuation
from .span_model import Span


@dataclass(frozen=True)
class Answer:
    text: str
    start: int  # character offset into the passage


@dataclass
class RawExample:
    qid: str
    question: str
    context: str
    answers: list


@dataclass
class TokenizedExample:
    qid: str
    question: list
    passage: list
    offsets: list          # (begin, end) character span of each passage token, end exclusive
    context: str
    answers: list          # reference answer strings, all of them
    golds: list = field(default_factory=list)  # aligned Span per answer, None if unalignable

    @property
    def gold(self) -> Span | None:
        """Training target: the first reference answer."""
        return self.golds[0] if self.golds else None

    def span_text(self, span) -> str:
        """Original passage substring covered by ``span`` (offset recovery)."""
        span = Span(*span)
        return self.context[self.offsets[span.start][0]:self.offsets[span.end][1]]


def _field(obj, name, where):
    if not isinstance(obj, dict) or name not in obj:
        raise FormatError(f"{where}: missing field {name!r}")
    return obj[name]


def parse_dataset(path) -> list[RawExample]:
    """Flatten data -> paragraphs -> qas into one RawExample per question."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc
    return parse_squad(doc, str(path))


def parse_squad(doc, source: str = "<squad>") -> list[RawExample]:
    out = []
    for a, article in enumerate(_field(doc, "data", source)):
        for p, para in enumerate(_field(article, "paragraphs", f"{source}: data[{a}]")):
            where = f"{source}: data[{a}].paragraphs[{p}]"
            context = _field(para, "context", where)
            for q, qa in enumerate(_field(para, "qas", where)):
                qwhere = f"{where}.qas[{q}]"
                answers = []
                for k, ans in enumerate(_field(qa, "answers", qwhere)):
                    awhere = f"{qwhere}.answers[{k}]"
                    text = _field(ans, "text", awhere)
                    start = _field(ans, "answer_start", awhere)
                    if not isinstance(start, int) or not 0 <= start < max(1, len(context)):
                        raise FormatError(f"{awhere}: answer_start {start!r} outside the passage")
                    answers.append(Answer(text, start))
                qid = str(_field(qa, "id", qwhere))
                if not answers:
                    raise FormatError(f"{qwhere}: question {qid} has no answers")
                out.append(RawExample(qid, _field(qa, "question", qwhere), context, answers))
    return out


def tokenize_with_offsets(text: str):
    """Whitespace split, then peel leading/trailing punctuation into tokens.

    Returns ``(tokens, spans)`` with ``spans[k] = (begin, end)`` such that
    ``text[begin:end] == tokens[k]``.
    """
    tokens, spans = [], []
    n = len(text)
    i = 0
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        lo, hi = i, j
        while lo < hi and is_punctuation(text[lo]):
            spans.append((lo, lo + 1))
            lo += 1
        trailing = []
        while hi > lo and is_punctuation(text[hi - 1]):
            trailing.append((hi - 1, hi))
            hi -= 1
        if lo < hi:
            spans.append((lo, hi))
        spans.extend(reversed(trailing))
        i = j
    tokens = [text[b:e] for b, e in spans]
    return tokens, spans


def align_answer_span(offsets, answer_text: str, answer_start: int) -> Span | None:
    """Smallest token range overlapping [answer_start, answer_start + len(answer_text)).

    Returns None when no token overlaps the answer characters.
    """
    begin, end = answer_start, answer_start + max(1, len(answer_text))
    hits = [k for k, (b, e) in enumerate(offsets) if b < end and e > begin]
    if not hits:
        return None
    return Span(hits[0], hits[-1])


@dataclass
class DropCounters:
    unalignable: int = 0
    too_long: int = 0

    def as_dict(self) -> dict:
        return {"unalignable": self.unalignable, "too_long": self.too_long}


def tokenize_example(raw: RawExample) -> TokenizedExample:
    passage, offsets = tokenize_with_offsets(raw.context)
    question, _ = tokenize_with_offsets(raw.question)
    golds = [align_answer_span(offsets, a.text, a.start) for a in raw.answers]
    return TokenizedExample(raw.qid, question, passage, offsets, raw.context,
                            [a.text for a in raw.answers], golds)


def load_examples(path) -> list[TokenizedExample]:
    return [tokenize_example(r) for r in parse_dataset(path)]


def training_examples(examples, max_span_length: int, counters: DropCounters | None = None):
    """Examples usable as training targets; the rest are counted, not raised."""
    counters = counters if counters is not None else DropCounters()
    kept = []
    for ex in examples:
        if ex.gold is None or not ex.passage or not ex.question:
            counters.unalignable += 1
        elif ex.gold.length > max_span_length:
            counters.too_long += 1
        else:
            kept.append(ex)
    return kept, counters
