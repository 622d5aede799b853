"""Exact match / token F1 in the style of the official SQuAD v1.1 scorer, plus
prediction-length breakdowns and attention dumps."""

from __future__ import annotations

import csv
import json
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .data import tokenize_with_offsets
from .errors import ContractError
from .punctuation import is_punctuation

_ARTICLES = re.compile(r"\b(a|an|the)\b")


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop a/an/the, collapse whitespace."""
    text = text.lower()
    text = "".join(ch for ch in text if not is_punctuation(ch))
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def _references(references):
    references = list(references)
    if not references:
        raise ContractError("at least one reference answer is required")
    return references


def exact_match(prediction: str, references) -> int:
    pred = normalize_answer(prediction)
    return int(any(pred == normalize_answer(r) for r in _references(references)))


def _f1(prediction: str, reference: str) -> float:
    pred = normalize_answer(prediction).split()
    ref = normalize_answer(reference).split()
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    same = sum((Counter(pred) & Counter(ref)).values())
    if same == 0:
        return 0.0
    precision = same / len(pred)
    recall = same / len(ref)
    return 2 * precision * recall / (precision + recall)


def f1_score(prediction: str, references) -> float:
    return max(_f1(prediction, r) for r in _references(references))


@dataclass
class QuestionRecord:
    qid: str
    prediction: str
    references: list
    exact_match: int
    f1: float
    length: int
    missing: bool = False


@dataclass
class EvalReport:
    exact_match: float
    f1: float
    records: list
    counters: dict
    length_table: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "exact_match": self.exact_match,
            "f1": self.f1,
            "total": len(self.records),
            "counters": dict(self.counters),
            "length_table": self.length_table,
            "records": [
                {"id": r.qid, "prediction": r.prediction, "exact_match": r.exact_match,
                 "f1": r.f1, "length": r.length, "missing": r.missing}
                for r in self.records
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def _token_length(text: str) -> int:
    return len(tokenize_with_offsets(text)[0])


def evaluate_dataset(predictions: dict, dataset, lengths: dict | None = None,
                     max_length: int = 30, counters: dict | None = None) -> EvalReport:
    """Score ``{qid: answer text}`` against every example's references.

    ``dataset`` holds objects with ``qid`` and ``answers``.  Missing
    predictions score zero and are counted.  ``lengths`` optionally gives the
    predicted token length per qid; otherwise the answer text is tokenized.
    """
    records = []
    missing = 0
    for ex in dataset:
        pred = predictions.get(ex.qid)
        absent = pred is None
        if absent:
            missing += 1
            pred = ""
        length = lengths[ex.qid] if lengths and ex.qid in lengths else _token_length(pred)
        records.append(QuestionRecord(ex.qid, pred, list(ex.answers),
                                      exact_match(pred, ex.answers), f1_score(pred, ex.answers),
                                      length, absent))
    n = len(records)
    em = 100.0 * sum(r.exact_match for r in records) / n if n else 0.0
    f1 = 100.0 * sum(r.f1 for r in records) / n if n else 0.0
    all_counters = {"missing_predictions": missing, **(counters or {})}
    return EvalReport(em, f1, records, all_counters, length_bucket_report(records, max_length))


def length_bucket_report(records, max_length: int = 30) -> list:
    """Count, EM and F1 per predicted length; lengths above ``max_length``
    share one ``"<max>+"`` bucket and empty predictions form bucket ``0``."""
    buckets: dict = {}
    for r in records:
        key = r.length if r.length <= max_length else f"{max_length}+"
        buckets.setdefault(key, []).append(r)

    def order(key):
        return (1, 0) if isinstance(key, str) else (0, key)

    table = []
    for key in sorted(buckets, key=order):
        rows = buckets[key]
        table.append({
            "length": key,
            "count": len(rows),
            "exact_match": 100.0 * sum(r.exact_match for r in rows) / len(rows),
            "f1": 100.0 * sum(r.f1 for r in rows) / len(rows),
        })
    return table


def write_length_csv(table, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["length", "count", "exact_match", "f1"])
        for row in table:
            writer.writerow([row["length"], row["count"], f"{row['exact_match']:.4f}",
                             f"{row['f1']:.4f}"])


def attention_dump(example, model, k: int = 3) -> dict:
    """Both question attention masks and the top-``k`` spans for one example."""
    span, out = model.predict(example.question, example.passage)
    aligned = out.attention["aligned"].data.astype(np.float64)
    independent = out.attention["independent"].data.reshape(-1).astype(np.float64)
    top = [{"start": s.start, "end": s.end, "text": example.span_text(s),
            "probability": None if p is None else round(p, 8)}
           for s, p in model.top_spans(out, k)]
    return {
        "id": example.qid,
        "question": list(example.question),
        "passage": list(example.passage),
        "prediction": {"start": span.start, "end": span.end, "text": example.span_text(span)},
        "independent_attention": [round(float(v), 8) for v in independent],
        "aligned_attention": [[round(float(v), 8) for v in row] for row in aligned],
        "top_spans": top,
    }
