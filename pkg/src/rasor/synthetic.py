"""Small synthetic QA fixture for overfitting and determinism checks.

Each passage states two or three "the KEY is VALUE ." facts among filler
words; the question asks for one key.  The vocabulary is exactly 50 words.

    python -m rasor.synthetic --out fixtures/
"""

from __future__ import annotations

import argparse
import json
import os

import numpy as np

from .embeddings import write_embeddings

FUNCTION_WORDS = ["what", "is", "the", "of", "?", ".", "and", "a"]
KEYS = ["color", "city", "river", "king", "animal", "metal", "season", "tree",
        "planet", "fruit", "ship", "song"]
VALUES = ["red", "blue", "paris", "nile", "arthur", "lion", "gold", "winter",
          "oak", "mars", "apple", "green", "rome", "silver", "tiger"]
FILLER = ["people", "often", "say", "that", "long", "ago", "there", "was", "many",
          "stories", "told", "here", "by", "old", "men"]
VOCAB = FUNCTION_WORDS + KEYS + VALUES + FILLER
assert len(VOCAB) == len(set(VOCAB)) == 50

SIZE = 32
MIN_LEN, MAX_LEN = 8, 20


def _fact(key, value_words):
    return ["the", key, "is"] + list(value_words) + ["."]


def make_examples(n: int = SIZE, seed: int = 0):
    """Return ``n`` (qid, question, context, answer_text, answer_start) tuples."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        n_facts = int(rng.integers(2, 4))
        keys = rng.choice(len(KEYS), size=n_facts, replace=False)
        facts = []
        for k in keys:
            width = int(rng.integers(1, 3))
            values = [VALUES[i] for i in rng.choice(len(VALUES), size=width, replace=False)]
            facts.append((KEYS[k], values))
        pieces = [_fact(k, v) for k, v in facts]
        body = sum(len(p) for p in pieces)
        if body > MAX_LEN:
            continue
        n_filler = int(rng.integers(max(0, MIN_LEN - body), MAX_LEN - body + 1))
        filler = [FILLER[i] for i in rng.integers(0, len(FILLER), size=n_filler)]
        # scatter the filler words as a prefix, gap and suffix around the facts
        cuts = sorted(int(c) for c in rng.integers(0, n_filler + 1, size=len(pieces)))
        tokens, target_index, answer_tokens = [], int(rng.integers(0, n_facts)), None
        prev = 0
        for idx, (piece, cut) in enumerate(zip(pieces, cuts)):
            tokens += filler[prev:cut]
            prev = cut
            if idx == target_index:
                answer_tokens = (len(tokens) + 3, len(tokens) + 3 + len(facts[idx][1]))
            tokens += piece
        tokens += filler[prev:]
        assert MIN_LEN <= len(tokens) <= MAX_LEN
        # the full stop attaches to the preceding word, as in ordinary text
        text, starts = "", []
        for i, tok in enumerate(tokens):
            if tok == "." and text:
                starts.append(len(text))
                text += tok
            else:
                if text:
                    text += " "
                starts.append(len(text))
                text += tok
        a, b = answer_tokens
        answer_start = starts[a]
        answer_text = text[answer_start:starts[b - 1] + len(tokens[b - 1])]
        key = facts[target_index][0]
        out.append((f"syn-{len(out):03d}", f"what is the {key} ?", text, answer_text,
                    answer_start))
    return out


def to_squad(examples) -> dict:
    paragraphs = [{"context": ctx,
                   "qas": [{"id": qid, "question": q,
                            "answers": [{"text": a, "answer_start": s}]}]}
                  for qid, q, ctx, a, s in examples]
    return {"version": "1.1", "data": [{"title": "synthetic", "paragraphs": paragraphs}]}


def random_embeddings(dim: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0 / np.sqrt(dim), size=(len(VOCAB), dim)).astype(np.float32)


def write_fixture(out_dir, n: int = SIZE, dim: int = 32, seed: int = 0):
    """Write ``synthetic.json`` and ``synthetic.vec``; return both paths."""
    os.makedirs(out_dir, exist_ok=True)
    data_path = os.path.join(out_dir, "synthetic.json")
    emb_path = os.path.join(out_dir, "synthetic.vec")
    with open(data_path, "w", encoding="utf-8") as fh:
        json.dump(to_squad(make_examples(n, seed)), fh, indent=1)
        fh.write("\n")
    write_embeddings(emb_path, VOCAB, random_embeddings(dim, seed))
    return data_path, emb_path


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True)
    parser.add_argument("--size", type=int, default=SIZE)
    parser.add_argument("--dim", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    for path in write_fixture(args.out, args.size, args.dim, args.seed):
        print(path)


if __name__ == "__main__":
    main()
