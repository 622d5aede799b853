"""Frozen pretrained word vectors with hashed out-of-vocabulary buckets."""

from __future__ import annotations

import logging
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import FormatError
from .tensor import Tensor

log = logging.getLogger(__name__)

DEFAULT_DIM = 300
DEFAULT_OOV_BUCKETS = 5000

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


@lru_cache(maxsize=1 << 16)
def fnv1a_64(word: str) -> int:
    h = _FNV_OFFSET
    for byte in word.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def oov_bucket(word: str, buckets: int, seed: int = 0) -> int:
    return ((fnv1a_64(word) ^ (seed & _MASK64)) % buckets)


class EmbeddingStore:
    """Word -> vector lookup.

    Lookup order is exact match, then lowercase match, then the word's OOV
    bucket.  Bucket vectors are drawn uniform(-0.5, 0.5) / sqrt(dim) from
    ``seed`` so they are reproducible without being saved.
    """

    def __init__(self, vocab: dict, matrix: np.ndarray, oov_buckets: int = DEFAULT_OOV_BUCKETS,
                 seed: int = 0, warnings: int = 0):
        if matrix.ndim != 2 or matrix.shape[0] != len(vocab):
            raise FormatError("embedding matrix does not match the vocabulary")
        self.vocab = vocab
        self.matrix = matrix.astype(np.float32)
        self.matrix.flags.writeable = False
        self.dim = matrix.shape[1]
        self.seed = seed
        self.warnings = warnings
        rng = np.random.default_rng(seed)
        self.buckets = (rng.uniform(-0.5, 0.5, size=(oov_buckets, self.dim))
                        / np.sqrt(self.dim)).astype(np.float32)
        self.buckets.flags.writeable = False

    def __len__(self):
        return len(self.vocab)

    @property
    def oov_buckets(self) -> int:
        return self.buckets.shape[0]

    def locate(self, word: str):
        """Return ("vocab", row) or ("oov", bucket) for ``word``."""
        row = self.vocab.get(word)
        if row is None:
            row = self.vocab.get(word.lower())
        if row is not None:
            return "vocab", row
        return "oov", oov_bucket(word, self.oov_buckets, self.seed)

    def lookup(self, word: str) -> np.ndarray:
        kind, row = self.locate(word)
        return self.matrix[row] if kind == "vocab" else self.buckets[row]

    def lookup_many(self, words) -> np.ndarray:
        return np.stack([self.lookup(w) for w in words])


def load_pretrained(path, dim: int = DEFAULT_DIM, oov_buckets: int = DEFAULT_OOV_BUCKETS,
                    seed: int = 0) -> EmbeddingStore:
    """Read a GloVe-style text file: a token then ``dim`` floats per line.

    Lines with the wrong number of fields, unparsable floats or a repeated
    token are skipped; each skip adds one to ``store.warnings``.
    """
    vocab: dict[str, int] = {}
    rows = []
    warnings = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip("\r").split(" ")
            if len(parts) != dim + 1 or not parts[0]:
                warnings += 1
                continue
            word = parts[0]
            if word in vocab:
                warnings += 1
                continue
            try:
                vec = np.array(parts[1:], dtype=np.float32)
            except ValueError:
                warnings += 1
                continue
            vocab[word] = len(rows)
            rows.append(vec)
    if warnings:
        log.warning("skipped %d malformed or duplicate lines in %s", warnings, path)
    if not rows:
        raise FormatError(f"{path}: no embedding rows could be parsed")
    return EmbeddingStore(vocab, np.stack(rows), oov_buckets=oov_buckets, seed=seed,
                          warnings=warnings)


def write_embeddings(path, words, vectors) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word, vec in zip(words, vectors):
            fh.write(word + " " + " ".join(f"{float(v):.6f}" for v in vec) + "\n")


class Embedder:
    """Turns token lists into model input tensors.

    With ``train_oov`` the bucket rows become a trainable parameter; the
    pretrained rows are always constants so no gradient reaches them.
    """

    def __init__(self, store: EmbeddingStore, train_oov: bool = False, dtype=None):
        self.store = store
        self.train_oov = train_oov
        self.dtype = dtype or T.default_dtype()
        self.oov = T.parameter(store.buckets, dtype=self.dtype) if train_oov else None
        self._cache: dict = {}

    @property
    def dim(self) -> int:
        return self.store.dim

    def named_parameters(self):
        return [("buckets", self.oov)] if self.train_oov else []

    def __call__(self, words) -> Tensor:
        words = tuple(words)
        if not self.train_oov:
            arr = self._cache.get(words)
            if arr is None:
                arr = self.store.lookup_many(words).astype(self.dtype)
                if len(self._cache) < 100_000:
                    self._cache[words] = arr
            return T.Tensor(arr, dtype=self.dtype)
        where = [self.store.locate(w) for w in words]
        fixed = np.zeros((len(words), self.dim), dtype=self.dtype)
        mask = np.zeros((len(words), self.dim), dtype=self.dtype)
        buckets = []
        for k, (kind, row) in enumerate(where):
            if kind == "vocab":
                fixed[k] = self.store.matrix[row]
                buckets.append(0)
            else:
                mask[k] = 1
                buckets.append(row)
        oov_rows = T.take_rows(self.oov, buckets) * T.Tensor(mask, dtype=self.dtype)
        return T.Tensor(fixed, dtype=self.dtype) + oov_rows
