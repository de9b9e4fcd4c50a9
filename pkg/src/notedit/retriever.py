"""Rough relevance estimation over the notebook.

Notes and queries are embedded as L2-normalized bag-of-words count vectors:
tokens are lowercased alphanumeric runs, each hashed with FNV-1a into one of
D buckets. Scoring a query against the notebook is an exact scan (a single
matrix-vector product), and the top-k notes are returned with deterministic
tie-breaking by insertion order.

Any object with an `embed(text) -> Embedding` method (and matching `dim`)
can replace the default hashing embedder, e.g. an adapter for a remote
embedding service.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

import numpy as np

from .core import Notebook, NoteditError, fnv1a_64

DEFAULT_DIM = 1024
DEFAULT_TOP_K = 5

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class DimensionMismatchError(NoteditError):
    """Two embeddings of different dimension were combined."""


class EmptyGoldError(NoteditError):
    """A recall computation received an empty gold set."""


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric runs; underscores and punctuation split tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True, eq=False)
class Embedding:
    """Fixed-length real vector with unit L2 norm (or all zeros)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        norm = float(np.linalg.norm(self.values))
        if norm != 0.0 and abs(norm - 1.0) > 1e-9:
            raise ValueError(f"embedding norm must be 0 or 1, got {norm}")
        self.values.setflags(write=False)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @property
    def is_zero(self) -> bool:
        return not self.values.any()


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> Embedding: ...


class HashingEmbedder:
    """Deterministic lexical embedder: FNV-1a feature hashing of token counts."""

    def __init__(self, dim: int = DEFAULT_DIM) -> None:
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim

    def bucket(self, token: str) -> int:
        return fnv1a_64(token) % self.dim

    def bucket_counts(self, text: str) -> Counter[int]:
        """Token counts keyed by hash bucket; the raw material behind embed()."""
        counts: Counter[int] = Counter()
        for token in tokenize(text):
            counts[self.bucket(token)] += 1
        return counts

    def count_vector(self, text: str) -> np.ndarray:
        vector = np.zeros(self.dim, dtype=np.float64)
        for bucket, count in self.bucket_counts(text).items():
            vector[bucket] = count
        return vector

    def embed(self, text: str) -> Embedding:
        vector = self.count_vector(text)
        norm = float(np.linalg.norm(vector))
        if norm > 0.0:
            vector = vector / norm
        return Embedding(vector)


def embed_lexical(text: str, dim: int = DEFAULT_DIM) -> Embedding:
    """Embed `text` with a default hashing embedder of dimension `dim`."""
    return HashingEmbedder(dim).embed(text)


def cosine(a: Embedding, b: Embedding) -> float:
    """Dot product of the two unit vectors; 0.0 if either is all-zero."""
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimensions differ: {a.dim} vs {b.dim}")
    if a.is_zero or b.is_zero:
        return 0.0
    return float(min(1.0, max(-1.0, float(np.dot(a.values, b.values)))))


@dataclass(frozen=True)
class RetrievalResult:
    """Ranked (note seq, score) pairs for one query; scores non-increasing."""

    items: tuple[tuple[int, float], ...]
    k: int

    @property
    def seqs(self) -> tuple[int, ...]:
        return tuple(seq for seq, _ in self.items)


class NotebookIndex:
    """Cached per-note count vectors, grown incrementally as notes append.

    Scores are computed from unnormalized integer count vectors divided by
    the product of norms. Counts are exact in float64, so rankings (ties
    included) agree bit-for-bit with a direct per-note computation.
    """

    def __init__(self, embedder: HashingEmbedder | None = None) -> None:
        self.embedder = embedder or HashingEmbedder()
        self._rows: list[np.ndarray] = []
        self._norms: list[float] = []
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._rows)

    def sync(self, notebook: Notebook) -> None:
        """Embed any notes appended since the last sync."""
        notes = notebook.notes
        if len(notes) < len(self._rows):
            raise ValueError("notebook shrank; notebooks are append-only")
        for note in notes[len(self._rows):]:
            row = self.embedder.count_vector(note.text)
            self._rows.append(row)
            self._norms.append(math.sqrt(float(np.dot(row, row))))
        if len(self._rows) != len(notes):
            raise ValueError("index out of step with notebook")

    def scores(self, query: str) -> np.ndarray:
        """Cosine of the query against every indexed note, in seq order."""
        n = len(self._rows)
        if n == 0:
            return np.zeros(0, dtype=np.float64)
        if self._matrix is None or self._matrix.shape[0] != n:
            self._matrix = np.vstack(self._rows)
        query_row = self.embedder.count_vector(query)
        query_norm = math.sqrt(float(np.dot(query_row, query_row)))
        dots = self._matrix @ query_row
        denom = np.array(self._norms) * query_norm
        safe = np.where(denom == 0.0, 1.0, denom)
        return np.clip(dots / safe, -1.0, 1.0)

    def top_k(self, query: str, k: int) -> RetrievalResult:
        if k < 1:
            raise ValueError("k must be >= 1")
        scores = self.scores(query)
        n = scores.shape[0]
        order = np.lexsort((np.arange(n), -scores))
        take = min(k, n)
        items = tuple((int(seq), float(scores[seq])) for seq in order[:take])
        return RetrievalResult(items=items, k=k)


def top_k(
    query: str,
    notebook: Notebook,
    k: int,
    *,
    embedder: HashingEmbedder | None = None,
    index: NotebookIndex | None = None,
) -> RetrievalResult:
    """Return the min(k, n) most similar notes, ties broken by ascending seq."""
    if index is None:
        index = NotebookIndex(embedder)
    index.sync(notebook)
    return index.top_k(query, k)


def recall_at_k(results: Iterable[tuple[RetrievalResult, Sequence[int] | set[int]]]) -> float:
    """Mean over queries of |retrieved gold notes| / |gold notes|, in [0, 1]."""
    total = 0.0
    count = 0
    for result, gold in results:
        gold_set = set(gold)
        if not gold_set:
            raise EmptyGoldError("gold note set must be non-empty")
        retrieved = set(result.seqs)
        total += len(retrieved & gold_set) / len(gold_set)
        count += 1
    if count == 0:
        raise EmptyGoldError("recall requires at least one query")
    return total / count
