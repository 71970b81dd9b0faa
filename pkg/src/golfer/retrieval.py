"""Sparse (BM25) and dense (exact inner-product) retrieval.

The sparse side is a plain in-memory inverted index with Okapi scoring and
the nonnegative idf variant ``ln((N - df + 0.5) / (df + 0.5) + 1)``.  Query
analysis reuses the index analyzer, and every query-term occurrence adds one
score accumulation, so an r-fold repeated query scales every document's score
by r -- the mechanism the sparse expanded query relies on.

The dense side is an exact full-scan over a corpus embedding matrix; no
approximate structures.  Both searchers order results by descending score
with ties broken by ascending doc id.
"""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import ParseError, ValidationError
from .traces import EmbeddingCollection, EmbeddingRecord
from .validation import require

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def analyze(text: str, stopwords: frozenset[str] = frozenset()) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop empties and stopwords."""
    tokens = _TOKEN_RE.findall(text.lower())
    if stopwords:
        tokens = [tok for tok in tokens if tok not in stopwords]
    return tokens


@dataclass(frozen=True)
class RunResult:
    """A ranked document list for one query.

    Scores are non-increasing; equal scores are ordered by ascending doc id;
    doc ids are unique.
    """

    query_id: str
    hits: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "hits", tuple((str(d), float(s)) for d, s in self.hits))
        seen: set[str] = set()
        previous: tuple[str, float] | None = None
        for doc_id, score in self.hits:
            require(doc_id not in seen, f"duplicate doc id {doc_id!r} in run", rule="run-unique")
            seen.add(doc_id)
            if previous is not None:
                prev_id, prev_score = previous
                require(score <= prev_score, "run scores must be non-increasing", rule="run-order")
                if score == prev_score:
                    require(doc_id > prev_id, "tied scores must be ordered by ascending doc id",
                            rule="run-tie-order")
            previous = (doc_id, score)

    @property
    def doc_ids(self) -> tuple[str, ...]:
        return tuple(doc_id for doc_id, _ in self.hits)


@dataclass(frozen=True)
class SparseIndex:
    """Inverted index statistics for BM25 scoring."""

    postings: dict[str, tuple[tuple[str, int], ...]]  # term -> ((doc_id, tf), ...) by doc_id
    doc_lengths: dict[str, int]
    avgdl: float
    n_docs: int
    k1: float
    b: float

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)


def build_sparse_index(
    corpus: Iterable[tuple[str, str]],
    *,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
    stopwords: frozenset[str] = frozenset(),
) -> SparseIndex:
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    for doc_id, text in corpus:
        doc_id = str(doc_id)
        if doc_id in doc_lengths:
            raise ValidationError(f"duplicate doc id {doc_id!r} in corpus",
                                  doc_id=doc_id, rule="doc-id-unique")
        tokens = analyze(text, stopwords)
        doc_lengths[doc_id] = len(tokens)
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, []).append((doc_id, tf))
    frozen = {term: tuple(sorted(plist)) for term, plist in postings.items()}
    n = len(doc_lengths)
    avgdl = sum(doc_lengths.values()) / n if n else 0.0
    return SparseIndex(postings=frozen, doc_lengths=doc_lengths, avgdl=avgdl,
                       n_docs=n, k1=k1, b=b)


def _bm25_scores(index: SparseIndex, query_tokens: Sequence[str]) -> dict[str, float]:
    # Each query-term occurrence adds one accumulation.  The common repetition
    # multiplicity of the whole query is factored out first and multiplied
    # back in at the end: an r-fold repeated query then computes (r*m) * base
    # against the single copy's m * base, so uniform repetition scales every
    # document's score by exactly r instead of drifting by an ulp.
    counts = Counter(query_tokens)
    if not counts:
        return {}
    multiplicity = 0
    for qtf in counts.values():
        multiplicity = math.gcd(multiplicity, qtf)
    contributions: dict[str, list[float]] = {}
    for term in sorted(counts):
        plist = index.postings.get(term)
        if not plist:
            continue
        qtf = counts[term] // multiplicity
        idf = index.idf(term)
        for doc_id, tf in plist:
            dl = index.doc_lengths[doc_id]
            denom = tf + index.k1 * (1.0 - index.b + index.b * dl / index.avgdl)
            contributions.setdefault(doc_id, []).extend([idf * tf * (index.k1 + 1.0) / denom] * qtf)
    return {doc_id: multiplicity * math.fsum(values) for doc_id, values in contributions.items()}


def _top_k(query_id: str, scores: dict[str, float], k: int) -> RunResult:
    require(k >= 1, f"k must be >= 1, got {k}", rule="k")
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))[:k]
    return RunResult(query_id=query_id, hits=tuple(ranked))


class BM25Retriever(BaseEstimator):
    """Okapi BM25 over an in-memory inverted index.

    Fit on an iterable of (doc_id, text); only documents containing at least
    one query term are returned by ``search``.
    """

    def __init__(self, k1: float = DEFAULT_K1, b: float = DEFAULT_B,
                 stopwords: frozenset[str] = frozenset()):
        self.k1 = k1
        self.b = b
        self.stopwords = stopwords
        self.index_: SparseIndex | None = None

    def fit(self, corpus: Iterable[tuple[str, str]], y=None) -> "BM25Retriever":
        self.index_ = build_sparse_index(corpus, k1=self.k1, b=self.b,
                                         stopwords=frozenset(self.stopwords))
        return self

    def _check_fitted(self) -> SparseIndex:
        if self.index_ is None:
            raise NotFittedError("BM25Retriever is not fitted; call fit(corpus) first")
        return self.index_

    def search(self, query_text: str, k: int, *, query_id: str = "") -> RunResult:
        index = self._check_fitted()
        tokens = analyze(query_text, frozenset(self.stopwords))
        return _top_k(query_id, _bm25_scores(index, tokens), k)


class DenseRetriever(BaseEstimator):
    """Exact inner-product top-k over a corpus embedding matrix."""

    def __init__(self):
        self.doc_ids_: np.ndarray | None = None
        self.matrix_: np.ndarray | None = None

    def fit(self, embeddings: EmbeddingCollection | Iterable[EmbeddingRecord], y=None) -> "DenseRetriever":
        if isinstance(embeddings, EmbeddingCollection):
            records = [embeddings[key] for key in embeddings]
        else:
            records = list(embeddings)
            records = list(EmbeddingCollection(records).values())  # dimension + uniqueness checks
        require(len(records) >= 1, "dense store needs at least one embedding", rule="store-nonempty")
        records.sort(key=lambda rec: rec.id)
        self.doc_ids_ = np.array([rec.id for rec in records])
        self.matrix_ = np.stack([rec.vector for rec in records])
        return self

    @property
    def dimension(self) -> int:
        if self.matrix_ is None:
            raise NotFittedError("DenseRetriever is not fitted; call fit(embeddings) first")
        return int(self.matrix_.shape[1])

    def search(self, vector: np.ndarray, k: int, *, query_id: str = "") -> RunResult:
        if self.matrix_ is None or self.doc_ids_ is None:
            raise NotFittedError("DenseRetriever is not fitted; call fit(embeddings) first")
        require(k >= 1, f"k must be >= 1, got {k}", rule="k")
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.dimension,):
            raise ValidationError(
                f"query vector has shape {vec.shape}, store dimension is {self.dimension}",
                rule="dimension-consistent")
        scores = self.matrix_ @ vec
        order = np.lexsort((self.doc_ids_, -scores))[:k]
        hits = tuple((str(self.doc_ids_[i]), float(scores[i])) for i in order)
        return RunResult(query_id=query_id, hits=hits)


# ---------------------------------------------------------------------------
# corpus and run files


def load_corpus(path: str | Path) -> list[tuple[str, str]]:
    """Load ``corpus.jsonl`` (one {doc_id, text} object per line)."""
    path = Path(path)
    docs: list[tuple[str, str]] = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                docs.append((str(obj["doc_id"]), str(obj["text"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"malformed corpus record: {exc!r}", path=str(path), line=lineno) from exc
    return docs


def write_run(results: Sequence[RunResult], path: str | Path, tag: str = "golfer") -> None:
    """Write TREC run lines: ``qid Q0 docid rank score tag``.

    Scores are written with ``repr`` so a reloaded run is numerically
    identical to the in-memory one.
    """
    with Path(path).open("w", encoding="utf-8") as handle:
        for result in results:
            for rank, (doc_id, score) in enumerate(result.hits, start=1):
                handle.write(f"{result.query_id} Q0 {doc_id} {rank} {score!r} {tag}\n")


def read_run(path: str | Path) -> list[RunResult]:
    """Read a TREC run file back into per-query results, ordered by rank."""
    path = Path(path)
    rows: dict[str, list[tuple[int, str, float]]] = {}
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ParseError(f"expected 6 whitespace-separated fields, got {len(parts)}",
                                 path=str(path), line=lineno)
            qid, _, doc_id, rank, score, _ = parts
            try:
                rows.setdefault(qid, []).append((int(rank), doc_id, float(score)))
            except ValueError as exc:
                raise ParseError(f"bad rank or score: {exc}", path=str(path), line=lineno) from exc
    results = []
    for qid in rows:
        ordered = sorted(rows[qid])
        results.append(RunResult(query_id=qid, hits=tuple((doc_id, score) for _, doc_id, score in ordered)))
    return results
