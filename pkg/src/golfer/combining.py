"""Combining filtered documents with the original query into an expanded query.

Two variants:

* sparse: the query text is repeated (default 20 times) and the filtered
  document texts are appended; downstream BM25 turns the repetition into a
  term-frequency boost that keeps the query dominant over the expansion.
* dense: a convex blend of embedding vectors, ``beta`` times the query vector
  plus ``1 - beta`` spread over the document vectors proportionally to each
  document's generation confidence (the mean generation probability of its
  surviving tokens).

Documents whose sentences were all filtered away carry no confidence and are
excluded; if nothing survives at all, both variants fall back to the bare
query.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ValidationError
from .filtering import TraceFilterResult
from .traces import EmbeddingRecord, QueryRecord
from .validation import require

DEFAULT_REPETITION = 20
DEFAULT_BETA = 0.6
DEFAULT_N_EXPECTED = 5


@dataclass(frozen=True)
class DocumentConfidence:
    """Mean generation probability of a document's surviving tokens."""

    doc_id: str
    confidence: float

    def __post_init__(self) -> None:
        require(0.0 < self.confidence <= 1.0,
                f"confidence must lie in (0, 1], got {self.confidence!r}",
                doc_id=self.doc_id, rule="confidence-range")


@dataclass(frozen=True)
class ExpandedQuery:
    """Either a sparse term-bag text or a dense vector, plus provenance.

    ``provenance`` lists (doc_id, weight) for each contributing document; for
    the dense variant the weights are the effective blend weights and sum to
    ``1 - beta``.
    """

    query_id: str
    variant: str
    sparse_text: str | None = None
    dense_vector: np.ndarray | None = None
    provenance: tuple[tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        require(self.variant in ("sparse", "dense"),
                f"variant must be 'sparse' or 'dense', got {self.variant!r}", rule="variant")
        if self.variant == "sparse":
            require(self.sparse_text is not None and self.dense_vector is None,
                    "sparse variant must carry text and no vector", rule="single-payload")
        else:
            require(self.dense_vector is not None and self.sparse_text is None,
                    "dense variant must carry a vector and no text", rule="single-payload")
        if self.dense_vector is not None:
            arr = np.asarray(self.dense_vector, dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, "dense_vector", arr)


def generation_confidence(result: TraceFilterResult) -> DocumentConfidence | None:
    """Mean probability of the tokens in kept sentences; None if nothing survived.

    A None signals the caller to exclude the document rather than an error.
    """
    probs = result.kept_token_probabilities
    if not probs:
        return None
    return DocumentConfidence(doc_id=result.doc_id, confidence=sum(probs) / len(probs))


def combine_sparse(
    query: QueryRecord,
    filtered_texts: Sequence[tuple[str, str]],
    *,
    repetition: int = DEFAULT_REPETITION,
) -> ExpandedQuery:
    """Build the sparse expanded query text.

    ``filtered_texts`` is a sequence of (doc_id, text); empty texts are
    skipped.  With no nonempty text the bare query is returned unrepeated
    (repetition only matters relative to appended documents).
    """
    require(repetition >= 1, f"repetition must be >= 1, got {repetition}", rule="repetition")
    contributing = [(doc_id, text) for doc_id, text in filtered_texts if text.strip()]
    if not contributing:
        return ExpandedQuery(query_id=query.query_id, variant="sparse", sparse_text=query.text)
    parts = [query.text] * repetition + [text for _, text in contributing]
    return ExpandedQuery(
        query_id=query.query_id,
        variant="sparse",
        sparse_text=" ".join(parts),
        provenance=tuple((doc_id, 1.0) for doc_id, _ in contributing),
    )


def combine_dense(
    query_id: str,
    query_vec: EmbeddingRecord,
    doc_vecs: Sequence[EmbeddingRecord],
    confidences: Sequence[DocumentConfidence],
    *,
    beta: float = DEFAULT_BETA,
) -> ExpandedQuery:
    """Blend the query vector with confidence-weighted document vectors.

    The result is ``beta * q + (1 - beta) * sum_i (w_i / sum_w) * d_i`` with
    ``w_i`` the documents' generation confidences.  Documents are summed in
    ascending doc-id order so the vector is reproducible.  With no documents
    the bare query vector is returned; with ``beta == 1`` it is returned
    bit-exactly.
    """
    require(0.0 <= beta <= 1.0, f"beta must lie in [0, 1], got {beta!r}", rule="beta-range")
    if len(doc_vecs) != len(confidences):
        raise ValidationError(
            f"{len(doc_vecs)} document vectors but {len(confidences)} confidences",
            rule="aligned-inputs")
    if not doc_vecs or beta == 1.0:
        return ExpandedQuery(query_id=query_id, variant="dense",
                             dense_vector=query_vec.vector.copy())

    by_id = {c.doc_id: c for c in confidences}
    if len(by_id) != len(confidences):
        raise ValidationError("duplicate doc ids in confidences", rule="aligned-inputs")
    ordered = sorted(doc_vecs, key=lambda rec: rec.id)
    if {rec.id for rec in ordered} != set(by_id):
        raise ValidationError("document vectors and confidences name different doc ids",
                              rule="aligned-inputs")
    for rec in ordered:
        if rec.dimension != query_vec.dimension:
            raise ValidationError(
                f"embedding {rec.id!r} has dimension {rec.dimension}, query has {query_vec.dimension}",
                doc_id=rec.id, rule="dimension-consistent")

    total = sum(by_id[rec.id].confidence for rec in ordered)
    vector = beta * query_vec.vector
    provenance = []
    for rec in ordered:
        weight = (1.0 - beta) * (by_id[rec.id].confidence / total)
        vector = vector + weight * rec.vector
        provenance.append((rec.id, weight))
    return ExpandedQuery(query_id=query_id, variant="dense",
                         dense_vector=vector, provenance=tuple(provenance))


class SparseCombiner(BaseEstimator):
    """Term-bag expansion: repeated query text plus filtered document texts."""

    def __init__(self, repetition: int = DEFAULT_REPETITION, n_expected: int = DEFAULT_N_EXPECTED):
        self.repetition = repetition
        self.n_expected = n_expected

    def fit(self, X=None, y=None):
        return self

    def transform(self, query: QueryRecord, filtered_texts: Sequence[tuple[str, str]]) -> ExpandedQuery:
        return combine_sparse(query, filtered_texts, repetition=self.repetition)


class DenseCombiner(BaseEstimator):
    """Vector expansion: query/document embedding blend with confidence weights."""

    def __init__(self, beta: float = DEFAULT_BETA, n_expected: int = DEFAULT_N_EXPECTED):
        self.beta = beta
        self.n_expected = n_expected

    def fit(self, X=None, y=None):
        return self

    def transform(
        self,
        query_id: str,
        query_vec: EmbeddingRecord,
        doc_vecs: Sequence[EmbeddingRecord],
        confidences: Sequence[DocumentConfidence],
    ) -> ExpandedQuery:
        return combine_dense(query_id, query_vec, doc_vecs, confidences, beta=self.beta)


# ---------------------------------------------------------------------------
# expanded-query files


def write_expanded_sparse(queries: Iterable[ExpandedQuery], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for query in queries:
            require(query.variant == "sparse", "expected sparse expanded queries", rule="variant")
            handle.write(f"{query.query_id}\t{query.sparse_text}\n")


def read_expanded_sparse(path: str | Path) -> list[tuple[str, str]]:
    rows = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.rstrip("\n")
            if not line:
                continue
            query_id, text = line.split("\t", 1)
            rows.append((query_id, text))
    return rows


def write_expanded_dense(queries: Iterable[ExpandedQuery], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for query in queries:
            require(query.variant == "dense", "expected dense expanded queries", rule="variant")
            obj = {
                "query_id": query.query_id,
                "vec": [float(x) for x in query.dense_vector],
                "provenance": [[doc_id, weight] for doc_id, weight in query.provenance],
            }
            handle.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
            handle.write("\n")


def read_expanded_dense(path: str | Path) -> list[ExpandedQuery]:
    rows = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            rows.append(ExpandedQuery(
                query_id=str(obj["query_id"]),
                variant="dense",
                dense_vector=np.asarray(obj["vec"], dtype=np.float64),
                provenance=tuple((str(d), float(w)) for d, w in obj.get("provenance", [])),
            ))
    return rows
