"""Generation-trace data model and the line-delimited file formats.

File formats (all JSON lines unless noted):

* ``traces.jsonl`` -- one generated document per line::

      {"query_id": ..., "doc_id": ..., "sentences": [
          {"text": ..., "tokens": [{"text": ..., "prob": ..., "entropy": ...,
                                    "dist": [[token_id, p], ...]}],
           "attn": [[null, 0.4, ...], ...]}]}

  ``entropy`` and ``dist`` are each optional, but at least one must be
  present.  ``attn`` is an o-by-o matrix over the sentence's tokens where the
  entry at row ``l``, column ``v`` (0-based) is only defined for ``v > l``;
  entries on or below the diagonal are ``null``.

* ``nli.jsonl`` -- one (sentence, other-document) pair per line::

      {"doc_id": ..., "sent_idx": ..., "other_doc_id": ...,
       "logit_entail": ..., "logit_contra": ...}

  ``sent_idx`` is the 0-based sentence position within ``doc_id``.

* ``embeddings.jsonl`` -- ``{"id": ..., "vec": [...]}`` per line.

* ``queries.tsv`` -- ``query_id <TAB> text`` per line.

Loaded objects are immutable and safe for concurrent reads.  Serialization is
canonical: loading a file produced by the ``dump_*`` functions and dumping it
again is byte-identical.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import CompletenessError, ParseError, ValidationError
from .validation import as_float_vector, check_finite, check_probability, require

DISTRIBUTION_SUM_TOL = 1e-6

SentenceKey = tuple[str, int]  # (doc_id, 0-based sentence index)


def _normalize_space(text: str) -> str:
    return " ".join(text.split())


@dataclass(frozen=True)
class TokenRecord:
    """One generated token with its sampling probability and uncertainty.

    ``entropy`` is the precomputed entropy of the token's full next-token
    distribution; ``distribution`` is an explicit (token id, probability)
    list summing to one.  At least one of the two must be present.  When both
    are present the scalar takes precedence.
    """

    text: str
    probability: float
    entropy: float | None = None
    distribution: tuple[tuple[int, float], ...] | None = None

    def __post_init__(self) -> None:
        check_probability(self.probability, "token probability")
        if self.entropy is not None:
            value = check_finite(self.entropy, "token entropy")
            require(value >= 0.0, f"token entropy must be >= 0, got {value!r}", rule="entropy-nonnegative")
        if self.distribution is not None:
            dist = tuple((int(i), float(p)) for i, p in self.distribution)
            object.__setattr__(self, "distribution", dist)
            total = math.fsum(p for _, p in dist)
            for _, p in dist:
                require(p >= 0.0, f"distribution probability must be >= 0, got {p!r}",
                        rule="distribution-nonnegative")
            require(abs(total - 1.0) <= DISTRIBUTION_SUM_TOL,
                    f"distribution must sum to 1 +/- {DISTRIBUTION_SUM_TOL}, got {total!r}",
                    rule="distribution-sum")
        if self.entropy is None and self.distribution is None:
            raise ValidationError("token needs an entropy or a distribution", rule="entropy-or-distribution")


@dataclass(frozen=True)
class SentenceRecord:
    """A sentence: its tokens and the within-sentence attention matrix.

    ``attention`` holds, at (l, v) with v > l, the attention paid to token l
    by the later token v (0-based indices).  Entries with v <= l are None.
    """

    text: str
    tokens: tuple[TokenRecord, ...]
    attention: tuple[tuple[float | None, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        rows = tuple(tuple(entry for entry in row) for row in self.attention)
        object.__setattr__(self, "attention", rows)
        o = len(self.tokens)
        require(o >= 1, "sentence must have at least one token", rule="sentence-nonempty")
        require(len(rows) == o, f"attention matrix has {len(rows)} rows for {o} tokens",
                rule="attention-dimension")
        for l, row in enumerate(rows):
            require(len(row) == o, f"attention row {l} has {len(row)} columns for {o} tokens",
                    rule="attention-dimension")
            for v, entry in enumerate(row):
                if v > l:
                    require(entry is not None, f"attention entry ({l}, {v}) must be defined",
                            rule="attention-defined")
                    value = check_finite(entry, f"attention entry ({l}, {v})")
                    require(0.0 <= value <= 1.0,
                            f"attention entry ({l}, {v}) must lie in [0, 1], got {value!r}",
                            rule="attention-range")
                else:
                    require(entry is None,
                            f"attention entry ({l}, {v}) is on or below the diagonal and must be null",
                            rule="attention-defined")
        concat = _normalize_space("".join(tok.text for tok in self.tokens))
        require(concat == _normalize_space(self.text),
                "token texts do not concatenate to the sentence text", rule="token-concatenation")

    @property
    def token_count(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class GenerationTrace:
    """One LM-generated hypothetical document for a query."""

    query_id: str
    doc_id: str
    sentences: tuple[SentenceRecord, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "sentences", tuple(self.sentences))
        require(len(self.sentences) >= 1, "trace must have at least one sentence",
                doc_id=self.doc_id, rule="trace-nonempty")

    @property
    def text(self) -> str:
        return " ".join(sentence.text for sentence in self.sentences)

    @property
    def token_probabilities(self) -> tuple[float, ...]:
        return tuple(tok.probability for sentence in self.sentences for tok in sentence.tokens)


@dataclass(frozen=True)
class NLIPairLogits:
    """Entailment/contradiction logits for one (sentence, other-document) pair."""

    doc_id: str
    sentence_index: int
    other_doc_id: str
    entailment_logit: float
    contradiction_logit: float

    def __post_init__(self) -> None:
        require(self.sentence_index >= 0, "sentence index must be >= 0", rule="sentence-index")
        require(self.other_doc_id != self.doc_id,
                "NLI pair must reference a different document",
                doc_id=self.doc_id, rule="distinct-other-doc")
        check_finite(self.entailment_logit, "entailment logit")
        check_finite(self.contradiction_logit, "contradiction logit")

    @property
    def sentence_key(self) -> SentenceKey:
        return (self.doc_id, self.sentence_index)


@dataclass(frozen=True)
class EmbeddingRecord:
    """An id plus a fixed-dimension real vector."""

    id: str
    vector: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "vector", as_float_vector(self.vector, f"embedding {self.id!r}"))

    @property
    def dimension(self) -> int:
        return int(self.vector.shape[0])


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    text: str

    def __post_init__(self) -> None:
        require(bool(self.text.strip()), "query text must be nonempty",
                doc_id=self.query_id, rule="query-nonempty")


class EmbeddingCollection(Mapping[str, EmbeddingRecord]):
    """Embeddings keyed by id, all sharing one dimension."""

    def __init__(self, records: Iterable[EmbeddingRecord]):
        self._records: dict[str, EmbeddingRecord] = {}
        self._dimension: int | None = None
        for record in records:
            if self._dimension is None:
                self._dimension = record.dimension
            elif record.dimension != self._dimension:
                raise ValidationError(
                    f"embedding {record.id!r} has dimension {record.dimension}, expected {self._dimension}",
                    doc_id=record.id, rule="dimension-consistent")
            if record.id in self._records:
                raise ValidationError(f"duplicate embedding id {record.id!r}",
                                      doc_id=record.id, rule="unique-id")
            self._records[record.id] = record

    @property
    def dimension(self) -> int | None:
        return self._dimension

    def __getitem__(self, key: str) -> EmbeddingRecord:
        return self._records[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._records)

    def __len__(self) -> int:
        return len(self._records)


# ---------------------------------------------------------------------------
# parsing


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), line=lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", path=str(path), line=lineno)
            yield lineno, obj


def _token_from_json(obj: dict) -> TokenRecord:
    dist = obj.get("dist")
    if dist is not None:
        dist = tuple((entry[0], entry[1]) for entry in dist)
    return TokenRecord(
        text=str(obj["text"]),
        probability=float(obj["prob"]),
        entropy=float(obj["entropy"]) if obj.get("entropy") is not None else None,
        distribution=dist,
    )


def _sentence_from_json(obj: dict) -> SentenceRecord:
    tokens = tuple(_token_from_json(tok) for tok in obj["tokens"])
    attention = tuple(
        tuple(None if entry is None else float(entry) for entry in row)
        for row in obj["attn"]
    )
    return SentenceRecord(text=str(obj["text"]), tokens=tokens, attention=attention)


def trace_from_json(obj: dict) -> GenerationTrace:
    sentences = tuple(_sentence_from_json(sent) for sent in obj["sentences"])
    return GenerationTrace(query_id=str(obj["query_id"]), doc_id=str(obj["doc_id"]), sentences=sentences)


def load_trace_bundle(path: str | Path) -> dict[str, list[GenerationTrace]]:
    """Load ``traces.jsonl`` grouped by query id, preserving file order.

    The per-query file order is significant: it defines each document's
    position i = 1..n used throughout scoring and combination.
    """
    path = Path(path)
    bundle: dict[str, list[GenerationTrace]] = {}
    seen_docs: set[str] = set()
    for lineno, obj in _iter_jsonl(path):
        doc_id = obj.get("doc_id")
        try:
            trace = trace_from_json(obj)
        except (KeyError, TypeError, IndexError) as exc:
            raise ParseError(f"malformed trace record: {exc!r}", path=str(path), line=lineno) from exc
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}", doc_id=str(doc_id), rule=exc.rule) from exc
        # NLI pair records name documents by doc id alone, so ids must be
        # unique across the whole bundle, not just within one query.
        if trace.doc_id in seen_docs:
            raise ValidationError(f"{path}:{lineno}: duplicate doc id {trace.doc_id!r}",
                                  doc_id=trace.doc_id, rule="doc-id-unique")
        seen_docs.add(trace.doc_id)
        bundle.setdefault(trace.query_id, []).append(trace)
    return bundle


def load_nli_logits(
    path: str | Path,
    bundle: Mapping[str, Sequence[GenerationTrace]],
) -> dict[SentenceKey, list[NLIPairLogits]]:
    """Load ``nli.jsonl`` and check completeness against a trace bundle.

    Every sentence of every trace must carry exactly one pair record per
    *other* document of the same query (n - 1 records for an n-trace query);
    anything less raises :class:`CompletenessError` naming the absent pairs.
    """
    path = Path(path)
    doc_to_query: dict[str, str] = {}
    for query_id, traces in bundle.items():
        for trace in traces:
            doc_to_query[trace.doc_id] = query_id

    pairs: dict[SentenceKey, list[NLIPairLogits]] = {}
    seen: set[tuple[str, int, str]] = set()
    for lineno, obj in _iter_jsonl(path):
        try:
            record = NLIPairLogits(
                doc_id=str(obj["doc_id"]),
                sentence_index=int(obj["sent_idx"]),
                other_doc_id=str(obj["other_doc_id"]),
                entailment_logit=float(obj["logit_entail"]),
                contradiction_logit=float(obj["logit_contra"]),
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed NLI record: {exc!r}", path=str(path), line=lineno) from exc
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}", doc_id=str(obj.get("doc_id")),
                                  rule=exc.rule) from exc
        if record.doc_id not in doc_to_query:
            raise ValidationError(f"{path}:{lineno}: NLI pair references unknown doc",
                                  doc_id=record.doc_id, rule="known-doc")
        if doc_to_query.get(record.other_doc_id) != doc_to_query[record.doc_id]:
            raise ValidationError(
                f"{path}:{lineno}: NLI pair references {record.other_doc_id!r}, "
                f"which is not another document of the same query",
                doc_id=record.doc_id, rule="same-query-other-doc")
        dedup = (record.doc_id, record.sentence_index, record.other_doc_id)
        if dedup in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate NLI pair {dedup!r}",
                                  doc_id=record.doc_id, rule="pair-unique")
        seen.add(dedup)
        pairs.setdefault(record.sentence_key, []).append(record)

    missing: list[tuple[SentenceKey, str]] = []
    for query_id, traces in bundle.items():
        doc_ids = [trace.doc_id for trace in traces]
        for trace in traces:
            for sent_idx in range(len(trace.sentences)):
                key = (trace.doc_id, sent_idx)
                have = {pair.other_doc_id for pair in pairs.get(key, [])}
                for other in doc_ids:
                    if other != trace.doc_id and other not in have:
                        missing.append((key, other))
    if missing:
        preview = ", ".join(f"(sentence {key}, other doc {other!r})" for key, other in missing[:5])
        more = "" if len(missing) <= 5 else f" and {len(missing) - 5} more"
        raise CompletenessError(f"missing NLI pairs: {preview}{more}", missing=missing)
    return pairs


def load_embeddings(path: str | Path) -> EmbeddingCollection:
    """Load ``embeddings.jsonl``; all vectors must share one dimension."""
    path = Path(path)
    records = []
    for lineno, obj in _iter_jsonl(path):
        try:
            record = EmbeddingRecord(id=str(obj["id"]), vector=np.asarray(obj["vec"], dtype=np.float64))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed embedding record: {exc!r}", path=str(path), line=lineno) from exc
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}", doc_id=str(obj.get("id")), rule=exc.rule) from exc
        records.append(record)
    try:
        return EmbeddingCollection(records)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}", doc_id=exc.doc_id, rule=exc.rule) from exc


def load_queries(path: str | Path) -> list[QueryRecord]:
    """Load ``queries.tsv`` (query_id <TAB> text)."""
    path = Path(path)
    queries: list[QueryRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ParseError("expected 'query_id<TAB>text'", path=str(path), line=lineno)
            query_id, text = line.split("\t", 1)
            if query_id in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate query id",
                                      doc_id=query_id, rule="query-id-unique")
            seen.add(query_id)
            try:
                queries.append(QueryRecord(query_id=query_id, text=text))
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}", doc_id=query_id, rule=exc.rule) from exc
    return queries


# ---------------------------------------------------------------------------
# canonical serialization


def _token_to_json(token: TokenRecord) -> dict:
    obj: dict = {"text": token.text, "prob": token.probability}
    if token.entropy is not None:
        obj["entropy"] = token.entropy
    if token.distribution is not None:
        obj["dist"] = [[i, p] for i, p in token.distribution]
    return obj


def trace_to_json(trace: GenerationTrace) -> dict:
    return {
        "query_id": trace.query_id,
        "doc_id": trace.doc_id,
        "sentences": [
            {
                "text": sentence.text,
                "tokens": [_token_to_json(tok) for tok in sentence.tokens],
                "attn": [list(row) for row in sentence.attention],
            }
            for sentence in trace.sentences
        ],
    }


def _dump_lines(objs: Iterable[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for obj in objs:
            handle.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
            handle.write("\n")


def dump_trace_bundle(bundle: Mapping[str, Sequence[GenerationTrace]], path: str | Path) -> None:
    _dump_lines((trace_to_json(t) for traces in bundle.values() for t in traces), path)


def nli_pair_to_json(pair: NLIPairLogits) -> dict:
    return {
        "doc_id": pair.doc_id,
        "sent_idx": pair.sentence_index,
        "other_doc_id": pair.other_doc_id,
        "logit_entail": pair.entailment_logit,
        "logit_contra": pair.contradiction_logit,
    }


def dump_nli_logits(pairs: Mapping[SentenceKey, Sequence[NLIPairLogits]], path: str | Path) -> None:
    _dump_lines((nli_pair_to_json(p) for plist in pairs.values() for p in plist), path)


def embedding_to_json(record: EmbeddingRecord) -> dict:
    return {"id": record.id, "vec": [float(x) for x in record.vector]}


def dump_embeddings(records: Iterable[EmbeddingRecord], path: str | Path) -> None:
    _dump_lines((embedding_to_json(r) for r in records), path)


def dump_queries(queries: Iterable[QueryRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for query in queries:
            handle.write(f"{query.query_id}\t{query.text}\n")
