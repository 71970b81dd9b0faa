"""TREC-style run evaluation: nDCG@k, MRR@k, Recall@k, MAP.

Conventions match standard TREC tooling: nDCG gain is 2^grade - 1 with
discount 1/log2(rank+1) and the ideal DCG is computed over all judged
documents for the query.  The binary metrics (MRR, Recall, MAP) binarize
graded judgments at a configurable relevance cutoff; the default of 1
treats any positive grade as relevant, while TREC DL convention uses 2.

Queries with no relevant documents are undefined for every metric and are
skipped rather than scored 0 (the metric functions return None for them).
Queries present in the run but absent from the qrels are never scored and
are listed separately in the report.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ParseError, ValidationError
from .retrieval import RunResult
from .validation import require

DEFAULT_RELEVANCE_CUTOFF = 1
METRIC_NAMES = ("ndcg", "mrr", "recall", "map")


class Qrels:
    """Graded relevance judgments: (query id, doc id) -> grade >= 0."""

    def __init__(self, judgments: Mapping[str, Mapping[str, int]]):
        table: dict[str, dict[str, int]] = {}
        for query_id, docs in judgments.items():
            row: dict[str, int] = {}
            for doc_id, grade in docs.items():
                grade = int(grade)
                require(grade >= 0, f"negative grade {grade} for {query_id}/{doc_id}",
                        doc_id=str(doc_id), rule="grade-nonnegative")
                row[str(doc_id)] = grade
            table[str(query_id)] = row
        self._table = table

    def __contains__(self, query_id: str) -> bool:
        return query_id in self._table

    @property
    def query_ids(self) -> tuple[str, ...]:
        return tuple(self._table)

    def grade(self, query_id: str, doc_id: str) -> int:
        return self._table.get(query_id, {}).get(doc_id, 0)

    def grades(self, query_id: str) -> dict[str, int]:
        return dict(self._table.get(query_id, {}))

    def relevant_docs(self, query_id: str, cutoff: int = DEFAULT_RELEVANCE_CUTOFF) -> set[str]:
        return {doc_id for doc_id, grade in self._table.get(query_id, {}).items()
                if grade >= cutoff}


def load_qrels(path: str | Path) -> Qrels:
    """Parse TREC qrels lines ``qid 0 docid grade``."""
    path = Path(path)
    table: dict[str, dict[str, int]] = {}
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ParseError(f"expected 4 whitespace-separated fields, got {len(parts)}",
                                 path=str(path), line=lineno)
            qid, _, doc_id, grade = parts
            try:
                grade_value = int(grade)
            except ValueError as exc:
                raise ParseError(f"bad relevance grade {grade!r}", path=str(path), line=lineno) from exc
            if grade_value < 0:
                raise ParseError(f"negative relevance grade {grade_value}", path=str(path), line=lineno)
            table.setdefault(qid, {})[doc_id] = grade_value
    return Qrels(table)


def _gain(grade: int) -> float:
    return float(2 ** grade - 1)


def ndcg_at_k(run: RunResult, qrels: Qrels, k: int) -> float | None:
    """Normalized DCG at k; None when the query has no relevant documents."""
    require(k >= 1, f"k must be >= 1, got {k}", rule="k")
    grades = qrels.grades(run.query_id)
    ideal = sorted((g for g in grades.values() if g > 0), reverse=True)
    if not ideal:
        return None
    idcg = sum(_gain(g) / math.log2(rank + 1) for rank, g in enumerate(ideal[:k], start=1))
    dcg = sum(_gain(grades.get(doc_id, 0)) / math.log2(rank + 1)
              for rank, doc_id in enumerate(run.doc_ids[:k], start=1))
    return dcg / idcg


def mrr_at_k(run: RunResult, qrels: Qrels, k: int,
             cutoff: int = DEFAULT_RELEVANCE_CUTOFF) -> float | None:
    """Reciprocal rank of the first relevant doc in the top k, 0 if none.

    None when the query has no relevant documents at all.
    """
    require(k >= 1, f"k must be >= 1, got {k}", rule="k")
    relevant = qrels.relevant_docs(run.query_id, cutoff)
    if not relevant:
        return None
    for rank, doc_id in enumerate(run.doc_ids[:k], start=1):
        if doc_id in relevant:
            return 1.0 / rank
    return 0.0


def recall_at_k(run: RunResult, qrels: Qrels, k: int,
                cutoff: int = DEFAULT_RELEVANCE_CUTOFF) -> float | None:
    require(k >= 1, f"k must be >= 1, got {k}", rule="k")
    relevant = qrels.relevant_docs(run.query_id, cutoff)
    if not relevant:
        return None
    hit = sum(1 for doc_id in run.doc_ids[:k] if doc_id in relevant)
    return hit / len(relevant)


def map_metric(run: RunResult, qrels: Qrels,
               cutoff: int = DEFAULT_RELEVANCE_CUTOFF) -> float | None:
    """Average precision over the full run depth.

    The denominator is the total number of relevant documents in the qrels,
    so unretrieved relevant docs count against the score.
    """
    relevant = qrels.relevant_docs(run.query_id, cutoff)
    if not relevant:
        return None
    hits = 0
    precision_sum = 0.0
    for rank, doc_id in enumerate(run.doc_ids, start=1):
        if doc_id in relevant:
            hits += 1
            precision_sum += hits / rank
    return precision_sum / len(relevant)


@dataclass(frozen=True)
class Metric:
    """A parsed metric request, e.g. ndcg@10 or map."""

    kind: str
    k: int | None

    def __post_init__(self) -> None:
        require(self.kind in METRIC_NAMES,
                f"unknown metric {self.kind!r}; expected one of {METRIC_NAMES}", rule="metric-name")
        if self.kind == "map":
            require(self.k is None, "map takes no rank cutoff", rule="metric-k")
        else:
            require(self.k is not None and self.k >= 1,
                    f"{self.kind} needs a rank cutoff >= 1", rule="metric-k")

    @property
    def label(self) -> str:
        return self.kind if self.k is None else f"{self.kind}@{self.k}"

    def compute(self, run: RunResult, qrels: Qrels, cutoff: int) -> float | None:
        if self.kind == "ndcg":
            return ndcg_at_k(run, qrels, self.k)
        if self.kind == "mrr":
            return mrr_at_k(run, qrels, self.k, cutoff)
        if self.kind == "recall":
            return recall_at_k(run, qrels, self.k, cutoff)
        return map_metric(run, qrels, cutoff)


def parse_metric(text: str) -> Metric:
    """Parse a metric label like ``ndcg@10``, ``recall@100`` or ``map``."""
    text = text.strip().lower()
    if "@" in text:
        name, _, depth = text.partition("@")
        try:
            k = int(depth)
        except ValueError as exc:
            raise ValidationError(f"bad rank cutoff in metric {text!r}", rule="metric-k") from exc
        return Metric(kind=name, k=k)
    return Metric(kind=text, k=None)


def parse_metric_list(text: str) -> tuple[Metric, ...]:
    """Parse a comma-separated metric list, e.g. ``ndcg@10,map,recall@100``."""
    metrics = tuple(parse_metric(part) for part in text.split(",") if part.strip())
    require(len(metrics) >= 1, "metric list is empty", rule="metric-list")
    labels = [m.label for m in metrics]
    require(len(set(labels)) == len(labels), f"duplicate metric in {text!r}", rule="metric-list")
    return metrics


@dataclass(frozen=True)
class MetricReport:
    """Per-query and mean metric values for one evaluated run.

    ``per_query`` maps metric label -> query id -> value over queries where
    the metric is defined.  ``skipped`` lists judged queries with no
    relevant documents per metric; ``unjudged`` lists run queries absent
    from the qrels.  Means are arithmetic over the evaluated queries; a
    metric with no evaluated queries has mean None.
    """

    metrics: tuple[str, ...]
    per_query: dict[str, dict[str, float]]
    means: dict[str, float | None]
    skipped: dict[str, tuple[str, ...]]
    unjudged: tuple[str, ...]

    def mean(self, label: str) -> float | None:
        return self.means[label]


def evaluate_run(runs: Sequence[RunResult], qrels: Qrels, metrics: Sequence[Metric],
                 cutoff: int = DEFAULT_RELEVANCE_CUTOFF) -> MetricReport:
    require(len(runs) >= 1, "no queries in run", rule="run-nonempty")
    require(len(metrics) >= 1, "no metrics requested", rule="metric-list")
    seen_queries = [run.query_id for run in runs]
    require(len(set(seen_queries)) == len(seen_queries), "duplicate query id in run",
            rule="run-query-unique")
    unjudged = tuple(run.query_id for run in runs if run.query_id not in qrels)
    per_query: dict[str, dict[str, float]] = {m.label: {} for m in metrics}
    skipped: dict[str, list[str]] = {m.label: [] for m in metrics}
    for run in runs:
        if run.query_id not in qrels:
            continue
        for metric in metrics:
            value = metric.compute(run, qrels, cutoff)
            if value is None:
                skipped[metric.label].append(run.query_id)
            else:
                per_query[metric.label][run.query_id] = value
    means: dict[str, float | None] = {}
    for metric in metrics:
        values = per_query[metric.label]
        means[metric.label] = sum(values.values()) / len(values) if values else None
    return MetricReport(
        metrics=tuple(m.label for m in metrics),
        per_query=per_query,
        means=means,
        skipped={label: tuple(qids) for label, qids in skipped.items()},
        unjudged=unjudged,
    )


def write_report_tsv(report: MetricReport, path: str | Path) -> None:
    """Per-query rows plus a ``mean`` row; missing values are ``NA``."""
    query_ids = sorted({qid for values in report.per_query.values() for qid in values}
                       | {qid for qids in report.skipped.values() for qid in qids})
    with Path(path).open("w", encoding="utf-8") as handle:
        handle.write("query_id\t" + "\t".join(report.metrics) + "\n")
        for qid in query_ids:
            cells = []
            for label in report.metrics:
                value = report.per_query[label].get(qid)
                cells.append("NA" if value is None else repr(value))
            handle.write(qid + "\t" + "\t".join(cells) + "\n")
        mean_cells = ["NA" if report.means[label] is None else repr(report.means[label])
                      for label in report.metrics]
        handle.write("mean\t" + "\t".join(mean_cells) + "\n")


def write_report_json(report: MetricReport, path: str | Path) -> None:
    payload = {
        "metrics": list(report.metrics),
        "means": report.means,
        "per_query": {label: dict(sorted(values.items()))
                      for label, values in report.per_query.items()},
        "skipped": {label: list(qids) for label, qids in report.skipped.items()},
        "unjudged": list(report.unjudged),
    }
    with Path(path).open("w", encoding="utf-8") as handle:
        json.dump(payload, handle, ensure_ascii=False, indent=2, sort_keys=True)
        handle.write("\n")
