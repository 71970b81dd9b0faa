"""Hallucination filtering of generated documents.

Sentences are scored on two axes and dropped when the combined score is too
high:

* factuality: per token, the entropy of its generation distribution times the
  average attention it receives from the tokens that follow it in the same
  sentence; per sentence, the mean over tokens.  High values flag uncertain
  tokens that strongly steer the rest of the sentence.
* consistency: the mean contradiction probability of the sentence against
  each *other* sampled document for the same query, from NLI
  entailment/contradiction logits.  High values flag content the other
  samples disagree with.

The filter score is the product of the two; a sentence is kept iff the score
is at or below the threshold (default 0.8).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from sklearn.base import BaseEstimator

from .errors import CompletenessError, ValidationError
from .traces import (
    DISTRIBUTION_SUM_TOL,
    GenerationTrace,
    NLIPairLogits,
    SentenceKey,
    SentenceRecord,
    TokenRecord,
)
from .validation import check_choice, check_finite, check_nonnegative, require

DEFAULT_THRESHOLD = 0.8

LAST_TOKEN_CONVENTIONS = ("zero", "exclude")


def token_entropy(distribution: Sequence[tuple[int, float]]) -> float:
    """Entropy (in nats) of an explicit token probability distribution.

    Probabilities must be nonnegative and sum to 1 within 1e-6; zero
    probabilities contribute nothing.
    """
    probs = [float(p) for _, p in distribution]
    for p in probs:
        require(p >= 0.0, f"distribution probability must be >= 0, got {p!r}",
                rule="distribution-nonnegative")
    total = math.fsum(probs)
    require(abs(total - 1.0) <= DISTRIBUTION_SUM_TOL,
            f"distribution must sum to 1 +/- {DISTRIBUTION_SUM_TOL}, got {total!r}",
            rule="distribution-sum")
    return -math.fsum(p * math.log(p) for p in probs if p > 0.0)


def effective_entropy(token: TokenRecord) -> float:
    """The token's entropy: the precomputed scalar, else computed from its distribution."""
    if token.entropy is not None:
        return token.entropy
    assert token.distribution is not None  # guaranteed by TokenRecord invariant
    return token_entropy(token.distribution)


def average_following_attention(sentence: SentenceRecord, l: int) -> float:
    """Mean attention paid to token ``l`` (1-based) by the later tokens of its sentence.

    The last token has no followers and yields 0.
    """
    o = sentence.token_count
    if not 1 <= l <= o:
        raise IndexError(f"token index {l} out of range for a {o}-token sentence")
    if l == o:
        return 0.0
    row = sentence.attention[l - 1]
    return math.fsum(row[v] for v in range(l, o)) / (o - l)


def token_factuality(entropy: float, avg_attention: float) -> float:
    """Entropy times average following attention; both inputs must be >= 0."""
    entropy = check_nonnegative(entropy, "entropy")
    avg_attention = check_nonnegative(avg_attention, "average attention")
    return entropy * avg_attention


def sentence_factuality(sentence: SentenceRecord, *, last_token_attention: str = "zero") -> float:
    """Mean token factuality over a sentence.

    Under the ``zero`` convention the last token contributes a factuality of 0
    (it has no followers) and counts in the denominator; under ``exclude`` it
    is left out of the mean entirely.  A single-token sentence has no scorable
    tokens under ``exclude`` and yields 0.
    """
    check_choice(last_token_attention, LAST_TOKEN_CONVENTIONS, "last-token attention convention")
    o = sentence.token_count
    last = o if last_token_attention == "zero" else o - 1
    if last == 0:
        return 0.0
    scores = [
        token_factuality(effective_entropy(sentence.tokens[l - 1]), average_following_attention(sentence, l))
        for l in range(1, last + 1)
    ]
    return math.fsum(scores) / last


def nli_contradiction(pair: NLIPairLogits) -> float:
    """Contradiction probability from the pair's two logits.

    Softmax over {contradiction, entailment} computed with max-subtraction so
    large logits cannot overflow.
    """
    c = check_finite(pair.contradiction_logit, "contradiction logit")
    e = check_finite(pair.entailment_logit, "entailment logit")
    m = max(c, e)
    ec = math.exp(c - m)
    ee = math.exp(e - m)
    return ec / (ec + ee)


def sentence_consistency(pairs: Sequence[NLIPairLogits], n_docs: int) -> float:
    """Mean contradiction score of a sentence against the other n-1 documents.

    With a single document there is nothing to compare against and the score
    is 0 (no contradiction evidence).
    """
    require(n_docs >= 1, f"document count must be >= 1, got {n_docs}", rule="doc-count")
    if n_docs == 1:
        if pairs:
            raise CompletenessError(f"expected 0 NLI pairs for a single-document query, got {len(pairs)}")
        return 0.0
    if len(pairs) != n_docs - 1:
        raise CompletenessError(
            f"expected {n_docs - 1} NLI pairs for sentence {pairs[0].sentence_key if pairs else '?'}, "
            f"got {len(pairs)}")
    return math.fsum(nli_contradiction(pair) for pair in pairs) / (n_docs - 1)


@dataclass(frozen=True)
class SentenceScore:
    """Scores and verdict for one sentence."""

    doc_id: str
    sentence_index: int
    factuality: float
    consistency: float
    filter_score: float
    kept: bool


@dataclass(frozen=True)
class TraceFilterResult:
    """Filter outcome for one trace: verdicts plus the surviving material."""

    doc_id: str
    scores: tuple[SentenceScore, ...]
    filtered_text: str
    kept_token_probabilities: tuple[float, ...]

    @property
    def all_dropped(self) -> bool:
        return self.filtered_text == ""


@dataclass(frozen=True)
class FilterReport:
    """Per-trace filter results for one query."""

    query_id: str
    traces: tuple[TraceFilterResult, ...]

    def result_for(self, doc_id: str) -> TraceFilterResult:
        for result in self.traces:
            if result.doc_id == doc_id:
                return result
        raise KeyError(doc_id)


def _build_trace_result(trace: GenerationTrace, verdicts: Sequence[SentenceScore]) -> TraceFilterResult:
    kept_sentences = [s for s, score in zip(trace.sentences, verdicts) if score.kept]
    return TraceFilterResult(
        doc_id=trace.doc_id,
        scores=tuple(verdicts),
        filtered_text=" ".join(s.text for s in kept_sentences),
        kept_token_probabilities=tuple(tok.probability for s in kept_sentences for tok in s.tokens),
    )


def apply_filter(
    traces: Sequence[GenerationTrace],
    nli: Mapping[SentenceKey, Sequence[NLIPairLogits]],
    *,
    threshold: float = DEFAULT_THRESHOLD,
    last_token_attention: str = "zero",
) -> FilterReport:
    """Score every sentence of every trace and drop the ones above threshold.

    ``traces`` are the n sampled documents of a single query; ``nli`` maps
    (doc_id, sentence index) to that sentence's pairs against the other n-1
    documents.  Kept sentences keep their original order; a trace whose
    sentences are all dropped ends up with empty filtered text.
    """
    require(len(traces) >= 1, "need at least one trace to filter", rule="traces-nonempty")
    query_ids = {trace.query_id for trace in traces}
    require(len(query_ids) == 1, f"traces span multiple queries: {sorted(query_ids)}", rule="single-query")
    require(threshold > 0.0, f"threshold must be > 0, got {threshold!r}", rule="threshold-positive")
    check_choice(last_token_attention, LAST_TOKEN_CONVENTIONS, "last-token attention convention")

    n = len(traces)
    results = []
    for trace in traces:
        verdicts = []
        for sent_idx, sentence in enumerate(trace.sentences):
            pairs = nli.get((trace.doc_id, sent_idx))
            if pairs is None and n > 1:
                raise CompletenessError(
                    f"no NLI pairs for sentence ({trace.doc_id!r}, {sent_idx})",
                    missing=[((trace.doc_id, sent_idx), other.doc_id)
                             for other in traces if other.doc_id != trace.doc_id])
            factuality = sentence_factuality(sentence, last_token_attention=last_token_attention)
            consistency = sentence_consistency(pairs or (), n)
            score = factuality * consistency
            verdicts.append(SentenceScore(
                doc_id=trace.doc_id,
                sentence_index=sent_idx,
                factuality=factuality,
                consistency=consistency,
                filter_score=score,
                kept=score <= threshold,
            ))
        results.append(_build_trace_result(trace, verdicts))
    return FilterReport(query_id=traces[0].query_id, traces=tuple(results))


def keep_all_report(traces: Sequence[GenerationTrace]) -> FilterReport:
    """A pass-through report keeping every sentence, for the no-filter ablation.

    No scores are computed; ``scores`` is empty on every trace result.
    """
    require(len(traces) >= 1, "need at least one trace", rule="traces-nonempty")
    results = tuple(
        TraceFilterResult(
            doc_id=trace.doc_id,
            scores=(),
            filtered_text=trace.text,
            kept_token_probabilities=trace.token_probabilities,
        )
        for trace in traces
    )
    return FilterReport(query_id=traces[0].query_id, traces=results)


class HallucinationFilter(BaseEstimator):
    """Sentence-level hallucination filter as a stateless transformer.

    Parameters
    ----------
    threshold : float, default 0.8
        Sentences whose filter score exceeds this are dropped.
    last_token_attention : {"zero", "exclude"}, default "zero"
        How the final token of a sentence (which has no followers) enters the
        sentence mean.
    """

    def __init__(self, threshold: float = DEFAULT_THRESHOLD, last_token_attention: str = "zero"):
        self.threshold = threshold
        self.last_token_attention = last_token_attention

    def fit(self, X=None, y=None):
        return self

    def transform(
        self,
        traces: Sequence[GenerationTrace],
        nli: Mapping[SentenceKey, Sequence[NLIPairLogits]],
    ) -> FilterReport:
        return apply_filter(traces, nli, threshold=self.threshold,
                            last_token_attention=self.last_token_attention)


# ---------------------------------------------------------------------------
# report file


def write_filter_reports(reports: Iterable[FilterReport], path: str | Path) -> None:
    """Write one JSON line per scored sentence (skips pass-through reports)."""
    with Path(path).open("w", encoding="utf-8") as handle:
        for report in reports:
            for result in report.traces:
                for score in result.scores:
                    obj = {
                        "query_id": report.query_id,
                        "doc_id": score.doc_id,
                        "sent_idx": score.sentence_index,
                        "factuality": score.factuality,
                        "consistency": score.consistency,
                        "filter_score": score.filter_score,
                        "kept": score.kept,
                    }
                    handle.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
                    handle.write("\n")


def read_filter_verdicts(path: str | Path) -> dict[str, dict[SentenceKey, SentenceScore]]:
    """Read a filter report file back into per-query verdict maps."""
    verdicts: dict[str, dict[SentenceKey, SentenceScore]] = {}
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            score = SentenceScore(
                doc_id=str(obj["doc_id"]),
                sentence_index=int(obj["sent_idx"]),
                factuality=float(obj["factuality"]),
                consistency=float(obj["consistency"]),
                filter_score=float(obj["filter_score"]),
                kept=bool(obj["kept"]),
            )
            verdicts.setdefault(str(obj["query_id"]), {})[(score.doc_id, score.sentence_index)] = score
    return verdicts


def report_from_verdicts(
    traces: Sequence[GenerationTrace],
    verdicts: Mapping[SentenceKey, SentenceScore],
) -> FilterReport:
    """Rebuild a FilterReport for one query from traces plus stored verdicts."""
    require(len(traces) >= 1, "need at least one trace", rule="traces-nonempty")
    results = []
    for trace in traces:
        scores = []
        for sent_idx in range(len(trace.sentences)):
            key = (trace.doc_id, sent_idx)
            if key not in verdicts:
                raise CompletenessError(f"filter report has no verdict for sentence {key!r}",
                                        missing=[(key, "")])
            scores.append(verdicts[key])
        results.append(_build_trace_result(trace, scores))
    return FilterReport(query_id=traces[0].query_id, traces=tuple(results))
