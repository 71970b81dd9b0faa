"""End-to-end orchestration: load, filter, combine, retrieve, evaluate.

A run is driven by one declarative TOML config and leaves every artifact
in the output directory:

    manifest.json             config hash plus input-file hashes
    filter_report.jsonl       per-sentence verdicts (absent for baseline)
    expanded_sparse.tsv       one expanded query text per line   (sparse)
    expanded_dense.jsonl      one expanded query vector per line (dense)
    run.trec                  ranked results in TREC run format
    metrics.tsv, metrics.json metric report (when qrels are given)
    embedding_requests.jsonl  unresolved texts, only on embedding misses

Stages communicate exclusively through these files; each one can be rerun
from the previous stage's artifacts with identical final output, and the
per-stage CLI commands call the same functions.

Variant semantics:

    full           filter, then confidence-weighted combination
    filter-only    filter, then the plainest combination: unrepeated
                   concatenation (sparse) or uniform document weights (dense)
    combiner-only  no filter; raw documents with confidence weighting
    baseline       the bare query
"""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import metadata as _metadata
from pathlib import Path
from typing import Callable, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import combining, embedding, filtering, retrieval
from .combining import DocumentConfidence, ExpandedQuery
from .errors import GolferError, MissingEmbeddingError, PipelineError, ValidationError
from .evaluation import (
    DEFAULT_RELEVANCE_CUTOFF,
    Metric,
    MetricReport,
    evaluate_run,
    load_qrels,
    parse_metric,
    write_report_json,
    write_report_tsv,
)
from .traces import GenerationTrace, load_embeddings, load_queries, load_trace_bundle, load_nli_logits
from .validation import check_choice, require

logger = logging.getLogger("golfer")

MODES = ("sparse", "dense")
ABLATIONS = ("full", "filter-only", "combiner-only", "baseline")

MANIFEST_NAME = "manifest.json"
FILTER_REPORT_NAME = "filter_report.jsonl"
EXPANDED_SPARSE_NAME = "expanded_sparse.tsv"
EXPANDED_DENSE_NAME = "expanded_dense.jsonl"
RUN_NAME = "run.trec"
METRICS_TSV_NAME = "metrics.tsv"
METRICS_JSON_NAME = "metrics.json"
EMBEDDING_REQUESTS_NAME = "embedding_requests.jsonl"

RUN_TAG = "golfer"


@dataclass(frozen=True)
class FilterSettings:
    threshold: float = filtering.DEFAULT_THRESHOLD
    last_token_attention: str = "zero"


@dataclass(frozen=True)
class CombinerSettings:
    repetition: int = combining.DEFAULT_REPETITION
    beta: float = combining.DEFAULT_BETA
    n_expected: int = combining.DEFAULT_N_EXPECTED


@dataclass(frozen=True)
class ProviderSettings:
    backend: str = "mock"
    dimension: int = 64
    embeddings: str | None = None
    endpoint: str | None = None
    timeout: float = 30.0
    batch_size: int = 32


@dataclass(frozen=True)
class RetrievalSettings:
    k1: float = retrieval.DEFAULT_K1
    b: float = retrieval.DEFAULT_B
    top_k: int = 1000
    stopwords: tuple[str, ...] = ()


@dataclass(frozen=True)
class InputPaths:
    queries: str
    corpus: str | None = None
    corpus_embeddings: str | None = None
    traces: str | None = None
    nli: str | None = None
    qrels: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one run needs; validated on construction."""

    mode: str
    ablation: str
    inputs: InputPaths
    output_dir: str
    metrics: tuple[str, ...] = ("ndcg@10", "map")
    relevance_cutoff: int = DEFAULT_RELEVANCE_CUTOFF
    seed: int = 0
    workers: int = 1
    filter: FilterSettings = field(default_factory=FilterSettings)
    combiner: CombinerSettings = field(default_factory=CombinerSettings)
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    retrieval: RetrievalSettings = field(default_factory=RetrievalSettings)

    def __post_init__(self) -> None:
        check_choice(self.mode, MODES, "mode")
        check_choice(self.ablation, ABLATIONS, "ablation")
        require(self.workers >= 1, f"workers must be >= 1, got {self.workers}", rule="workers")
        require(self.relevance_cutoff >= 1,
                f"relevance cutoff must be >= 1, got {self.relevance_cutoff}", rule="cutoff")
        object.__setattr__(self, "metrics", tuple(self.metrics))
        for label in self.metrics:
            parse_metric(label)
        if self.mode == "sparse":
            require(self.inputs.corpus is not None, "sparse mode needs inputs.corpus",
                    rule="mode-inputs")
        else:
            require(self.inputs.corpus_embeddings is not None,
                    "dense mode needs inputs.corpus_embeddings", rule="mode-inputs")
        if self.ablation != "baseline":
            require(self.inputs.traces is not None,
                    f"ablation {self.ablation!r} needs inputs.traces", rule="ablation-inputs")
        if self.ablation in ("full", "filter-only"):
            require(self.inputs.nli is not None,
                    f"ablation {self.ablation!r} needs inputs.nli", rule="ablation-inputs")

    def parsed_metrics(self) -> tuple[Metric, ...]:
        return tuple(parse_metric(label) for label in self.metrics)

    def output_path(self, name: str) -> Path:
        return Path(self.output_dir) / name


_TOP_KEYS = frozenset({"mode", "ablation", "seed", "output_dir", "metrics", "relevance_cutoff",
                       "workers", "inputs", "filter", "combiner", "provider", "retrieval"})
_SECTION_KEYS = {
    "inputs": frozenset({"queries", "corpus", "corpus_embeddings", "traces", "nli", "qrels"}),
    "filter": frozenset({"threshold", "last_token_attention"}),
    "combiner": frozenset({"repetition", "beta", "n_expected"}),
    "provider": frozenset({"backend", "dimension", "embeddings", "endpoint", "timeout", "batch_size"}),
    "retrieval": frozenset({"k1", "b", "top_k", "stopwords"}),
}


def _check_keys(section: str, obj: dict, allowed: frozenset[str]) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ValidationError(f"unknown key(s) in {section}: {', '.join(unknown)}",
                              rule="config-keys")


def _resolve(base: Path, value: str | None) -> str | None:
    if value is None:
        return None
    path = Path(value)
    return str(path if path.is_absolute() else base / path)


def load_config(path: str | Path) -> PipelineConfig:
    """Parse a TOML config; relative paths resolve against the config file."""
    path = Path(path)
    with path.open("rb") as handle:
        try:
            raw = tomllib.load(handle)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"{path}: invalid TOML: {exc}", rule="config-syntax") from exc
    base = path.parent
    _check_keys("config", raw, _TOP_KEYS)
    for section, allowed in _SECTION_KEYS.items():
        if section in raw:
            _check_keys(section, raw[section], allowed)

    inputs_raw = raw.get("inputs", {})
    if "queries" not in inputs_raw:
        raise ValidationError("inputs.queries is required", rule="config-keys")
    inputs = InputPaths(
        queries=_resolve(base, inputs_raw["queries"]),
        corpus=_resolve(base, inputs_raw.get("corpus")),
        corpus_embeddings=_resolve(base, inputs_raw.get("corpus_embeddings")),
        traces=_resolve(base, inputs_raw.get("traces")),
        nli=_resolve(base, inputs_raw.get("nli")),
        qrels=_resolve(base, inputs_raw.get("qrels")),
    )

    metrics_raw = raw.get("metrics", ["ndcg@10", "map"])
    if isinstance(metrics_raw, str):
        metrics = tuple(part.strip() for part in metrics_raw.split(",") if part.strip())
    else:
        metrics = tuple(str(part) for part in metrics_raw)

    provider_raw = dict(raw.get("provider", {}))
    if "embeddings" in provider_raw:
        provider_raw["embeddings"] = _resolve(base, provider_raw["embeddings"])
    retrieval_raw = dict(raw.get("retrieval", {}))
    if "stopwords" in retrieval_raw:
        retrieval_raw["stopwords"] = tuple(str(w) for w in retrieval_raw["stopwords"])

    try:
        return PipelineConfig(
            mode=raw.get("mode", "sparse"),
            ablation=raw.get("ablation", "full"),
            inputs=inputs,
            output_dir=_resolve(base, raw.get("output_dir", "out")),
            metrics=metrics,
            relevance_cutoff=int(raw.get("relevance_cutoff", DEFAULT_RELEVANCE_CUTOFF)),
            seed=int(raw.get("seed", 0)),
            workers=int(raw.get("workers", 1)),
            filter=FilterSettings(**raw.get("filter", {})),
            combiner=CombinerSettings(**raw.get("combiner", {})),
            provider=ProviderSettings(**provider_raw),
            retrieval=RetrievalSettings(**retrieval_raw),
        )
    except TypeError as exc:
        raise ValidationError(f"bad config value: {exc}", rule="config-types") from exc


# ---------------------------------------------------------------------------
# manifest


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_digest(config: PipelineConfig) -> str:
    canonical = json.dumps(asdict(config), sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_manifest(config: PipelineConfig, path: str | Path) -> None:
    """Record config and input hashes; no timestamps, so reruns are identical."""
    try:
        version = _metadata.version("golfer")
    except _metadata.PackageNotFoundError:
        version = "unknown"
    inputs = {}
    for name, value in asdict(config.inputs).items():
        if value is not None:
            inputs[name] = {"path": value, "sha256": file_digest(value)}
    payload = {
        "version": version,
        "mode": config.mode,
        "ablation": config.ablation,
        "seed": config.seed,
        "config_sha256": config_digest(config),
        "config": asdict(config),
        "inputs": inputs,
    }
    with Path(path).open("w", encoding="utf-8") as handle:
        json.dump(payload, handle, ensure_ascii=False, indent=2, sort_keys=True)
        handle.write("\n")


def _run_stage(name: str, func: Callable, *args, **kwargs):
    """Run one stage, tagging any failure with the stage name."""
    try:
        return func(*args, **kwargs)
    except PipelineError:
        raise
    except (GolferError, OSError) as exc:
        raise PipelineError(str(exc), stage=name) from exc


# ---------------------------------------------------------------------------
# stages


def _load_bundle_checked(config: PipelineConfig) -> dict[str, list[GenerationTrace]]:
    bundle = load_trace_bundle(config.inputs.traces)
    for query_id, traces in bundle.items():
        if len(traces) != config.combiner.n_expected:
            logger.warning("query %s has %d traces, expected %d",
                           query_id, len(traces), config.combiner.n_expected)
    return bundle


def stage_filter(config: PipelineConfig) -> Path:
    """Score and filter every trace; write the per-sentence verdict file.

    For the no-filter variant the file is written empty: nothing was scored
    and the combine stage rebuilds pass-through reports from the traces.
    """
    out = config.output_path(FILTER_REPORT_NAME)
    bundle = _load_bundle_checked(config)
    if config.ablation == "combiner-only":
        reports = [filtering.keep_all_report(bundle[qid]) for qid in sorted(bundle)]
    else:
        nli = load_nli_logits(config.inputs.nli, bundle)
        reports = [
            filtering.apply_filter(
                bundle[qid], nli,
                threshold=config.filter.threshold,
                last_token_attention=config.filter.last_token_attention)
            for qid in sorted(bundle)
        ]
    filtering.write_filter_reports(reports, out)
    return out


def _reports_for_combine(config: PipelineConfig,
                         bundle: dict[str, list[GenerationTrace]]) -> dict[str, filtering.FilterReport]:
    """Rebuild per-query filter reports from the verdict artifact (or pass-through)."""
    if config.ablation == "combiner-only":
        return {qid: filtering.keep_all_report(bundle[qid]) for qid in bundle}
    verdicts = filtering.read_filter_verdicts(config.output_path(FILTER_REPORT_NAME))
    return {qid: filtering.report_from_verdicts(bundle[qid], verdicts.get(qid, {}))
            for qid in bundle}


def _build_provider(config: PipelineConfig):
    return embedding.build_provider(
        config.provider.backend,
        dimension=config.provider.dimension,
        seed=config.seed,
        path=config.provider.embeddings,
        endpoint=config.provider.endpoint,
        timeout=config.provider.timeout,
        batch_size=config.provider.batch_size,
    )


def _query_request_id(query_id: str) -> str:
    return f"query:{query_id}"


def stage_combine(config: PipelineConfig) -> Path:
    """Build the expanded queries and write them as an artifact.

    Queries are read from the query file; each must have traces unless the
    variant is baseline.  Traces for queries outside the query file are
    ignored.  On embedding misses the unresolved requests are written to
    ``embedding_requests.jsonl`` before the stage aborts.
    """
    queries = sorted(load_queries(config.inputs.queries), key=lambda q: q.query_id)
    dense = config.mode == "dense"
    out = config.output_path(EXPANDED_DENSE_NAME if dense else EXPANDED_SPARSE_NAME)

    if config.ablation == "baseline":
        reports = {}
    else:
        bundle = _load_bundle_checked(config)
        missing = [q.query_id for q in queries if q.query_id not in bundle]
        if missing:
            raise ValidationError(f"no traces for quer{'y' if len(missing) == 1 else 'ies'}: "
                                  f"{', '.join(missing)}", rule="traces-cover-queries")
        reports = _reports_for_combine(config, bundle)

    # Per query: the texts contributing to expansion and their weights.
    # filter-only flattens confidences to uniform; baseline contributes nothing.
    contributions: dict[str, list[tuple[str, str]]] = {}
    confidences: dict[str, list[DocumentConfidence]] = {}
    for query in queries:
        if config.ablation == "baseline":
            contributions[query.query_id] = []
            confidences[query.query_id] = []
            continue
        report = reports[query.query_id]
        texts = [(r.doc_id, r.filtered_text) for r in report.traces if not r.all_dropped]
        contributions[query.query_id] = texts
        if config.ablation == "filter-only":
            confidences[query.query_id] = [DocumentConfidence(doc_id, 1.0) for doc_id, _ in texts]
        else:
            weights = [combining.generation_confidence(r) for r in report.traces]
            confidences[query.query_id] = [w for w in weights if w is not None]

    expanded: list[ExpandedQuery]
    if not dense:
        combiner = combining.SparseCombiner(
            repetition=1 if config.ablation == "filter-only" else config.combiner.repetition,
            n_expected=config.combiner.n_expected)
        expanded = [combiner.transform(query, contributions[query.query_id]) for query in queries]
        combining.write_expanded_sparse(expanded, out)
        return out

    provider = _build_provider(config)
    requests = [embedding.EmbeddingRequest(_query_request_id(q.query_id), q.text) for q in queries]
    for query in queries:
        requests.extend(embedding.EmbeddingRequest(doc_id, text)
                        for doc_id, text in contributions[query.query_id])
    try:
        vectors = provider.embed_batch(requests)
    except MissingEmbeddingError as exc:
        by_id = {req.id: req for req in requests}
        requests_path = config.output_path(EMBEDDING_REQUESTS_NAME)
        embedding.write_embedding_requests([by_id[i] for i in exc.missing_ids], requests_path)
        raise MissingEmbeddingError(
            f"{exc}; unresolved requests written to {requests_path}",
            missing_ids=exc.missing_ids) from exc

    combiner = combining.DenseCombiner(beta=config.combiner.beta, n_expected=config.combiner.n_expected)
    expanded = []
    for query in queries:
        query_vec = vectors[_query_request_id(query.query_id)]
        doc_vecs = [vectors[doc_id] for doc_id, _ in contributions[query.query_id]]
        expanded.append(combiner.transform(query.query_id, query_vec, doc_vecs,
                                           confidences[query.query_id]))
    combining.write_expanded_dense(expanded, out)
    return out


def _search_all(search_one: Callable[[object], retrieval.RunResult],
                items: Sequence, workers: int) -> list[retrieval.RunResult]:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(search_one, items))
    else:
        results = [search_one(item) for item in items]
    results.sort(key=lambda r: r.query_id)
    return results


def stage_search(config: PipelineConfig) -> Path:
    """Retrieve top-k for every expanded query and write the TREC run file."""
    out = config.output_path(RUN_NAME)
    k = config.retrieval.top_k
    if config.mode == "sparse":
        corpus = retrieval.load_corpus(config.inputs.corpus)
        searcher = retrieval.BM25Retriever(
            k1=config.retrieval.k1, b=config.retrieval.b,
            stopwords=frozenset(config.retrieval.stopwords)).fit(corpus)
        rows = combining.read_expanded_sparse(config.output_path(EXPANDED_SPARSE_NAME))
        results = _search_all(
            lambda row: searcher.search(row[1], k, query_id=row[0]), rows, config.workers)
    else:
        store = load_embeddings(config.inputs.corpus_embeddings)
        searcher = retrieval.DenseRetriever().fit(store)
        expanded = combining.read_expanded_dense(config.output_path(EXPANDED_DENSE_NAME))
        results = _search_all(
            lambda q: searcher.search(q.dense_vector, k, query_id=q.query_id),
            expanded, config.workers)
    retrieval.write_run(results, out, tag=RUN_TAG)
    return out


def stage_eval(config: PipelineConfig) -> MetricReport:
    """Score the run file against qrels; write TSV and JSON reports."""
    require(config.inputs.qrels is not None, "no qrels configured", rule="eval-inputs")
    runs = retrieval.read_run(config.output_path(RUN_NAME))
    qrels = load_qrels(config.inputs.qrels)
    report = evaluate_run(runs, qrels, config.parsed_metrics(), cutoff=config.relevance_cutoff)
    write_report_tsv(report, config.output_path(METRICS_TSV_NAME))
    write_report_json(report, config.output_path(METRICS_JSON_NAME))
    return report


def run_pipeline(config: PipelineConfig) -> MetricReport | None:
    """Run every stage in order; returns the metric report when qrels are set.

    Any stage failure raises :class:`PipelineError` naming the stage.
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _run_stage("manifest", write_manifest, config, out_dir / MANIFEST_NAME)
    if config.ablation != "baseline":
        _run_stage("filter", stage_filter, config)
    _run_stage("combine", stage_combine, config)
    _run_stage("search", stage_search, config)
    if config.inputs.qrels is not None:
        return _run_stage("eval", stage_eval, config)
    return None
