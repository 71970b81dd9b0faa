"""Query expansion with hallucination-filtered hypothetical documents.

The package turns LM generation traces into expanded queries: sentences are
scored by factuality (token entropy weighted by following attention) and
cross-document NLI consistency, dropped when the product exceeds a
threshold, and the survivors are folded into the query by text repetition
(sparse) or a confidence-weighted embedding blend (dense).  Retrieval and
TREC-style evaluation close the loop.
"""
from .combining import (
    DocumentConfidence,
    ExpandedQuery,
    SparseCombiner,
    DenseCombiner,
    combine_dense,
    combine_sparse,
    generation_confidence,
)
from .embedding import (
    BatchFileEmbedder,
    EmbeddingRequest,
    HttpEmbedder,
    MockEmbedder,
    build_provider,
    content_hash,
)
from .errors import (
    CompletenessError,
    GolferError,
    MissingEmbeddingError,
    ParseError,
    PipelineError,
    ProviderError,
    ValidationError,
)
from .evaluation import (
    Metric,
    MetricReport,
    Qrels,
    evaluate_run,
    load_qrels,
    map_metric,
    mrr_at_k,
    ndcg_at_k,
    parse_metric,
    recall_at_k,
)
from .filtering import (
    FilterReport,
    HallucinationFilter,
    SentenceScore,
    TraceFilterResult,
    apply_filter,
    average_following_attention,
    keep_all_report,
    nli_contradiction,
    sentence_consistency,
    sentence_factuality,
    token_entropy,
)
from .pipeline import PipelineConfig, load_config, run_pipeline
from .retrieval import BM25Retriever, DenseRetriever, RunResult, analyze, load_corpus, read_run, write_run
from .traces import (
    EmbeddingCollection,
    EmbeddingRecord,
    GenerationTrace,
    NLIPairLogits,
    QueryRecord,
    SentenceRecord,
    TokenRecord,
    load_embeddings,
    load_queries,
    load_nli_logits,
    load_trace_bundle,
)

__all__ = [name for name in dir() if not name.startswith("_")]
