"""BM25 and dense search against brute-force oracles; run file IO."""
import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

import oracles
from golfer.errors import ParseError, ValidationError
from golfer.retrieval import (
    BM25Retriever,
    DenseRetriever,
    RunResult,
    analyze,
    build_sparse_index,
    load_corpus,
    read_run,
    write_run,
)
from golfer.traces import EmbeddingCollection, EmbeddingRecord
from helpers import WORDS


def test_analyze_splits_and_lowercases():
    assert analyze("Hello, World!") == ["hello", "world"]
    assert analyze("snake_case and CamelCase") == ["snake", "case", "and", "camelcase"]
    assert analyze("v2.0-rc1") == ["v2", "0", "rc1"]
    assert analyze("café au lait") == ["café", "au", "lait"]
    assert analyze("...") == []


def test_analyze_drops_stopwords():
    assert analyze("the cat and the hat", frozenset({"the", "and"})) == ["cat", "hat"]


def test_run_result_orders_and_uniqueness():
    RunResult(query_id="q", hits=(("d1", 2.0), ("d3", 1.0), ("d2", 0.5)))
    RunResult(query_id="q", hits=(("d1", 1.0), ("d2", 1.0)))
    with pytest.raises(ValidationError, match="non-increasing"):
        RunResult(query_id="q", hits=(("d1", 1.0), ("d2", 2.0)))
    with pytest.raises(ValidationError, match="ascending doc id"):
        RunResult(query_id="q", hits=(("d2", 1.0), ("d1", 1.0)))
    with pytest.raises(ValidationError, match="duplicate"):
        RunResult(query_id="q", hits=(("d1", 2.0), ("d1", 1.0)))


def test_sparse_index_statistics():
    index = build_sparse_index([("d1", "a b a"), ("d2", "b c"), ("d3", "c c c d")])
    assert index.postings["a"] == (("d1", 2),)
    assert index.postings["b"] == (("d1", 1), ("d2", 1))
    assert index.postings["c"] == (("d2", 1), ("d3", 3))
    assert index.doc_lengths == {"d1": 3, "d2": 2, "d3": 4}
    assert index.n_docs == 3
    assert index.avgdl == 3.0


def test_sparse_index_rejects_duplicate_doc_ids():
    with pytest.raises(ValidationError, match="duplicate doc id"):
        build_sparse_index([("d1", "a"), ("d1", "b")])


def test_bm25_retriever_requires_fit():
    with pytest.raises(NotFittedError):
        BM25Retriever().search("anything", 5)


def test_bm25_defaults_and_clone():
    est = BM25Retriever()
    params = est.get_params()
    assert params["k1"] == 0.9
    assert params["b"] == 0.4
    clone(est)


def test_bm25_single_doc_and_absent_terms():
    est = BM25Retriever().fit([("d1", "retrieval with inverted files")])
    hit = est.search("inverted", 10, query_id="q")
    assert hit.doc_ids == ("d1",)
    assert hit.hits[0][1] > 0.0
    # no query term in the corpus: empty result, not zero-score noise
    assert est.search("zeppelin", 10).hits == ()


def test_bm25_only_matching_docs_are_candidates():
    est = BM25Retriever().fit([("d1", "apples and pears"), ("d2", "trains and boats")])
    run = est.search("apples", 10)
    assert run.doc_ids == ("d1",)


def test_bm25_empty_corpus_searches_empty():
    est = BM25Retriever().fit([])
    assert est.search("anything", 3).hits == ()


def _random_corpus(rng, n_docs, max_len=30):
    corpus = {}
    for i in range(n_docs):
        length = int(rng.integers(1, max_len))
        words = [WORDS[int(rng.integers(0, len(WORDS)))] for _ in range(length)]
        corpus[f"d{i:03d}"] = " ".join(words)
    return corpus


def _random_query(rng, max_terms=6):
    n = int(rng.integers(1, max_terms))
    return " ".join(WORDS[int(rng.integers(0, len(WORDS)))] for _ in range(n))


def test_bm25_matches_oracle_on_random_corpora():
    rng = np.random.default_rng(50)
    for _ in range(30):
        corpus = _random_corpus(rng, int(rng.integers(2, 20)))
        query = _random_query(rng)
        est = BM25Retriever().fit(corpus.items())
        run = est.search(query, len(corpus), query_id="q")
        want = oracles.rank(oracles.bm25_scores(corpus, query, 0.9, 0.4), len(corpus))
        assert run.doc_ids == tuple(doc_id for doc_id, _ in want)
        for (_, got), (_, expected) in zip(run.hits, want):
            assert abs(got - expected) < 1e-9


def test_bm25_repetition_scales_scores_exactly():
    rng = np.random.default_rng(51)
    for _ in range(20):
        corpus = _random_corpus(rng, int(rng.integers(2, 15)))
        query = _random_query(rng)
        est = BM25Retriever().fit(corpus.items())
        single = est.search(query, len(corpus), query_id="q")
        for r in (2, 5, 20):
            repeated = est.search(" ".join([query] * r), len(corpus), query_id="q")
            assert repeated.doc_ids == single.doc_ids
            for (_, got), (_, base) in zip(repeated.hits, single.hits):
                assert got == r * base


def test_bm25_custom_parameters_change_scores():
    corpus = [("d1", "alpha beta beta"), ("d2", "alpha alpha gamma delta")]
    default = BM25Retriever().fit(corpus).search("alpha beta", 2)
    tuned = BM25Retriever(k1=1.6, b=0.75).fit(corpus).search("alpha beta", 2)
    assert default.hits != tuned.hits


def test_bm25_stopwords_filter_both_sides():
    corpus = [("d1", "the quick fox"), ("d2", "the the the")]
    est = BM25Retriever(stopwords=frozenset({"the"})).fit(corpus)
    assert est.search("the", 5).hits == ()
    assert est.search("the quick", 5).doc_ids == ("d1",)


def test_dense_retriever_requires_fit():
    with pytest.raises(NotFittedError):
        DenseRetriever().search(np.ones(3), 5)


def test_dense_search_single_vector_self_similarity():
    vec = np.array([1.0, 2.0, 2.0])
    est = DenseRetriever().fit([EmbeddingRecord("d1", vec)])
    run = est.search(vec, 3, query_id="q")
    assert run.hits == (("d1", 9.0),)


def test_dense_search_orthogonal_ties_break_by_doc_id():
    docs = [EmbeddingRecord("d2", np.array([0.0, 1.0])),
            EmbeddingRecord("d1", np.array([0.0, -1.0])),
            EmbeddingRecord("d3", np.array([0.0, 0.5]))]
    est = DenseRetriever().fit(docs)
    run = est.search(np.array([1.0, 0.0]), 3)
    assert run.doc_ids == ("d1", "d2", "d3")
    assert all(score == 0.0 for _, score in run.hits)


def test_dense_search_matches_oracle():
    rng = np.random.default_rng(52)
    for _ in range(30):
        dim = int(rng.integers(2, 8))
        n = int(rng.integers(1, 20))
        store = {f"d{i:02d}": rng.standard_normal(dim) for i in range(n)}
        est = DenseRetriever().fit([EmbeddingRecord(i, v) for i, v in store.items()])
        query = rng.standard_normal(dim)
        k = int(rng.integers(1, n + 1))
        run = est.search(query, k, query_id="q")
        want = oracles.rank(oracles.dense_scores({i: list(v) for i, v in store.items()},
                                                 list(query)), k)
        assert run.doc_ids == tuple(doc_id for doc_id, _ in want)
        for (_, got), (_, expected) in zip(run.hits, want):
            assert abs(got - expected) < 1e-9


def test_dense_search_insertion_order_irrelevant():
    rng = np.random.default_rng(53)
    records = [EmbeddingRecord(f"d{i}", rng.standard_normal(4)) for i in range(10)]
    query = rng.standard_normal(4)
    forward = DenseRetriever().fit(records).search(query, 5)
    backward = DenseRetriever().fit(list(reversed(records))).search(query, 5)
    assert forward == backward


def test_dense_search_accepts_collection_and_checks_dimension():
    rng = np.random.default_rng(54)
    collection = EmbeddingCollection(
        [EmbeddingRecord(f"d{i}", rng.standard_normal(5)) for i in range(3)])
    est = DenseRetriever().fit(collection)
    assert est.dimension == 5
    with pytest.raises(ValidationError, match="dimension"):
        est.search(np.ones(4), 2)


def test_load_corpus(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text('{"doc_id": "d1", "text": "first"}\n{"doc_id": "d2", "text": "second"}\n')
    assert load_corpus(path) == [("d1", "first"), ("d2", "second")]
    path.write_text('{"doc_id": "d1"}\n')
    with pytest.raises(ParseError):
        load_corpus(path)


def test_run_file_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(55)
    results = []
    for q in range(3):
        scores = sorted((float(rng.standard_normal()) for _ in range(5)), reverse=True)
        results.append(RunResult(query_id=f"q{q}",
                                 hits=tuple((f"d{i}", s) for i, s in enumerate(scores))))
    path = tmp_path / "run.trec"
    write_run(results, path, tag="testing")
    lines = path.read_text().splitlines()
    assert lines[0].split()[:2] == ["q0", "Q0"]
    assert lines[0].split()[5] == "testing"
    assert [line.split()[3] for line in lines[:5]] == ["1", "2", "3", "4", "5"]
    loaded = read_run(path)
    assert loaded == results  # repr round-trip keeps scores bit-identical


def test_read_run_rejects_malformed_lines(tmp_path):
    path = tmp_path / "run.trec"
    path.write_text("q1 Q0 d1 1 0.5\n")
    with pytest.raises(ParseError, match="6"):
        read_run(path)
    path.write_text("q1 Q0 d1 one 0.5 tag\n")
    with pytest.raises(ParseError):
        read_run(path)
