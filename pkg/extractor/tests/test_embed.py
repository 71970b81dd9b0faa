import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

import golfer.embedding
from golfer.embedding import EmbeddingRequest, HttpEmbedder, build_provider, content_hash
from golfer.traces import load_embeddings

from golfer_extractor.config import ExtractorError
from golfer_extractor.embed import (
    TextEncoder,
    embed_corpus,
    embed_requests,
    read_requests,
)
from golfer_extractor.server import build_app


@pytest.fixture(scope="module")
def encoder(make_config):
    return TextEncoder(make_config())


def test_same_text_twice_gives_identical_vectors(encoder):
    a = encoder.encode_one("the cat sits on the mat")
    b = encoder.encode_one("the cat sits on the mat")
    assert np.array_equal(a, b)


def test_vectors_are_unit_norm_float64(encoder):
    vec = encoder.encode_one("the red dog runs")
    assert vec.dtype == np.float64
    assert abs(np.linalg.norm(vec) - 1.0) <= 1e-12


def test_encode_stacks_single_text_encodings(encoder):
    texts = ["the cat sits", "a tree falls", "the cat sits"]
    matrix = encoder.encode(texts)
    assert matrix.shape[0] == 3
    assert np.array_equal(matrix[0], matrix[2])
    assert np.array_equal(matrix[1], encoder.encode_one(texts[1]))


def test_embed_requests_keys_by_content_hash_and_dedupes(encoder, tmp_path):
    requests = [EmbeddingRequest(id="a", text="the cat sits"),
                EmbeddingRequest(id="b", text="a tree falls"),
                EmbeddingRequest(id="c", text="the cat sits")]
    out = tmp_path / "vecs.jsonl"
    stats = embed_requests(requests, encoder, out)
    assert stats.written == 2 and stats.requested == 3
    records = load_embeddings(out)
    assert set(records) == {content_hash("the cat sits"), content_hash("a tree falls")}
    assert np.array_equal(records[content_hash("the cat sits")].vector,
                          encoder.encode_one("the cat sits"))


def test_embedded_file_feeds_the_engine_file_provider(encoder, tmp_path):
    out = tmp_path / "vecs.jsonl"
    embed_requests([EmbeddingRequest(id="x", text="the stone under the river")],
                   encoder, out)
    provider = build_provider("batch-file", path=str(out))
    got = provider.embed_batch([EmbeddingRequest(id="x", text="the stone under the river")])
    assert np.array_equal(got["x"].vector, encoder.encode_one("the stone under the river"))


def test_embed_corpus_keys_by_doc_id(encoder, tmp_path):
    corpus = [("d1", "the cat sits"), ("d2", "a tree falls")]
    out = tmp_path / "corpus_vecs.jsonl"
    stats = embed_corpus(corpus, encoder, out)
    assert stats.written == 2
    records = load_embeddings(out)
    assert set(records) == {"d1", "d2"}
    assert np.array_equal(records["d1"].vector, encoder.encode_one("the cat sits"))


def test_read_requests_accepts_engine_miss_files(tmp_path):
    path = tmp_path / "requests.jsonl"
    rows = [{"id": "q:1", "hash": content_hash("the cat"), "text": "the cat"},
            {"id": "d7", "text": "a dog"}]
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    requests = read_requests(path)
    assert [(r.id, r.text) for r in requests] == [("q:1", "the cat"), ("d7", "a dog")]


def test_read_requests_rejects_stale_hash(tmp_path):
    path = tmp_path / "requests.jsonl"
    path.write_text(json.dumps({"id": "x", "hash": "0" * 64, "text": "the cat"}) + "\n")
    with pytest.raises(ExtractorError, match="stale"):
        read_requests(path)


def test_read_requests_rejects_malformed_lines(tmp_path):
    path = tmp_path / "requests.jsonl"
    path.write_text('{"id": "x"}\n')
    with pytest.raises(ExtractorError, match="requests.jsonl:1"):
        read_requests(path)


# --- HTTP endpoint ----------------------------------------------------------

def test_http_matches_batch_encoding_exactly(encoder):
    client = TestClient(build_app(encoder))
    response = client.post("/embed", json={"items": [{"id": "a", "text": "the cat sits"}]})
    assert response.status_code == 200
    (item,) = response.json()["items"]
    assert item["id"] == "a"
    assert np.array_equal(np.asarray(item["vec"]), encoder.encode_one("the cat sits"))


def test_http_rejects_empty_text_with_error_payload(encoder):
    client = TestClient(build_app(encoder))
    response = client.post("/embed", json={"items": [{"id": "a", "text": "   "}]})
    assert response.status_code == 400
    assert "empty text" in response.json()["error"]


def test_http_bounds_request_size(encoder):
    client = TestClient(build_app(encoder, max_items=2))
    items = [{"id": str(i), "text": "the cat"} for i in range(3)]
    response = client.post("/embed", json={"items": items})
    assert response.status_code == 413
    assert "at most 2" in response.json()["error"]


def test_engine_http_client_round_trips_through_the_server(encoder, monkeypatch):
    client = TestClient(build_app(encoder))

    class _Shim:
        RequestException = golfer.embedding._requests.RequestException

        @staticmethod
        def post(url, json=None, timeout=None):
            return client.post(url[url.index("/embed"):], json=json)

    monkeypatch.setattr(golfer.embedding, "_requests", _Shim)
    provider = HttpEmbedder(endpoint="http://server", batch_size=2)
    requests = [EmbeddingRequest(id="a", text="the cat sits"),
                EmbeddingRequest(id="b", text="a tree falls"),
                EmbeddingRequest(id="c", text="the river runs")]
    got = provider.embed_batch(requests)
    assert set(got) == {"a", "b", "c"}
    for request in requests:
        assert np.array_equal(got[request.id].vector, encoder.encode_one(request.text))
