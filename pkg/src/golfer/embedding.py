"""Pluggable text-embedding backends.

Three backends share one interface, ``embed_batch(requests) -> {id: record}``:

* mock -- deterministic unit vectors derived from a seeded hash of the text;
  no model involved.  Used for tests and synthetic runs.
* batch-file -- looks vectors up in an ``embeddings.jsonl`` produced by an
  earlier encoder pass, keyed by a content hash of the text (sha256 hex of
  the UTF-8 bytes) so re-filtered text invalidates stale entries.  Misses
  raise, listing the unresolved ids.
* http -- POSTs ``{"items": [{"id", "text"}]}`` to ``<endpoint>/embed`` and
  expects ``{"items": [{"id", "vec"}]}`` back.

Backend choice changes vector values only, never pipeline control flow.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import requests as _requests
from sklearn.base import BaseEstimator

from .errors import MissingEmbeddingError, ProviderError, ValidationError
from .traces import EmbeddingCollection, EmbeddingRecord, load_embeddings
from .validation import require


def content_hash(text: str) -> str:
    """Stable key for a text: sha256 hex digest of its UTF-8 bytes."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class EmbeddingRequest:
    """An (id, text) pair to embed; text must be nonempty."""

    __slots__ = ("id", "text")

    def __init__(self, id: str, text: str):
        require(bool(text.strip()), f"embedding request {id!r} has empty text", rule="request-nonempty")
        self.id = id
        self.text = text

    def __repr__(self) -> str:
        return f"EmbeddingRequest(id={self.id!r})"


class MockEmbedder(BaseEstimator):
    """Deterministic hash-derived unit vectors; equal texts get equal vectors."""

    def __init__(self, dimension: int, seed: int = 0):
        self.dimension = dimension
        self.seed = seed

    def embed_one(self, text: str) -> np.ndarray:
        require(self.dimension >= 1, f"dimension must be >= 1, got {self.dimension}", rule="dimension")
        digest = hashlib.sha256(f"{self.seed}|{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "big"))
        vec = rng.standard_normal(self.dimension)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:  # unreachable in practice, but keeps the unit-norm contract
            vec[0] = 1.0
            norm = 1.0
        return vec / norm

    def embed_batch(self, requests: Sequence[EmbeddingRequest]) -> dict[str, EmbeddingRecord]:
        return {req.id: EmbeddingRecord(id=req.id, vector=self.embed_one(req.text))
                for req in requests}


class BatchFileEmbedder(BaseEstimator):
    """Serves embeddings from a precomputed file, keyed by text content hash."""

    def __init__(self, path: str):
        self.path = path
        self._collection: EmbeddingCollection | None = None

    def _load(self) -> EmbeddingCollection:
        if self._collection is None:
            self._collection = load_embeddings(self.path)
        return self._collection

    def embed_batch(self, requests: Sequence[EmbeddingRequest]) -> dict[str, EmbeddingRecord]:
        collection = self._load()
        out: dict[str, EmbeddingRecord] = {}
        missing: list[str] = []
        for req in requests:
            key = content_hash(req.text)
            if key in collection:
                out[req.id] = EmbeddingRecord(id=req.id, vector=collection[key].vector)
            else:
                missing.append(req.id)
        if missing:
            raise MissingEmbeddingError(
                f"{len(missing)} embedding(s) not found in {self.path}; "
                f"an encoder pass over the missing texts is required",
                missing_ids=missing)
        return out


class HttpEmbedder(BaseEstimator):
    """Client for the embed wire protocol; requests are chunked sequentially."""

    def __init__(self, endpoint: str, timeout: float = 30.0, batch_size: int = 32):
        self.endpoint = endpoint
        self.timeout = timeout
        self.batch_size = batch_size

    def embed_batch(self, requests: Sequence[EmbeddingRequest]) -> dict[str, EmbeddingRecord]:
        require(self.batch_size >= 1, f"batch size must be >= 1, got {self.batch_size}", rule="batch-size")
        out: dict[str, EmbeddingRecord] = {}
        url = self.endpoint.rstrip("/") + "/embed"
        for start in range(0, len(requests), self.batch_size):
            chunk = requests[start:start + self.batch_size]
            payload = {"items": [{"id": req.id, "text": req.text} for req in chunk]}
            ids = [req.id for req in chunk]
            try:
                response = _requests.post(url, json=payload, timeout=self.timeout)
            except _requests.RequestException as exc:
                raise ProviderError(f"embed request failed for ids {ids}: {exc}") from exc
            if response.status_code != 200:
                detail = ""
                try:
                    detail = response.json().get("error", "")
                except ValueError:
                    pass
                raise ProviderError(
                    f"embed endpoint returned {response.status_code} for ids {ids}: {detail}")
            try:
                items = response.json()["items"]
            except (ValueError, KeyError) as exc:
                raise ProviderError(f"malformed embed response for ids {ids}: {exc!r}") from exc
            got = {str(item["id"]): item["vec"] for item in items}
            for req in chunk:
                if req.id not in got:
                    raise ProviderError(f"embed response missing id {req.id!r}")
                out[req.id] = EmbeddingRecord(id=req.id,
                                              vector=np.asarray(got[req.id], dtype=np.float64))
        return out


def build_provider(
    backend: str,
    *,
    dimension: int | None = None,
    seed: int = 0,
    path: str | None = None,
    endpoint: str | None = None,
    timeout: float = 30.0,
    batch_size: int = 32,
):
    """Construct a provider from declarative configuration."""
    if backend == "mock":
        if dimension is None:
            raise ValidationError("mock backend requires a dimension", rule="provider-config")
        return MockEmbedder(dimension=dimension, seed=seed)
    if backend == "batch-file":
        if path is None:
            raise ValidationError("batch-file backend requires an embeddings path", rule="provider-config")
        return BatchFileEmbedder(path=path)
    if backend == "http":
        if endpoint is None:
            raise ValidationError("http backend requires an endpoint", rule="provider-config")
        return HttpEmbedder(endpoint=endpoint, timeout=timeout, batch_size=batch_size)
    raise ValidationError(f"unknown embedding backend {backend!r}", rule="provider-config")


def write_embedding_requests(requests: Iterable[EmbeddingRequest], path: str) -> None:
    """Persist unresolved requests so an encoder pass can fill them in."""
    with Path(path).open("w", encoding="utf-8") as handle:
        for req in requests:
            obj = {"id": req.id, "hash": content_hash(req.text), "text": req.text}
            handle.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
            handle.write("\n")
