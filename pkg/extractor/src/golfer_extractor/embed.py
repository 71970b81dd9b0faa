"""Dense text encoding and embedding-file emission.

Texts are encoded one at a time: padding changes the float reduction order
inside the model, and batch-mode and HTTP-mode outputs must be bit-identical
for the same text. At extraction scale the per-text loop is not the
bottleneck.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from golfer.embedding import EmbeddingRequest, content_hash
from golfer.traces import EmbeddingRecord, dump_embeddings

from .config import ExtractorConfig, ExtractorError


class TextEncoder:
    """Mean-pooled last hidden state, unit-normalized, float64."""

    def __init__(self, config: ExtractorConfig):
        if not config.encoder:
            raise ExtractorError("config.encoder must be set to embed texts")
        self.config = config
        self.tokenizer = AutoTokenizer.from_pretrained(config.encoder)
        self.model = AutoModel.from_pretrained(config.encoder).to(config.device).eval()

    def encode_one(self, text: str) -> np.ndarray:
        encoded = self.tokenizer(text, truncation=True, return_tensors="pt").to(self.config.device)
        with torch.no_grad():
            hidden = self.model(**encoded).last_hidden_state[0].double()
        vector = hidden.mean(dim=0).cpu().numpy()
        norm = float(np.linalg.norm(vector))
        if norm == 0.0:
            raise ExtractorError(f"encoder produced a zero vector for {text[:60]!r}")
        return vector / norm

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        return np.vstack([self.encode_one(text) for text in texts])


@dataclass(frozen=True)
class EmbedStats:
    written: int
    requested: int


def read_requests(path: str | Path) -> list[EmbeddingRequest]:
    """Read an embedding-requests file: {"id", "text"} with an optional "hash"."""
    path = Path(path)
    requests = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                request = EmbeddingRequest(id=str(obj["id"]), text=str(obj["text"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise ExtractorError(f"{path}:{lineno}: malformed request: {exc!r}") from exc
            stated = obj.get("hash")
            if stated is not None and str(stated) != content_hash(request.text):
                raise ExtractorError(
                    f"{path}:{lineno}: stated hash does not match the text; "
                    "the request file is stale")
            requests.append(request)
    return requests


def embed_requests(requests: Sequence[EmbeddingRequest], encoder: TextEncoder,
                   out_path: str | Path) -> EmbedStats:
    """Write one vector per distinct text, keyed by content hash."""
    by_hash: dict[str, str] = {}
    for request in requests:
        by_hash.setdefault(content_hash(request.text), request.text)
    records = [EmbeddingRecord(id=key, vector=encoder.encode_one(text))
               for key, text in sorted(by_hash.items())]
    dump_embeddings(records, out_path)
    return EmbedStats(written=len(records), requested=len(requests))


def embed_corpus(corpus: Iterable[tuple[str, str]], encoder: TextEncoder,
                 out_path: str | Path) -> EmbedStats:
    """Write one vector per document, keyed by doc id, in input order."""
    records = []
    for doc_id, text in corpus:
        records.append(EmbeddingRecord(id=doc_id, vector=encoder.encode_one(text)))
    dump_embeddings(records, out_path)
    return EmbedStats(written=len(records), requested=len(records))
