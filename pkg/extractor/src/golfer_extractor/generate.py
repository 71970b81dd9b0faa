"""Trace generation: sample hypothetical documents and record model internals.

Each document costs one ``generate`` call plus one scoring forward pass over
the full sequence. The scoring pass recomputes every next-token distribution
in float64 (probability and entropy come from the raw logits, before any
sampling warpers) and exposes the last layer's attention, which the sampling
pass cannot return from fused kernels.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

from golfer.traces import (
    GenerationTrace,
    QueryRecord,
    SentenceRecord,
    TokenRecord,
    load_trace_bundle,
    trace_to_json,
)

from .config import ExtractorConfig, ExtractorError
from .textsplit import is_terminated, split_token_stream

log = logging.getLogger("golfer_extractor")


class EmptyGenerationError(ExtractorError):
    pass


def sample_seed(seed: int, query_id: str, index: int, attempt: int) -> int:
    """Per-document RNG seed, stable under query reordering."""
    key = f"{seed}|{query_id}|{index}|{attempt}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def _token_texts(tokenizer, ids: Sequence[int]) -> list[str]:
    # Differences of cumulative decodes: robust to tokenizers that join with
    # spaces or carry bytes of a character across token boundaries. The
    # concatenation of the pieces always equals the final decode, which is
    # what sentence texts are built from.
    texts = []
    previous = ""
    for i in range(len(ids)):
        current = tokenizer.decode(ids[: i + 1], skip_special_tokens=False)
        texts.append(current[len(previous):])
        previous = current
    return texts


@dataclass(frozen=True)
class GenerateStats:
    written: int
    failed: tuple[tuple[str, int], ...]


class TraceGenerator:
    """Wraps a causal LM and turns one (query, index) into a trace."""

    def __init__(self, config: ExtractorConfig):
        if not config.model:
            raise ExtractorError("config.model must be set to generate traces")
        self.config = config
        self.tokenizer = AutoTokenizer.from_pretrained(config.model)
        # eager attention: the default fused kernels do not expose weights
        self.model = AutoModelForCausalLM.from_pretrained(
            config.model, attn_implementation="eager").to(config.device).eval()

    def _pad_token_id(self) -> int:
        for token_id in (self.tokenizer.pad_token_id, self.tokenizer.eos_token_id):
            if token_id is not None:
                return token_id
        return 0

    def _generated_ids(self, sequence: torch.Tensor, prompt_len: int) -> list[int]:
        ids = sequence[prompt_len:].tolist()
        eos = self.tokenizer.eos_token_id
        if eos is not None and eos in ids:
            ids = ids[: ids.index(eos)]
        return ids

    def generate_document(self, query_id: str, question: str, index: int,
                          attempt: int = 0) -> GenerationTrace:
        config = self.config
        prompt = config.template.format(question=question)
        encoded = self.tokenizer(prompt, return_tensors="pt").to(config.device)
        prompt_len = encoded["input_ids"].shape[1]

        torch.manual_seed(sample_seed(config.seed, query_id, index, attempt))
        do_sample = config.temperature > 0.0
        kwargs: dict = dict(max_new_tokens=config.max_new_tokens, do_sample=do_sample,
                            pad_token_id=self._pad_token_id())
        if do_sample:
            kwargs.update(temperature=config.temperature, top_p=config.top_p)
        with torch.no_grad():
            sequences = self.model.generate(**encoded, **kwargs)
        gen_ids = self._generated_ids(sequences[0], prompt_len)
        if not gen_ids:
            raise EmptyGenerationError(f"model generated nothing for ({query_id!r}, {index})")

        token_texts = _token_texts(self.tokenizer, sequences[0][:prompt_len].tolist() + gen_ids)
        gen_texts = token_texts[prompt_len:]
        ranges = split_token_stream(gen_texts)
        if not ranges:
            raise EmptyGenerationError(f"generation for ({query_id!r}, {index}) is all whitespace")

        full_ids = torch.tensor([sequences[0][:prompt_len].tolist() + gen_ids],
                                device=config.device)
        with torch.no_grad():
            scored = self.model(input_ids=full_ids, output_attentions=True)
        probs = torch.softmax(scored.logits[0].double(), dim=-1)
        heads = scored.attentions[-1][0].double()
        attention = heads.mean(dim=0) if config.head_aggregation == "mean" else heads.amax(dim=0)

        sentences = []
        for start, end in ranges:
            sentences.append(self._build_sentence(
                gen_texts[start:end], gen_ids[start:end], probs, attention,
                prompt_len + start))
        return GenerationTrace(query_id=query_id, doc_id=f"{query_id}-h{index}",
                               sentences=tuple(sentences))

    def _build_sentence(self, texts: list[str], ids: list[int], probs: torch.Tensor,
                        attention: torch.Tensor, base: int) -> SentenceRecord:
        config = self.config
        tokens = []
        for offset, (text, token_id) in enumerate(zip(texts, ids)):
            # the token at absolute position p was drawn from the
            # distribution predicted at p - 1
            dist = probs[base + offset - 1]
            entropy = float(torch.special.entr(dist).sum())
            tokens.append(TokenRecord(
                text=text,
                probability=float(dist[token_id]),
                entropy=entropy,
                distribution=self._truncated_distribution(dist) if config.dist_top_k else None,
            ))
        o = len(ids)
        rows = []
        for l in range(o):
            row: list[float | None] = []
            for v in range(o):
                if v > l:
                    # head means can overshoot 1.0 by an ulp
                    value = float(attention[base + v, base + l])
                    row.append(min(1.0, max(0.0, value)))
                else:
                    row.append(None)
            rows.append(tuple(row))
        return SentenceRecord(text="".join(texts), tokens=tuple(tokens), attention=tuple(rows))

    def _truncated_distribution(self, dist: torch.Tensor) -> tuple[tuple[int, float], ...]:
        k = min(self.config.dist_top_k, dist.shape[-1])
        values, indices = torch.topk(dist, k)
        entries = [(int(i), float(p)) for i, p in zip(indices, values)]
        remainder = max(0.0, 1.0 - sum(p for _, p in entries))
        if remainder > 0.0:
            # aggregated tail mass so the distribution still sums to one
            entries.append((-1, remainder))
        return tuple(entries)


def _trace_json(trace: GenerationTrace) -> dict:
    obj = trace_to_json(trace)
    if not is_terminated(trace.sentences[-1].text):
        # the token cap cut the final sentence short; keep it but say so
        obj["sentences"][-1]["truncated"] = True
    return obj


def _dist_entropy(distribution: Sequence[tuple[int, float]]) -> float:
    return math.fsum(-p * math.log(p) for _, p in distribution if p > 0.0)


def generate_traces(queries: Sequence[QueryRecord], config: ExtractorConfig,
                    out_path: str | Path, errors_path: str | Path | None = None,
                    *, generator: TraceGenerator | None = None) -> GenerateStats:
    """Generate ``n_per_query`` documents per query and write ``traces.jsonl``.

    A failed generation is retried once with a fresh seed; a second failure
    writes an error stub to ``errors_path`` instead of a trace line. The
    finished file is read back through the engine loader as a self-check.
    """
    generator = generator or TraceGenerator(config)
    out_path = Path(out_path)
    written = 0
    failures: list[tuple[str, int]] = []
    stubs: list[dict] = []
    with out_path.open("w", encoding="utf-8") as handle:
        for query in queries:
            for index in range(config.n_per_query):
                try:
                    trace = generator.generate_document(query.query_id, query.text, index)
                except (ExtractorError, RuntimeError) as first:
                    log.warning("generation failed for (%s, %d), retrying: %s",
                                query.query_id, index, first)
                    try:
                        trace = generator.generate_document(query.query_id, query.text,
                                                            index, attempt=1)
                    except (ExtractorError, RuntimeError) as second:
                        failures.append((query.query_id, index))
                        stubs.append({"query_id": query.query_id, "index": index,
                                      "error": str(second)})
                        continue
                obj = _trace_json(trace)
                if config.dist_top_k:
                    for sentence, sent_obj in zip(trace.sentences, obj["sentences"]):
                        for token, tok_obj in zip(sentence.tokens, sent_obj["tokens"]):
                            tok_obj["dist_entropy_err"] = abs(
                                token.entropy - _dist_entropy(token.distribution))
                handle.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n")
                written += 1
    if errors_path is not None:
        with Path(errors_path).open("w", encoding="utf-8") as handle:
            for stub in stubs:
                handle.write(json.dumps(stub, ensure_ascii=False, separators=(",", ":")) + "\n")
    if written:
        load_trace_bundle(out_path)
    return GenerateStats(written=written, failed=tuple(failures))
