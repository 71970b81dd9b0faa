"""NLI scoring of every sentence against the other documents of its query.

Each sentence is the hypothesis, the other document's full text the premise.
Premises that push the pair over the length budget are truncated from the
left (the sentence itself is never cut) and the record is flagged.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import torch
from transformers import AutoModelForSequenceClassification, AutoTokenizer

from golfer.traces import GenerationTrace, NLIPairLogits, load_nli_logits, nli_pair_to_json

from .config import ExtractorConfig, ExtractorError


def document_text(trace: GenerationTrace) -> str:
    """The whole document as one whitespace-normalized string."""
    return " ".join(" ".join(sentence.text.split()) for sentence in trace.sentences)


def _label_indices(model_config) -> tuple[int, int]:
    label2id = {str(name).lower(): int(idx) for name, idx in (model_config.label2id or {}).items()}
    try:
        return label2id["entailment"], label2id["contradiction"]
    except KeyError:
        raise ExtractorError(
            "NLI model must name 'entailment' and 'contradiction' labels, "
            f"got {sorted(label2id)}") from None


@dataclass(frozen=True)
class NliStats:
    written: int
    truncated: int


class NliScorer:
    """Wraps a sequence classifier for (premise, hypothesis) batches."""

    def __init__(self, config: ExtractorConfig):
        if not config.nli_model:
            raise ExtractorError("config.nli_model must be set to score NLI pairs")
        self.config = config
        self.tokenizer = AutoTokenizer.from_pretrained(config.nli_model)
        self.tokenizer.truncation_side = "left"
        self.model = AutoModelForSequenceClassification.from_pretrained(
            config.nli_model).to(config.device).eval()
        self.entail_index, self.contra_index = _label_indices(self.model.config)
        limit = config.max_nli_tokens
        if not limit:
            # tokenizers saved without a length default to a sentinel far
            # beyond any usable size; fall back to the model's position cap
            limit = int(min(self.tokenizer.model_max_length, 10 ** 8))
            positions = getattr(self.model.config, "max_position_embeddings", 0)
            if positions:
                limit = min(limit, int(positions))
        self.max_tokens = limit

    def score(self, premises: Sequence[str], hypotheses: Sequence[str],
              ) -> tuple[list[tuple[float, float]], list[bool]]:
        """Per pair: (entailment logit, contradiction logit) and a truncation flag."""
        lengths = [len(ids) for ids in
                   self.tokenizer(list(premises), list(hypotheses)).input_ids]
        flags = [length > self.max_tokens for length in lengths]
        encoded = self.tokenizer(list(premises), list(hypotheses), truncation="only_first",
                                 max_length=self.max_tokens, padding=True,
                                 return_tensors="pt").to(self.config.device)
        with torch.no_grad():
            logits = self.model(**encoded).logits.double()
        pairs = [(float(row[self.entail_index]), float(row[self.contra_index]))
                 for row in logits]
        return pairs, flags


def score_nli(bundle: Mapping[str, Sequence[GenerationTrace]], config: ExtractorConfig,
              out_path: str | Path, *, scorer: NliScorer | None = None) -> NliStats:
    """Score all (sentence, other document) pairs and write ``nli.jsonl``.

    Output order follows the bundle: per query, per document, per sentence,
    then the other documents in bundle order, so reruns are byte-identical.
    The finished file is checked for completeness with the engine loader.
    """
    scorer = scorer or NliScorer(config)
    jobs: list[tuple[str, int, str, str, str]] = []
    for traces in bundle.values():
        texts = {trace.doc_id: document_text(trace) for trace in traces}
        for trace in traces:
            for sent_idx, sentence in enumerate(trace.sentences):
                hypothesis = " ".join(sentence.text.split())
                for other in traces:
                    if other.doc_id == trace.doc_id:
                        continue
                    jobs.append((trace.doc_id, sent_idx, other.doc_id,
                                 texts[other.doc_id], hypothesis))

    out_path = Path(out_path)
    written = 0
    truncated = 0
    with out_path.open("w", encoding="utf-8") as handle:
        for start in range(0, len(jobs), config.batch_size):
            chunk = jobs[start:start + config.batch_size]
            logits, flags = scorer.score([job[3] for job in chunk],
                                         [job[4] for job in chunk])
            for (doc_id, sent_idx, other_doc_id, _, _), (entail, contra), flag in zip(
                    chunk, logits, flags):
                obj = nli_pair_to_json(NLIPairLogits(
                    doc_id=doc_id, sentence_index=sent_idx, other_doc_id=other_doc_id,
                    entailment_logit=entail, contradiction_logit=contra))
                if flag:
                    obj["truncated"] = True
                    truncated += 1
                handle.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n")
                written += 1
    if written:
        load_nli_logits(out_path, bundle)
    return NliStats(written=written, truncated=truncated)
