"""Session fixtures: tiny randomly-initialized models saved to disk.

The extractor's real loading paths (from_pretrained, eager attention, label
maps, pair encoding) are exercised end to end; only the weights are
meaningless. Everything is seeded, so test outcomes are stable.
"""
from pathlib import Path

import pytest
import torch
from tokenizers import Tokenizer, models, pre_tokenizers, processors
from transformers import (
    BertConfig,
    BertForSequenceClassification,
    BertModel,
    GPT2Config,
    GPT2LMHeadModel,
    PreTrainedTokenizerFast,
)

from golfer_extractor.config import ExtractorConfig

WORDS = [
    "the", "a", "cat", "dog", "mat", "tree", "house", "river", "stone", "cloud",
    "runs", "sits", "sleeps", "jumps", "falls", "red", "blue", "old", "small",
    "big", ".", "!", "?", "and", "on", "under", "near", "question", "answer",
    "passage",
]


def _build_lm(path: Path) -> None:
    vocab = {"[PAD]": 0}
    for word in WORDS:
        vocab[word] = len(vocab)
    tok = Tokenizer(models.WordLevel(vocab, unk_token="[PAD]"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    fast = PreTrainedTokenizerFast(tokenizer_object=tok, pad_token="[PAD]")
    # no eos on purpose: generation always runs to max_new_tokens
    torch.manual_seed(90001)
    config = GPT2Config(vocab_size=len(vocab), n_positions=128, n_embd=32,
                        n_layer=2, n_head=2, bos_token_id=None, eos_token_id=None)
    GPT2LMHeadModel(config).save_pretrained(path)
    fast.save_pretrained(path)


def _pair_tokenizer() -> PreTrainedTokenizerFast:
    vocab = {"[PAD]": 0, "[UNK]": 1, "[CLS]": 2, "[SEP]": 3}
    for word in WORDS:
        vocab[word] = len(vocab)
    tok = Tokenizer(models.WordLevel(vocab, unk_token="[UNK]"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    tok.post_processor = processors.TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B:1 [SEP]:1",
        special_tokens=[("[CLS]", 2), ("[SEP]", 3)])
    return PreTrainedTokenizerFast(tokenizer_object=tok, pad_token="[PAD]",
                                   unk_token="[UNK]", cls_token="[CLS]", sep_token="[SEP]")


def _bert_config(**extra) -> BertConfig:
    return BertConfig(vocab_size=4 + len(WORDS), hidden_size=32, num_hidden_layers=2,
                      num_attention_heads=2, intermediate_size=64,
                      max_position_embeddings=256, pad_token_id=0, **extra)


def _build_nli(path: Path) -> None:
    torch.manual_seed(90002)
    config = _bert_config(
        num_labels=3,
        id2label={0: "entailment", 1: "neutral", 2: "contradiction"},
        label2id={"entailment": 0, "neutral": 1, "contradiction": 2})
    BertForSequenceClassification(config).save_pretrained(path)
    _pair_tokenizer().save_pretrained(path)


def _build_encoder(path: Path) -> None:
    torch.manual_seed(90003)
    BertModel(_bert_config()).save_pretrained(path)
    _pair_tokenizer().save_pretrained(path)


@pytest.fixture(scope="session")
def model_dirs(tmp_path_factory) -> dict[str, str]:
    root = tmp_path_factory.mktemp("models")
    _build_lm(root / "lm")
    _build_nli(root / "nli")
    _build_encoder(root / "encoder")
    return {name: str(root / name) for name in ("lm", "nli", "encoder")}


@pytest.fixture(scope="session")
def make_config(model_dirs):
    def factory(**overrides) -> ExtractorConfig:
        settings = dict(model=model_dirs["lm"], nli_model=model_dirs["nli"],
                        encoder=model_dirs["encoder"], max_new_tokens=12,
                        n_per_query=2, batch_size=4)
        settings.update(overrides)
        return ExtractorConfig(**settings)
    return factory
