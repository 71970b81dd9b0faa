"""Extractor configuration: model identifiers and generation settings."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

DEFAULT_TEMPLATE = "Please write a passage to answer the question. {question}"
HEAD_AGGREGATIONS = ("mean", "max")
SENTENCE_SPLITTERS = ("regex",)


class ExtractorError(Exception):
    """Base class for everything this package raises on purpose."""


class ConfigError(ExtractorError):
    pass


@dataclass(frozen=True)
class ExtractorConfig:
    """Settings for trace generation, NLI scoring, and embedding.

    ``model``, ``nli_model``, and ``encoder`` are passed to
    ``from_pretrained`` as given, so they may be hub identifiers or local
    directories relative to the working directory. Only the models a command
    actually uses need to be set.
    """

    model: str = ""
    nli_model: str = ""
    encoder: str = ""
    temperature: float = 0.6
    top_p: float = 0.9
    max_new_tokens: int = 128
    n_per_query: int = 5
    template: str = DEFAULT_TEMPLATE
    head_aggregation: str = "mean"
    sentence_splitter: str = "regex"
    dist_top_k: int = 0
    max_nli_tokens: int = 0
    batch_size: int = 8
    seed: int = 0
    device: str = "cpu"

    def __post_init__(self) -> None:
        if self.temperature < 0.0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature!r}")
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigError(f"top_p must lie in (0, 1], got {self.top_p!r}")
        if self.max_new_tokens < 1:
            raise ConfigError(f"max_new_tokens must be >= 1, got {self.max_new_tokens!r}")
        if self.n_per_query < 1:
            raise ConfigError(f"n_per_query must be >= 1, got {self.n_per_query!r}")
        if "{question}" not in self.template:
            raise ConfigError("template must contain a {question} placeholder")
        if self.head_aggregation not in HEAD_AGGREGATIONS:
            raise ConfigError(f"head_aggregation must be one of {HEAD_AGGREGATIONS}, "
                              f"got {self.head_aggregation!r}")
        if self.sentence_splitter not in SENTENCE_SPLITTERS:
            raise ConfigError(f"sentence_splitter must be one of {SENTENCE_SPLITTERS}, "
                              f"got {self.sentence_splitter!r}")
        if self.dist_top_k < 0:
            raise ConfigError(f"dist_top_k must be >= 0, got {self.dist_top_k!r}")
        if self.max_nli_tokens < 0:
            raise ConfigError(f"max_nli_tokens must be >= 0, got {self.max_nli_tokens!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size!r}")


_FIELDS = {field.name for field in dataclasses.fields(ExtractorConfig)}


def load_config(path: str | Path) -> ExtractorConfig:
    """Load a flat TOML config, rejecting unknown keys."""
    path = Path(path)
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    unknown = sorted(set(data) - _FIELDS)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    try:
        return ExtractorConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
