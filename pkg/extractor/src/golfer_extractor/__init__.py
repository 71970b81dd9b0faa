"""Produce golfer input files from real models.

The extractor runs an instruct LM to generate hypothetical documents per
query while recording token probabilities, full-vocabulary entropies, and
last-layer attention; an NLI classifier to score every sentence against the
other documents of its query; and a dense encoder for embeddings, in batch
mode or behind the HTTP wire protocol golfer's embedding provider speaks.
Everything it writes passes golfer's loaders.
"""
from .config import ConfigError, ExtractorConfig, ExtractorError, load_config

__all__ = ["ConfigError", "ExtractorConfig", "ExtractorError", "load_config"]

__version__ = "0.1.0"
