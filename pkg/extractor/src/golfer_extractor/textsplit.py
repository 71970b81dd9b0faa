"""Sentence segmentation over a generated token stream.

Sentences are ranges of whole tokens, never substrings: the boundary search
runs on the concatenated token texts, but a break is only taken at a token
edge. A sentence's text is then exactly the concatenation of its tokens'
texts, which is the invariant the trace format checks.
"""
from __future__ import annotations

import re
from typing import Sequence

_TERMINAL_RUN = re.compile(r"[.!?]+")


def _break_offsets(text: str) -> set[int]:
    """Character offsets just after a sentence-terminal run.

    A run of ``.!?`` only terminates a sentence when followed by whitespace
    or the end of the text, so decimals like ``3.5`` stay intact.
    """
    offsets = set()
    for match in _TERMINAL_RUN.finditer(text):
        end = match.end()
        if end == len(text) or text[end].isspace():
            offsets.add(end)
    return offsets


def split_token_stream(token_texts: Sequence[str]) -> list[tuple[int, int]]:
    """Partition token indices into sentence ranges [(start, end), ...].

    A break lands after token i when a boundary falls inside it and the rest
    of the token is whitespace, so a trailing space rides with the sentence
    it closes. A whitespace-only tail merges into the preceding sentence.
    Returns an empty list when the tokens carry no visible text.
    """
    full = "".join(token_texts)
    if not full.strip():
        return []
    offsets = [0]
    for text in token_texts:
        offsets.append(offsets[-1] + len(text))
    breaks = _break_offsets(full)

    ranges: list[tuple[int, int]] = []
    start = 0
    for i in range(len(token_texts)):
        token_start, token_end = offsets[i], offsets[i + 1]
        ends_here = any(token_start < b <= token_end and not full[b:token_end].strip()
                        for b in breaks)
        if ends_here:
            ranges.append((start, i + 1))
            start = i + 1
    if start < len(token_texts):
        ranges.append((start, len(token_texts)))

    if len(ranges) > 1 and not full[offsets[ranges[-1][0]]:].strip():
        tail = ranges.pop()
        ranges[-1] = (ranges[-1][0], tail[1])
    return ranges


def is_terminated(text: str) -> bool:
    """True when the text ends in sentence-terminal punctuation."""
    stripped = text.rstrip()
    return bool(stripped) and stripped[-1] in ".!?"
