"""Random fixture builders shared across test modules."""
import numpy as np

from golfer.traces import GenerationTrace, NLIPairLogits, SentenceRecord, TokenRecord

WORDS = (
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
    "india", "juliet", "kilo", "lima", "mike", "november", "oscar", "papa",
    "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey",
    "xray", "yankee", "zulu", "river", "stone", "ember", "cloud",
)


def make_attention(rng: np.random.Generator, o: int):
    rows = []
    for l in range(o):
        row = [None] * (l + 1) + [float(rng.uniform(0.0, 1.0)) for _ in range(o - l - 1)]
        rows.append(tuple(row))
    return tuple(rows)


def make_token(rng: np.random.Generator, word: str) -> TokenRecord:
    prob = float(rng.uniform(0.05, 1.0))
    mode = rng.integers(0, 3)
    entropy = float(rng.uniform(0.0, 3.0)) if mode in (0, 2) else None
    distribution = None
    if mode in (1, 2):
        size = int(rng.integers(2, 6))
        probs = rng.dirichlet(np.ones(size))
        distribution = tuple((i, float(p)) for i, p in enumerate(probs))
    return TokenRecord(text=word + " ", probability=prob, entropy=entropy, distribution=distribution)


def make_sentence(rng: np.random.Generator, n_tokens: int) -> SentenceRecord:
    words = [str(WORDS[int(rng.integers(0, len(WORDS)))]) for _ in range(n_tokens)]
    tokens = tuple(make_token(rng, word) for word in words)
    return SentenceRecord(text=" ".join(words), tokens=tokens, attention=make_attention(rng, n_tokens))


def make_trace(rng: np.random.Generator, query_id: str, doc_id: str,
               max_sentences: int = 3, max_tokens: int = 5) -> GenerationTrace:
    n_sentences = int(rng.integers(1, max_sentences + 1))
    sentences = tuple(make_sentence(rng, int(rng.integers(1, max_tokens + 1)))
                      for _ in range(n_sentences))
    return GenerationTrace(query_id=query_id, doc_id=doc_id, sentences=sentences)


def make_traces(rng: np.random.Generator, query_id: str, n_docs: int,
                max_sentences: int = 3, max_tokens: int = 5) -> list[GenerationTrace]:
    return [make_trace(rng, query_id, f"{query_id}_d{i}", max_sentences, max_tokens)
            for i in range(n_docs)]


def make_nli(rng: np.random.Generator, traces) -> dict:
    """Complete pair map: every sentence against every other doc of the query."""
    pairs: dict = {}
    for trace in traces:
        for sent_idx in range(len(trace.sentences)):
            plist = []
            for other in traces:
                if other.doc_id == trace.doc_id:
                    continue
                plist.append(NLIPairLogits(
                    doc_id=trace.doc_id,
                    sentence_index=sent_idx,
                    other_doc_id=other.doc_id,
                    entailment_logit=float(rng.uniform(-6.0, 6.0)),
                    contradiction_logit=float(rng.uniform(-6.0, 6.0)),
                ))
            pairs[(trace.doc_id, sent_idx)] = plist
    return pairs
