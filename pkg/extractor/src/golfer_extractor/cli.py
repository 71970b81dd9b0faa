"""Command line interface: extract generate|nli|embed|serve."""
from __future__ import annotations

import argparse
import sys

from golfer.errors import GolferError
from golfer.retrieval import load_corpus
from golfer.traces import load_queries, load_trace_bundle

from .config import ExtractorError, load_config


def _cmd_generate(args) -> int:
    from .generate import generate_traces

    config = load_config(args.config)
    queries = load_queries(args.queries)
    stats = generate_traces(queries, config, args.out, args.errors)
    print(f"wrote {stats.written} traces to {args.out}")
    for query_id, index in stats.failed:
        print(f"failed: ({query_id}, {index})", file=sys.stderr)
    return 1 if stats.failed else 0


def _cmd_nli(args) -> int:
    from .nli import score_nli

    config = load_config(args.config)
    bundle = load_trace_bundle(args.traces)
    stats = score_nli(bundle, config, args.out)
    suffix = f" ({stats.truncated} truncated)" if stats.truncated else ""
    print(f"wrote {stats.written} NLI pairs to {args.out}{suffix}")
    return 0


def _cmd_embed(args) -> int:
    from .embed import TextEncoder, embed_corpus, embed_requests, read_requests

    config = load_config(args.config)
    encoder = TextEncoder(config)
    if args.requests:
        stats = embed_requests(read_requests(args.requests), encoder, args.out)
    else:
        stats = embed_corpus(load_corpus(args.corpus), encoder, args.out)
    print(f"wrote {stats.written} vectors to {args.out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .embed import TextEncoder
    from .server import build_app

    config = load_config(args.config)
    app = build_app(TextEncoder(config), max_items=args.max_items)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="extract",
                                     description="Produce golfer input files from real models.")
    sub = parser.add_subparsers(dest="command", required=True)

    generate = sub.add_parser("generate", help="sample hypothetical documents into traces.jsonl")
    generate.add_argument("--queries", required=True, help="queries.tsv")
    generate.add_argument("--config", required=True, help="extractor TOML config")
    generate.add_argument("--out", required=True, help="output traces.jsonl")
    generate.add_argument("--errors", default=None, help="error-stub jsonl for failed generations")
    generate.set_defaults(func=_cmd_generate)

    nli = sub.add_parser("nli", help="score sentence/document pairs into nli.jsonl")
    nli.add_argument("--traces", required=True, help="traces.jsonl")
    nli.add_argument("--config", required=True)
    nli.add_argument("--out", required=True, help="output nli.jsonl")
    nli.set_defaults(func=_cmd_nli)

    embed = sub.add_parser("embed", help="write embeddings.jsonl for requests or a corpus")
    embed.add_argument("--config", required=True)
    embed.add_argument("--out", required=True, help="output embeddings.jsonl")
    source = embed.add_mutually_exclusive_group(required=True)
    source.add_argument("--requests", help="embedding_requests.jsonl; output keyed by content hash")
    source.add_argument("--corpus", help="corpus.jsonl; output keyed by doc id")
    embed.set_defaults(func=_cmd_embed)

    serve = sub.add_parser("serve", help="serve the HTTP embed endpoint")
    serve.add_argument("--config", required=True)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8765)
    serve.add_argument("--max-items", type=int, default=256)
    serve.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ExtractorError, GolferError, OSError) as exc:
        print(f"extract: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
