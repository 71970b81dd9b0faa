"""Command-line front end.

``golfer run`` drives the whole pipeline from a TOML config.  ``filter``
and ``eval`` are self-contained and take explicit file flags; ``combine``
and ``search`` resume from the artifacts in the config's output directory,
which makes every stage rerunnable in isolation.

Exit status is 0 on success and 1 on any pipeline failure; diagnostics go
to stderr tagged with the failing stage, e.g. ``[combine] ...``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from .errors import GolferError, PipelineError
from .evaluation import evaluate_run, load_qrels, parse_metric_list, write_report_json, write_report_tsv
from .filtering import apply_filter, write_filter_reports
from .pipeline import _run_stage, load_config, run_pipeline, stage_combine, stage_search
from .retrieval import read_run
from .traces import load_nli_logits, load_trace_bundle


def _print_means(report) -> None:
    for label in report.metrics:
        mean = report.means[label]
        print(f"{label}\t{'NA' if mean is None else mean!r}")


def _cmd_run(args) -> int:
    report = run_pipeline(load_config(args.config))
    if report is not None:
        _print_means(report)
    return 0


def _cmd_filter(args) -> int:
    try:
        bundle = load_trace_bundle(args.traces)
        nli = load_nli_logits(args.nli, bundle)
        reports = [
            apply_filter(bundle[qid], nli, threshold=args.threshold,
                         last_token_attention=args.last_token_attention)
            for qid in sorted(bundle)
        ]
        write_filter_reports(reports, args.out)
    except PipelineError:
        raise
    except GolferError as exc:
        raise PipelineError(str(exc), stage="filter") from exc
    return 0


def _cmd_combine(args) -> int:
    _run_stage("combine", stage_combine, load_config(args.config))
    return 0


def _cmd_search(args) -> int:
    _run_stage("search", stage_search, load_config(args.config))
    return 0


def _cmd_eval(args) -> int:
    try:
        runs = read_run(args.run)
        qrels = load_qrels(args.qrels)
        metrics = parse_metric_list(args.metrics)
        report = evaluate_run(runs, qrels, metrics, cutoff=args.relevance_cutoff)
        if args.report_tsv:
            write_report_tsv(report, args.report_tsv)
        if args.report_json:
            write_report_json(report, args.report_json)
    except PipelineError:
        raise
    except GolferError as exc:
        raise PipelineError(str(exc), stage="eval") from exc
    _print_means(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="golfer",
                                     description="Query expansion with hallucination filtering.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the full pipeline from a config")
    run_p.add_argument("--config", required=True, help="TOML config file")
    run_p.set_defaults(func=_cmd_run)

    filter_p = sub.add_parser("filter", help="score traces and write the filter report")
    filter_p.add_argument("--traces", required=True)
    filter_p.add_argument("--nli", required=True)
    filter_p.add_argument("--out", required=True, help="filter report output path")
    filter_p.add_argument("--threshold", type=float, default=0.8)
    filter_p.add_argument("--last-token-attention", choices=("zero", "exclude"), default="zero")
    filter_p.set_defaults(func=_cmd_filter)

    combine_p = sub.add_parser("combine",
                               help="build expanded queries from the config's artifacts")
    combine_p.add_argument("--config", required=True)
    combine_p.set_defaults(func=_cmd_combine)

    search_p = sub.add_parser("search",
                              help="retrieve top-k for the config's expanded queries")
    search_p.add_argument("--config", required=True)
    search_p.set_defaults(func=_cmd_search)

    eval_p = sub.add_parser("eval", help="score a run file against qrels")
    eval_p.add_argument("--run", required=True, help="TREC run file")
    eval_p.add_argument("--qrels", required=True, help="TREC qrels file")
    eval_p.add_argument("--metrics", required=True,
                        help="comma-separated, e.g. ndcg@10,map,recall@100")
    eval_p.add_argument("--relevance-cutoff", type=int, default=1,
                        help="binary relevance grade cutoff (TREC DL uses 2)")
    eval_p.add_argument("--report-tsv", help="also write the per-query report as TSV")
    eval_p.add_argument("--report-json", help="also write the per-query report as JSON")
    eval_p.set_defaults(func=_cmd_eval)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING,
                        format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GolferError, OSError) as exc:
        print(f"golfer: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
