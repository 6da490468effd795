"""Command-line entry points: corpus indexing, single-question answering,
and batch evaluation."""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .accounting import CostLedger, CostReport, format_cost_table
from .evaluation import (
    DatasetFormatError,
    QAExample,
    evaluate,
    exact_match,
    f1_score,
    hit_rate,
    load_dataset,
)
from .prompts import set_template_dir
from .providers import HttpChatProvider, ProviderError, load_script
from .retrieval import (
    CorpusFormatError,
    DuplicateDocumentError,
    EVIDENCE_MODES,
    RETRIEVE_SUMMARIZE,
    index_corpus,
    load_corpus,
    load_index,
    save_index,
)
from .search import SearchConfig, SearchError, SearchRun

DETERMINISM_NOTE = (
    "no random seed: runs are fully determined by the provider, corpus, and config"
)


def _unit_interval(value: str) -> float:
    try:
        out = float(value)
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"not a number: {value!r}") from err
    if not 0.0 <= out <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {value}")
    return out


def _positive_int(value: str) -> int:
    try:
        out = int(value)
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}") from err
    if out < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return out


def _add_search_flags(parser: argparse.ArgumentParser) -> None:
    defaults = SearchConfig()
    parser.add_argument(
        "-S", "--threshold", type=_unit_interval, default=defaults.score_threshold,
        help="early-exit confidence threshold (default %(default)s)",
    )
    parser.add_argument(
        "-B", "--beam-size", type=_positive_int, default=defaults.beam_size,
        help="states kept after each prune (default %(default)s)",
    )
    parser.add_argument(
        "-D", "--max-depth", type=_positive_int, default=defaults.max_depth,
        help="maximum expansion depth (default %(default)s)",
    )
    parser.add_argument(
        "-K", "--max-queries", type=_positive_int, default=defaults.max_queries,
        help="generated queries per expansion (default %(default)s)",
    )
    parser.add_argument(
        "-N", "--retrieval-docs", type=_positive_int, default=defaults.retrieval_docs,
        help="documents per retrieval (default %(default)s)",
    )
    parser.add_argument(
        "--evidence-mode", choices=EVIDENCE_MODES, default=defaults.evidence_mode,
        help="how evidence is produced (default %(default)s)",
    )
    parser.add_argument(
        "--no-dedupe", action="store_true",
        help="keep generated queries already present in a state's history",
    )
    parser.add_argument(
        "--provider", choices=("scripted", "http"), default="http",
        help="completion provider (default %(default)s)",
    )
    parser.add_argument("--script", help="rule file for the scripted provider")
    parser.add_argument("--endpoint", help="chat-completion URL (or BEAMQA_ENDPOINT)")
    parser.add_argument("--api-key", help="bearer token (or BEAMQA_API_KEY)")
    parser.add_argument("--model", default="gpt-3.5-turbo", help="model name (or BEAMQA_MODEL)")
    parser.add_argument("--timeout", type=float, default=30.0, help="HTTP timeout seconds")
    parser.add_argument("--retries", type=int, default=3, help="HTTP transport retries")
    parser.add_argument("--index", help="lexical index file (required for retrieve_summarize)")
    parser.add_argument("--template-dir", help="directory overriding the embedded prompt templates")
    parser.add_argument(
        "--workers", type=_positive_int, default=1,
        help="concurrency degree (default %(default)s)",
    )


def _config_from_args(args: argparse.Namespace) -> SearchConfig:
    return SearchConfig(
        beam_size=args.beam_size,
        max_depth=args.max_depth,
        max_queries=args.max_queries,
        retrieval_docs=args.retrieval_docs,
        score_threshold=args.threshold,
        evidence_mode=args.evidence_mode,
        dedupe_queries=not args.no_dedupe,
    )


def _provider_from_args(args: argparse.Namespace):
    if args.provider == "scripted":
        if not args.script:
            raise ValueError("--provider scripted requires --script")
        return load_script(args.script)
    return HttpChatProvider(
        endpoint=args.endpoint,
        api_key=args.api_key,
        model=args.model,
        timeout=args.timeout,
        max_retries=args.retries,
    )


def _index_from_args(args: argparse.Namespace, config: SearchConfig):
    if config.evidence_mode != RETRIEVE_SUMMARIZE:
        return None
    if not args.index:
        raise ValueError("evidence mode retrieve_summarize requires --index")
    return load_index(args.index)


def _manifest(args: argparse.Namespace, config: SearchConfig, **extra) -> dict:
    provider: dict = {"kind": args.provider}
    if args.provider == "scripted":
        provider["script"] = args.script
    else:
        provider["endpoint"] = args.endpoint
        provider["model"] = args.model
    manifest = {
        "config": config.as_dict(),
        "provider": provider,
        "index_path": args.index,
        "template_dir": args.template_dir,
        "workers": args.workers,
        "determinism": DETERMINISM_NOTE,
    }
    manifest.update(extra)
    return manifest


def _write_json(path: str, payload: dict) -> None:
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def cmd_index(args: argparse.Namespace) -> int:
    try:
        docs = load_corpus(args.corpus)
        index = index_corpus(docs)
    except FileNotFoundError:
        print(f"error: corpus file not found: {args.corpus}", file=sys.stderr)
        return 1
    except (CorpusFormatError, DuplicateDocumentError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    save_index(index, args.out)
    print(f"indexed {len(index)} documents -> {args.out}")
    return 0


def cmd_ask(args: argparse.Namespace) -> int:
    if args.template_dir:
        set_template_dir(args.template_dir)
    try:
        config = _config_from_args(args)
        provider = _provider_from_args(args)
        index = _index_from_args(args, config)
        run = SearchRun(config, provider, index=index, workers=args.workers)
        result = run.run_search(args.question)
    except (ValueError, OSError, ProviderError, SearchError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    if args.trace:
        Path(args.trace).write_text(
            "".join(line + "\n" for line in result.trace_lines()), encoding="utf-8"
        )
    ledger = result.ledger.snapshot()
    print(f"answer: {result.final_answer}")
    print(f"score: {result.final_state.score}")
    print(
        "cost: retrievals={retrieval_times} api_calls={api_times} "
        "prompt_tokens={prompt_tokens} completion_tokens={completion_tokens}".format(**ledger)
    )
    if args.output:
        _write_json(
            args.output,
            {
                "manifest": _manifest(args, config, question=args.question),
                "answer": result.final_answer,
                "score": result.final_state.score,
                "ledger": ledger,
                "cost_report": result.ledger.report().as_dict(),
            },
        )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    if args.template_dir:
        set_template_dir(args.template_dir)
    try:
        examples = load_dataset(args.dataset)
    except FileNotFoundError:
        print(f"error: dataset file not found: {args.dataset}", file=sys.stderr)
        return 1
    except DatasetFormatError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    if not examples:
        print(f"error: dataset {args.dataset} contains no examples", file=sys.stderr)
        return 1
    try:
        config = _config_from_args(args)
        provider = _provider_from_args(args)
        index = _index_from_args(args, config)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    def run_one(example: QAExample):
        return SearchRun(config, provider, index=index).run_search(example.question)

    try:
        if args.workers == 1:
            results = [run_one(ex) for ex in examples]
        else:
            # Questions run in parallel; output keeps dataset order.
            with ThreadPoolExecutor(max_workers=args.workers) as pool:
                results = list(pool.map(run_one, examples))
    except (ProviderError, SearchError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    report = evaluate(results, examples)
    rows = []
    for result, example in zip(results, examples):
        rows.append(
            {
                "question": example.question,
                "gold_answers": list(example.gold_answers),
                "answer": result.final_answer,
                "score": result.final_state.score,
                "em": exact_match(result.final_answer, example.gold_answers),
                "f1": f1_score(result.final_answer, example.gold_answers),
                "hit": hit_rate(
                    [e.text for e in result.final_state.evidences], example.gold_answers
                ),
                "ledger": result.ledger.snapshot(),
                "cost_report": result.ledger.report().as_dict(),
            }
        )
    per_question = _mean_cost_report(report.cost, report.n_examples)
    print(
        f"n={report.n_examples} em={report.em_mean:.4f} f1={report.f1_mean:.4f} "
        f"hit_rate={report.hit_rate:.4f}"
    )
    print(format_cost_table({"totals": report.cost.report(), "per-question": per_question}))
    if args.output:
        _write_json(
            args.output,
            {
                "manifest": _manifest(args, config, dataset_path=args.dataset),
                "summary": {
                    **report.as_dict(),
                    "cost_report_per_question": per_question.as_dict(),
                },
                "questions": rows,
            },
        )
    return 0


def _mean_cost_report(total: CostLedger, n_examples: int) -> CostReport:
    """Per-question means in the same row shape, integer-rounded."""
    snap = total.snapshot()
    api = round(snap["api_times"] / n_examples)
    tokens = snap["prompt_tokens"] + snap["completion_tokens"]
    per_api = round(tokens / snap["api_times"]) if snap["api_times"] else 0
    return CostReport(
        retrieval_times=round(snap["retrieval_times"] / n_examples),
        api_times=api,
        tokens_per_api=per_api,
        tokens_per_query=api * per_api,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beamqa",
        description="Beam-search question answering over LLM calls",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="build a lexical index from a corpus file")
    p_index.add_argument("--corpus", required=True, help="line-delimited {id,title,text} file")
    p_index.add_argument("--out", required=True, help="where to write the index")
    p_index.set_defaults(func=cmd_index)

    p_ask = sub.add_parser("ask", help="answer a single question")
    p_ask.add_argument("question")
    _add_search_flags(p_ask)
    p_ask.add_argument("--trace", help="write the search trace (one JSON event per line)")
    p_ask.add_argument("--output", help="write a JSON result with the run manifest")
    p_ask.set_defaults(func=cmd_ask)

    p_eval = sub.add_parser("eval", help="run a dataset and report EM/F1/hit rate/cost")
    p_eval.add_argument("--dataset", required=True, help="line-delimited {question,answers} file")
    _add_search_flags(p_eval)
    p_eval.add_argument("--output", help="write the JSON report")
    p_eval.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
