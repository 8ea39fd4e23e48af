"""Command-line entry point.

Subcommands: gen-data, search, eval, resume.  Exit codes: 0 success,
2 configuration error, 3 backend error, 4 evaluation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ALGORITHMS, parse_config
from .errors import (
    ConfigError,
    DatasetError,
    EvalError,
    OracleError,
    PromptSearchError,
    RenderError,
    SearchError,
)
from .runner import cmd_gen_data, evaluate_runs, resume_run, run_search

EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_EVAL = 4

log = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptsearch",
        description="Search for natural-language prompts that explain a dataset.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a dataset to JSONL")
    gen.add_argument("source", help="task name or existing JSONL file")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output JSONL path")

    search = sub.add_parser("search", help="run a prompt search into a run directory")
    search.add_argument("--config", required=True, help="JSON config file")
    search.add_argument("--seed", type=int, default=None, help="override config seed")
    search.add_argument(
        "--algorithm", choices=ALGORITHMS, default=None, help="override config algorithm"
    )
    search.add_argument(
        "--backend",
        default=None,
        choices=("planted", "ngram", "http"),
        help="override backend kind",
    )
    search.add_argument("--out", default=None, help="run directory (overrides config)")
    search.add_argument(
        "--parallelism", type=int, default=None, help="override evaluation parallelism"
    )

    ev = sub.add_parser("eval", help="evaluate finished run directories")
    ev.add_argument("runs", nargs="+", help="run directories with result.json")
    ev.add_argument("--out", default=None, help="report directory (default: first run)")
    ev.add_argument(
        "--no-prompt",
        action="store_true",
        help="add the empty-prompt baseline row to the generalization table",
    )
    ev.add_argument(
        "--matrix",
        action="store_true",
        help="also emit the prompt-selection matrix (matrix.csv, matrix.png)",
    )

    res = sub.add_parser("resume", help="continue an interrupted run")
    res.add_argument("run_dir", help="run directory with checkpoint.json")
    return parser


def _load_search_config(args: argparse.Namespace):
    path = Path(args.config)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    # CLI overrides are merged into the document before validation so every
    # constraint is checked in one place.
    if args.seed is not None:
        data["seed"] = args.seed
    if args.algorithm is not None:
        data["algorithm"] = args.algorithm
    if args.backend is not None:
        backend = dict(data.get("backend", {}))
        backend["kind"] = args.backend
        data["backend"] = backend
    if args.parallelism is not None:
        search = dict(data.get("search", {}))
        search["parallelism"] = args.parallelism
        data["search"] = search
    if args.out is not None:
        data["out"] = args.out
    config = parse_config(data, base_dir=path.resolve().parent)
    if config.out is None:
        raise ConfigError("no output directory: set 'out' in the config or pass --out")
    return config


def _cmd_gen_data(args: argparse.Namespace) -> int:
    dataset = cmd_gen_data(args.source, args.seed, args.out)
    print(f"wrote {len(dataset.examples)} examples to {args.out}")
    return 0


def _cmd_search(args: argparse.Namespace) -> int:
    config = _load_search_config(args)
    result = run_search(config, config.out)
    top = result.ranking[0] if result.ranking else None
    print(f"run directory: {config.out}")
    print(f"steps executed: {result.steps_executed} (stopped early: {result.stopped_early})")
    if top is not None:
        print(f"best prompt ({top.mean_loss:.6g}): {top.text}")
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    report = evaluate_runs(
        args.runs,
        args.out,
        include_no_prompt=args.no_prompt,
        with_matrix=True if args.matrix else None,
    )
    target = args.out if args.out is not None else args.runs[0]
    print(f"eval report: {Path(target) / 'eval_report.json'}")
    print(f"mrr: {report['mrr']:.6g}")
    print(f"top_prompt_correctness: {report['top_prompt_correctness']:.6g}")
    return 0


def _cmd_resume(args: argparse.Namespace) -> int:
    result = resume_run(args.run_dir)
    print(f"run directory: {args.run_dir}")
    print(f"steps executed: {result.steps_executed} (stopped early: {result.stopped_early})")
    if result.ranking:
        top = result.ranking[0]
        print(f"best prompt ({top.mean_loss:.6g}): {top.text}")
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "search": _cmd_search,
    "eval": _cmd_eval,
    "resume": _cmd_resume,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, DatasetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OracleError, SearchError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (EvalError, RenderError) as exc:
        print(f"evaluation error: {exc}", file=sys.stderr)
        return EXIT_EVAL
    except PromptSearchError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
