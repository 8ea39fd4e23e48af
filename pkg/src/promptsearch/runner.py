"""Run-directory orchestration: journaling, checkpoints, resume, reports.

A run directory is self-describing:

    config.json       resolved configuration (seed included, no secrets)
    candidates.jsonl  append-only journal of every evaluation
    loss_trace.csv    step,best_running_mean,current_batch_loss
    checkpoint.json   resume state after the last completed step
    result.json       final ranking and metadata
    loss_trace.png    rendered figure next to the CSV

Journal and checkpoint keep full float precision (they feed byte-exact
resume); reports round floats to 9 significant digits.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from .config import (
    AVG_SUFFIX,
    RunConfig,
    build_backend,
    build_dataset,
    config_to_dict,
    parse_config,
)
from .datasets import Dataset, RenderTemplate, render
from .decoding import BeamParams, Hypothesis, averaged_suffix_decode
from .errors import ConfigError, EvalError
from .evaluation import build_eval_report
from .oracles.base import OracleBackend
from .search import (
    COORD_SWAP,
    IPROMPT,
    RankedPrompt,
    SearchResult,
    StepRecord,
    TraceRow,
    run_coordinate_swap,
    run_iprompt,
)

log = logging.getLogger(__name__)

TRACE_HEADER = "step,best_running_mean,current_batch_loss\n"


def fmt9(x: float) -> str:
    """Report-file float format: 9 significant digits."""
    return f"{x:.9g}"


def round9(x: float) -> float:
    return float(fmt9(x))


def _round9_tree(obj):
    if isinstance(obj, float):
        return round9(obj)
    if isinstance(obj, dict):
        return {k: _round9_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round9_tree(v) for v in obj]
    return obj


def _write_json(path: Path, payload: dict, *, rounded: bool) -> None:
    if rounded:
        payload = _round9_tree(payload)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _atomic_write_json(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


class RunPaths:
    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.config = self.root / "config.json"
        self.journal = self.root / "candidates.jsonl"
        self.trace = self.root / "loss_trace.csv"
        self.checkpoint = self.root / "checkpoint.json"
        self.result = self.root / "result.json"
        self.trace_figure = self.root / "loss_trace.png"


class RunWriter:
    """Search observer that persists journal, trace, and checkpoint."""

    def __init__(self, paths: RunPaths, *, records_so_far: int = 0) -> None:
        self.paths = paths
        self.records = records_so_far
        self._journal = self.paths.journal.open("a", encoding="utf-8", newline="\n")
        self._trace = self.paths.trace.open("a", encoding="utf-8", newline="\n")

    def write_records(self, records: list[StepRecord]) -> None:
        for record in records:
            self._journal.write(json.dumps(asdict(record), sort_keys=True) + "\n")
            self.records += 1
        self._journal.flush()

    def write_trace_row(self, trace: TraceRow) -> None:
        self._trace.write(
            f"{trace.step},{fmt9(trace.best_running_mean)},{fmt9(trace.current_batch_loss)}\n"
        )
        self._trace.flush()

    def write_checkpoint(self, state: dict) -> None:
        _atomic_write_json(self.paths.checkpoint, {"records": self.records, "state": state})

    def on_step(self, step: int, records: list[StepRecord], trace: TraceRow, state: dict) -> None:
        self.write_records(records)
        self.write_trace_row(trace)
        self.write_checkpoint(state)

    def close(self) -> None:
        self._journal.close()
        self._trace.close()


def _result_payload(
    config: RunConfig, result: SearchResult, backend: OracleBackend, dataset: Dataset
) -> dict:
    notes = []
    if config.algorithm == COORD_SWAP:
        notes.append("gradient-free variant: uniform token swaps guided by batch loss only")
    if config.backend.kind == "http":
        notes.append("remote backend exposes top-k logprobs only; averaging uses sparse support")
    return {
        "algorithm": result.algorithm,
        "seed": config.seed,
        "dataset": dataset.name,
        "backend": backend.identity,
        "ranking": [
            {
                "text": r.text,
                "mean_loss": r.mean_loss,
                "eval_count": r.eval_count,
                "origin": r.origin,
            }
            for r in result.ranking
        ],
        "steps_executed": result.steps_executed,
        "stopped_early": result.stopped_early,
        "warnings": result.warnings,
        "metadata": {"algorithm_notes": notes, "trace_rows": len(result.trace)},
    }


def _run_avg_suffix(
    config: RunConfig,
    backend: OracleBackend,
    dataset: Dataset,
    writer: RunWriter,
) -> SearchResult:
    """Single-pass averaged-logit decode presented as a search result."""
    plain = RenderTemplate(pattern="{input}{output}")
    contexts = [
        render(plain, "", example, backend).full_text + config.suffix_template
        for example in dataset.examples
    ]
    trace: list[TraceRow] = []
    best_so_far = -math.inf

    def on_beam_step(step: int, beam: list[Hypothesis]) -> None:
        nonlocal best_so_far
        step_best = max(h.normalized_score(config.beam.length_alpha) for h in beam)
        best_so_far = max(best_so_far, step_best)
        row = TraceRow(
            step=step,
            best_running_mean=-best_so_far,
            current_batch_loss=-step_best,
        )
        trace.append(row)
        writer.write_trace_row(row)

    hypotheses = averaged_suffix_decode(
        backend, contexts, config.beam, step_callback=on_beam_step
    )
    final_step = trace[-1].step if trace else 1
    ranking = []
    records: list[StepRecord] = []
    for rank, hyp in enumerate(hypotheses):
        # The candidate prompt is the shared template plus the decoded
        # continuation, e.g. "To compute the output from the input, add ...".
        text = config.suffix_template + backend.detokenize(hyp.tokens)
        loss = -hyp.normalized_score(config.beam.length_alpha)
        ranking.append(
            RankedPrompt(text=text, mean_loss=loss, eval_count=len(contexts), origin="decode")
        )
        records.append(
            StepRecord(
                step=final_step,
                text=text,
                origin="decode",
                batch_loss=loss,
                running_mean=loss,
                eval_count=len(contexts),
                accepted=rank == 0,
            )
        )
    writer.write_records(records)
    writer.write_checkpoint({"algorithm": AVG_SUFFIX, "step": final_step})
    return SearchResult(
        algorithm=AVG_SUFFIX,
        ranking=ranking,
        trace=trace,
        steps_executed=final_step,
        stopped_early=False,
        warnings=[],
    )


def start_run(config: RunConfig, out_dir: str | Path) -> tuple[RunPaths, Dataset, OracleBackend]:
    paths = RunPaths(out_dir)
    paths.root.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(config.dataset)
    backend = build_backend(config.backend, dataset)
    _write_json(paths.config, config_to_dict(config), rounded=False)
    return paths, dataset, backend


def run_search(config: RunConfig, out_dir: str | Path) -> SearchResult:
    """Execute the configured algorithm into a fresh run directory."""
    paths, dataset, backend = start_run(config, out_dir)
    for stale in (paths.journal, paths.trace, paths.checkpoint, paths.result):
        if stale.exists():
            stale.unlink()
    paths.trace.write_text(TRACE_HEADER, encoding="utf-8")
    writer = RunWriter(paths)
    try:
        result = _dispatch(config, backend, dataset, writer, state=None)
    finally:
        writer.close()
    _finish(paths, config, result, backend, dataset)
    return result


def _dispatch(
    config: RunConfig,
    backend: OracleBackend,
    dataset: Dataset,
    writer: RunWriter,
    state: dict | None,
) -> SearchResult:
    if config.algorithm == IPROMPT:
        return run_iprompt(
            backend, dataset, config.search, seed=config.seed, observer=writer, state=state
        )
    if config.algorithm == COORD_SWAP:
        return run_coordinate_swap(
            backend, dataset, config.search, seed=config.seed, observer=writer, state=state
        )
    return _run_avg_suffix(config, backend, dataset, writer)


def _finish(
    paths: RunPaths,
    config: RunConfig,
    result: SearchResult,
    backend: OracleBackend,
    dataset: Dataset,
) -> None:
    _write_json(paths.result, _result_payload(config, result, backend, dataset), rounded=True)
    try:
        from .report import render_loss_trace

        render_loss_trace(paths.trace, paths.trace_figure)
    except Exception as exc:  # figure rendering must never fail the run
        log.warning("could not render loss trace figure: %s", exc)


def resume_run(out_dir: str | Path) -> SearchResult:
    """Continue an interrupted run from its checkpoint.

    The journal and trace files are truncated back to the checkpointed
    step, so a resumed run reproduces the uninterrupted artifacts exactly.
    """
    paths = RunPaths(out_dir)
    if not paths.config.exists():
        raise ConfigError(f"{paths.root} is not a run directory (missing config.json)")
    config = parse_config(
        json.loads(paths.config.read_text(encoding="utf-8")), base_dir=paths.root
    )
    dataset = build_dataset(config.dataset)
    backend = build_backend(config.backend, dataset)
    if config.algorithm == AVG_SUFFIX or not paths.checkpoint.exists():
        # Single-pass decode (or no checkpoint yet): deterministic, so a
        # plain re-run reproduces the same artifacts.
        return run_search(config, paths.root)
    checkpoint = json.loads(paths.checkpoint.read_text(encoding="utf-8"))
    state = checkpoint["state"]
    records = int(checkpoint["records"])
    _truncate_journal(paths.journal, records)
    _rewrite_trace(paths.trace, state.get("trace", []))
    writer = RunWriter(paths, records_so_far=records)
    try:
        result = _dispatch(config, backend, dataset, writer, state=state)
    finally:
        writer.close()
    _finish(paths, config, result, backend, dataset)
    return result


def _truncate_journal(path: Path, records: int) -> None:
    if not path.exists():
        path.touch()
        return
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.readlines()
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines[:records])


def _rewrite_trace(path: Path, rows: list[dict]) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRACE_HEADER)
        for row in rows:
            fh.write(
                f"{row['step']},{fmt9(row['best_running_mean'])},{fmt9(row['current_batch_loss'])}\n"
            )


def replay_journal(path: str | Path, min_evals: int = 1) -> list[tuple[str, float, int]]:
    """Fold the journal back into the final ranking (text, mean, count).

    Means use exact summation over the replayed losses, so the result
    matches the live ledger regardless of how the run was interrupted.
    """
    losses: dict[str, list[float]] = {}
    first_step: dict[str, int] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            text = record["text"]
            losses.setdefault(text, []).append(float(record["batch_loss"]))
            first_step.setdefault(text, int(record["step"]))
    pool = [
        (text, math.fsum(vals) / len(vals), len(vals))
        for text, vals in losses.items()
        if len(vals) >= min_evals
    ]
    if not pool:
        pool = [(text, math.fsum(vals) / len(vals), len(vals)) for text, vals in losses.items()]
    pool.sort(key=lambda item: (item[1], first_step[item[0]], item[0]))
    return pool


def load_result(out_dir: str | Path) -> dict:
    path = RunPaths(out_dir).result
    if not path.exists():
        raise EvalError(f"{out_dir} has no result.json (run not finished?)")
    return json.loads(path.read_text(encoding="utf-8"))


def evaluate_runs(
    run_dirs: Sequence[str | Path],
    out_dir: str | Path | None = None,
    *,
    include_no_prompt: bool = False,
    with_matrix: bool | None = None,
    extra_backends: dict[str, OracleBackend] | None = None,
) -> dict:
    """Cross-run evaluation: MRR, correctness, zero-shot, generalization.

    Each run directory contributes its dataset, backend, and final ranking.
    Writes eval_report.json (plus matrix.csv/matrix.png when the matrix is
    requested) into ``out_dir`` (default: first run directory).
    """
    if not run_dirs:
        raise EvalError("no run directories given")
    datasets: list[Dataset] = []
    rankings: list[list[tuple[str, float, int]]] = []
    backends: dict[str, OracleBackend] = {}
    matrix_backends: list[OracleBackend] = []
    eval_spec = None
    for run_dir in run_dirs:
        paths = RunPaths(run_dir)
        if not paths.config.exists():
            raise EvalError(f"{run_dir} is not a run directory (missing config.json)")
        config = parse_config(
            json.loads(paths.config.read_text(encoding="utf-8")), base_dir=paths.root
        )
        dataset = build_dataset(config.dataset)
        if dataset.keyword_rule is None:
            raise EvalError(f"dataset {dataset.name!r} has no keyword rule; cannot score MRR")
        backend = build_backend(config.backend, dataset)
        result = load_result(run_dir)
        ranking = [
            (entry["text"], float(entry["mean_loss"]), int(entry["eval_count"]))
            for entry in result["ranking"]
        ]
        if not ranking:
            raise EvalError(f"run {run_dir} has an empty ranking")
        datasets.append(dataset)
        rankings.append(ranking)
        backends.setdefault(backend.identity, backend)
        matrix_backends.append(backend)
        eval_spec = eval_spec or config.eval
    assert eval_spec is not None
    if extra_backends:
        backends.update(extra_backends)
    if with_matrix is None:
        with_matrix = eval_spec.matrix
    report = build_eval_report(
        datasets,
        rankings,
        backends,
        config=eval_spec.zero_shot(),
        include_no_prompt=include_no_prompt,
        with_matrix=with_matrix,
        matrix_backends=matrix_backends if with_matrix else None,
    )
    target = Path(out_dir) if out_dir is not None else RunPaths(run_dirs[0]).root
    target.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    _write_json(target / "eval_report.json", payload, rounded=True)
    _write_generalization_csv(target / "generalization.csv", report)
    if report.matrix is not None:
        _write_matrix_csv(target / "matrix.csv", report.matrix)
        try:
            from .report import render_matrix

            render_matrix(report.matrix, target / "matrix.png")
        except Exception as exc:
            log.warning("could not render matrix figure: %s", exc)
    return payload


def _write_matrix_csv(path: Path, matrix) -> None:
    lines = ["prompt," + ",".join(matrix.dataset_names)]
    for prompt, row in zip(matrix.prompts, matrix.normalized):
        cells = ",".join(fmt9(v) for v in row)
        lines.append(f"{_csv_quote(prompt)},{cells}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_generalization_csv(path: Path, report) -> None:
    table = report.generalization
    if table is None:
        return
    lines = ["backend," + ",".join(table.methods)]
    for backend_name in table.backend_names:
        cells = []
        for method in table.methods:
            value = table.cells[method][backend_name]
            cells.append("" if value is None else fmt9(value))
        lines.append(f"{_csv_quote(backend_name)}," + ",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _csv_quote(value: str) -> str:
    if "," in value or '"' in value or "\n" in value:
        return '"' + value.replace('"', '""') + '"'
    return value


def cmd_gen_data(source: str, seed: int, out: str | Path) -> Dataset:
    """Write a dataset to JSONL from a task name or an existing JSONL file.

    Same seed, same bytes: generation is fully determined by (task, seed).
    """
    from .datasets import MATH_TASKS, generate_math_dataset, load_jsonl_dataset, write_jsonl

    if source in MATH_TASKS:
        dataset = generate_math_dataset(source, seed=seed)
    elif Path(source).exists():
        dataset = load_jsonl_dataset(source)
    else:
        raise ConfigError(
            f"unknown task {source!r} and no such file; valid tasks: "
            + ", ".join(sorted(MATH_TASKS))
        )
    out = Path(out)
    if out.parent != Path("."):
        out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(dataset, out)
    return dataset
