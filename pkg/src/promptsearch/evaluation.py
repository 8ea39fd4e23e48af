"""Metrics and evaluation protocols for searched prompts.

Covers mean reciprocal rank against keyword rules, beam-decoded zero-shot
exact-match accuracy, the prompt-by-task selection matrix (softmax per
task column), and cross-backend generalization tables.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .datasets import Dataset, KeywordRule, RenderTemplate, check_keywords, render
from .decoding import BeamParams, beam_search
from .errors import ConfigError, EvalError, OracleError
from .oracles.base import OracleBackend

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class ZeroShotConfig:
    beam_width: int = 4
    length_alpha: float = 0.6
    max_new_tokens: int = 16
    case_sensitive: bool = True

    def __post_init__(self) -> None:
        if self.beam_width < 1:
            raise ConfigError("beam_width must be >= 1")
        if self.max_new_tokens < 1:
            raise ConfigError("max_new_tokens must be >= 1")


def normalize_answer(text: str, case_sensitive: bool = True) -> str:
    """Trim surrounding whitespace and at most one trailing period."""
    out = text.strip()
    if out.endswith("."):
        out = out[:-1]
    return out if case_sensitive else out.casefold()


def reciprocal_rank(ranking: Sequence[str], rule: KeywordRule) -> float:
    """1/rank of the first rule-matching candidate; 0 when none matches."""
    if not ranking:
        raise EvalError("empty candidate ranking")
    for i, text in enumerate(ranking, start=1):
        if check_keywords(rule, text):
            return 1.0 / i
    return 0.0


def mrr(rankings: Sequence[Sequence[str]], rules: Sequence[KeywordRule]) -> float:
    if len(rankings) != len(rules):
        raise EvalError(f"{len(rankings)} rankings but {len(rules)} rules")
    if not rankings:
        raise EvalError("need at least one dataset for MRR")
    return math.fsum(reciprocal_rank(r, rule) for r, rule in zip(rankings, rules)) / len(rankings)


def top_prompt_correctness(
    rankings: Sequence[Sequence[str]], rules: Sequence[KeywordRule]
) -> float:
    if len(rankings) != len(rules):
        raise EvalError(f"{len(rankings)} rankings but {len(rules)} rules")
    if not rankings:
        raise EvalError("need at least one dataset")
    hits = 0
    for ranking, rule in zip(rankings, rules):
        if not ranking:
            raise EvalError("empty candidate ranking")
        hits += check_keywords(rule, ranking[0])
    return hits / len(rankings)


def _check_zero_shot_template(template: RenderTemplate) -> None:
    pattern = template.pattern
    if "{prompt}" not in pattern or pattern.index("{prompt}") > pattern.index("{input}"):
        raise EvalError("zero-shot template must place {prompt} before {input}")


def zero_shot_accuracy(
    backend: OracleBackend,
    prompt: str,
    dataset: Dataset,
    template: RenderTemplate | None = None,
    config: ZeroShotConfig | None = None,
) -> float:
    """Exact-match accuracy of beam-decoded continuations of prompt+input.

    Backend failures on individual examples are logged and counted as
    mismatches rather than aborting the whole evaluation.
    """
    template = template or RenderTemplate()
    config = config or ZeroShotConfig()
    _check_zero_shot_template(template)
    params = BeamParams(
        width=config.beam_width,
        max_len=config.max_new_tokens,
        length_alpha=config.length_alpha,
    )
    hits = 0
    for example in dataset.examples:
        rendered = render(template, prompt, example, backend)
        try:
            top = beam_search(backend, rendered.context_text, params)[0]
        except OracleError as exc:
            log.warning("zero-shot decode failed on %r: %s", example.input_text, exc)
            continue
        decoded = backend.detokenize(top.tokens)
        if normalize_answer(decoded, config.case_sensitive) == normalize_answer(
            example.output_text, config.case_sensitive
        ):
            hits += 1
    return hits / len(dataset.examples)


@dataclass(slots=True)
class SelectionMatrix:
    """Accuracy grid over prompts (rows) by datasets (columns)."""

    prompts: list[str]
    dataset_names: list[str]
    raw: list[list[float]]
    normalized: list[list[float]]
    diagonal_argmax: list[bool] | None

    def to_dict(self) -> dict:
        return {
            "prompts": self.prompts,
            "datasets": self.dataset_names,
            "raw": self.raw,
            "normalized": self.normalized,
            "diagonal_argmax": self.diagonal_argmax,
        }


def _resolve_backends(
    backend: OracleBackend | Sequence[OracleBackend], count: int
) -> list[OracleBackend]:
    if isinstance(backend, OracleBackend):
        return [backend] * count
    backends = list(backend)
    if len(backends) != count:
        raise EvalError(f"{len(backends)} backends for {count} datasets")
    return backends


def selection_matrix(
    backend: OracleBackend | Sequence[OracleBackend],
    prompts: Sequence[str],
    datasets: Sequence[Dataset],
    template: RenderTemplate | None = None,
    config: ZeroShotConfig | None = None,
) -> SelectionMatrix:
    """Zero-shot accuracy of every prompt on every dataset, softmax per column.

    A sequence of backends is interpreted positionally, one per dataset, so
    each task can be scored by its own oracle.
    """
    if not prompts or not datasets:
        raise EvalError("selection matrix needs at least one prompt and one dataset")
    backends = _resolve_backends(backend, len(datasets))
    raw = [
        [
            zero_shot_accuracy(backends[t], prompt, datasets[t], template, config)
            for t in range(len(datasets))
        ]
        for prompt in prompts
    ]
    grid = np.asarray(raw, dtype=float)
    shifted = np.exp(grid - grid.max(axis=0, keepdims=True))
    normalized = shifted / shifted.sum(axis=0, keepdims=True)
    diagonal = None
    if len(prompts) == len(datasets):
        diagonal = [int(np.argmax(normalized[:, t])) == t for t in range(len(datasets))]
    return SelectionMatrix(
        prompts=list(prompts),
        dataset_names=[d.name for d in datasets],
        raw=grid.tolist(),
        normalized=normalized.tolist(),
        diagonal_argmax=diagonal,
    )


@dataclass(slots=True)
class GeneralizationTable:
    """Method rows by backend columns; cells are mean zero-shot accuracies."""

    methods: list[str]
    backend_names: list[str]
    cells: dict[str, dict[str, float | None]]
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "methods": self.methods,
            "backends": self.backend_names,
            "cells": self.cells,
            "notes": self.notes,
        }


NO_PROMPT_METHOD = "no_prompt"


def generalization_eval(
    prompts_by_method: Mapping[str, Sequence[str]],
    backends: Mapping[str, OracleBackend],
    datasets: Sequence[Dataset],
    template: RenderTemplate | None = None,
    config: ZeroShotConfig | None = None,
    include_no_prompt: bool = False,
) -> GeneralizationTable:
    """Table of per-method prompts evaluated zero-shot on every backend.

    Each method supplies one prompt per dataset; a cell is the mean accuracy
    over datasets.  A failing backend yields None cells plus a note instead
    of aborting the table.
    """
    if not datasets:
        raise EvalError("generalization table needs at least one dataset")
    methods = dict(prompts_by_method)
    if include_no_prompt:
        methods[NO_PROMPT_METHOD] = [""] * len(datasets)
    for name, prompts in methods.items():
        if len(prompts) != len(datasets):
            raise EvalError(
                f"method {name!r} supplies {len(prompts)} prompts for {len(datasets)} datasets"
            )
    table = GeneralizationTable(
        methods=list(methods),
        backend_names=list(backends),
        cells={m: {} for m in methods},
    )
    for backend_name, backend in backends.items():
        for method, prompts in methods.items():
            try:
                scores = [
                    zero_shot_accuracy(backend, prompt, dataset, template, config)
                    for prompt, dataset in zip(prompts, datasets)
                ]
                table.cells[method][backend_name] = math.fsum(scores) / len(scores)
            except OracleError as exc:
                table.cells[method][backend_name] = None
                note = f"backend {backend_name!r} unavailable for {method!r}: {exc}"
                table.notes.append(note)
                log.warning(note)
    return table


@dataclass(slots=True)
class DatasetReport:
    name: str
    ranked_candidates: list[tuple[str, float, int]]
    reciprocal_rank: float
    top_prompt_correct: bool

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "ranked_candidates": [list(t) for t in self.ranked_candidates],
            "reciprocal_rank": self.reciprocal_rank,
            "top_prompt_correct": self.top_prompt_correct,
        }


@dataclass(slots=True)
class EvalReport:
    """Aggregate evaluation artifact across one or more searched datasets."""

    per_dataset: list[DatasetReport]
    mrr: float
    top_prompt_correctness: float
    zero_shot_accuracy: dict[str, float | None]
    search_template: str
    eval_template: str
    generalization: GeneralizationTable | None = None
    matrix: SelectionMatrix | None = None

    def to_dict(self) -> dict:
        return {
            "per_dataset": [d.to_dict() for d in self.per_dataset],
            "mrr": self.mrr,
            "top_prompt_correctness": self.top_prompt_correctness,
            "zero_shot_accuracy": self.zero_shot_accuracy,
            "search_template": self.search_template,
            "eval_template": self.eval_template,
            "generalization": self.generalization.to_dict() if self.generalization else None,
            "matrix": self.matrix.to_dict() if self.matrix else None,
        }


def build_eval_report(
    datasets: Sequence[Dataset],
    rankings: Sequence[Sequence[tuple[str, float, int]]],
    backends: Mapping[str, OracleBackend],
    *,
    search_template: RenderTemplate | None = None,
    eval_template: RenderTemplate | None = None,
    config: ZeroShotConfig | None = None,
    include_no_prompt: bool = False,
    with_matrix: bool = False,
    matrix_backends: Sequence[OracleBackend] | None = None,
) -> EvalReport:
    """Combine rankings and backends into one report.

    ``rankings`` holds (text, mean loss, eval_count) triples per dataset,
    best first.  MRR and correctness need each dataset to carry a keyword
    rule.
    """
    if len(datasets) != len(rankings):
        raise EvalError(f"{len(datasets)} datasets but {len(rankings)} rankings")
    rules = []
    for dataset in datasets:
        if dataset.keyword_rule is None:
            raise EvalError(f"dataset {dataset.name!r} has no keyword rule for MRR")
        rules.append(dataset.keyword_rule)
    texts = [[t for t, _, _ in ranking] for ranking in rankings]
    per_dataset = [
        DatasetReport(
            name=dataset.name,
            ranked_candidates=list(ranking),
            reciprocal_rank=reciprocal_rank(names, rule),
            top_prompt_correct=bool(names) and check_keywords(rule, names[0]),
        )
        for dataset, ranking, names, rule in zip(datasets, rankings, texts, rules)
    ]
    top_prompts = [names[0] if names else "" for names in texts]
    table = generalization_eval(
        {"search": top_prompts},
        backends,
        datasets,
        template=eval_template,
        config=config,
        include_no_prompt=include_no_prompt,
    )
    matrix = None
    if with_matrix:
        matrix = selection_matrix(
            matrix_backends if matrix_backends is not None else next(iter(backends.values())),
            top_prompts,
            datasets,
            template=eval_template,
            config=config,
        )
    return EvalReport(
        per_dataset=per_dataset,
        mrr=mrr(texts, rules),
        top_prompt_correctness=top_prompt_correctness(texts, rules),
        zero_shot_accuracy={name: table.cells["search"][name] for name in table.backend_names},
        search_template=(search_template or RenderTemplate()).pattern,
        eval_template=(eval_template or RenderTemplate()).pattern,
        generalization=table,
        matrix=matrix,
    )
