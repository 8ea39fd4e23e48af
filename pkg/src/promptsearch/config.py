"""Run configuration: one strict JSON document.

Unknown fields are rejected everywhere so typos fail fast, before any
backend call.  File references are checked at parse time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields as dc_fields, replace
from pathlib import Path
from typing import Any

from .datasets import (
    Dataset,
    KeywordRule,
    MATH_TASKS,
    generate_math_dataset,
    keyword_rule_for,
    load_jsonl_dataset,
)
from .decoding import BeamParams
from .errors import ConfigError
from .evaluation import ZeroShotConfig
from .oracles import NgramOracle, oracle_for_task
from .oracles.base import OracleBackend
from .oracles.http import HttpBackendConfig, HttpOracleBackend
from .search import COORD_SWAP, IPROMPT, SearchConfig

AVG_SUFFIX = "avg_suffix"
ALGORITHMS = (IPROMPT, COORD_SWAP, AVG_SUFFIX)

DEFAULT_SUFFIX_TEMPLATE = "To compute the output from the input,"


def _require_mapping(value: Any, where: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a JSON object, got {type(value).__name__}")
    return value


def _reject_unknown(data: dict, allowed: set[str], where: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {', '.join(sorted(unknown))}")


def _build(cls, data: dict, where: str):
    """Construct a config dataclass from a dict, rejecting unknown keys."""
    names = {f.name for f in dc_fields(cls)}
    _reject_unknown(data, names, where)
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


@dataclass(frozen=True, slots=True)
class DatasetSpec:
    task: str | None = None
    seed: int = 0
    path: str | None = None
    verbalizer: dict[str, str] | None = None
    keywords: list[str] | None = None

    def __post_init__(self) -> None:
        if (self.task is None) == (self.path is None):
            raise ConfigError("dataset spec needs exactly one of 'task' or 'path'")
        if self.task is not None and self.task not in MATH_TASKS:
            raise ConfigError(
                f"unknown task {self.task!r}; valid tasks: {', '.join(sorted(MATH_TASKS))}"
            )


@dataclass(frozen=True, slots=True)
class BackendSpec:
    kind: str = "planted"
    # planted
    task: str | None = None
    # ngram
    corpus: str | None = None
    order: int = 2
    # http
    base_url: str | None = None
    model: str | None = None
    auth_env: str | None = None
    top_logprobs: int = 5
    timeout_s: float = 30.0
    max_attempts: int = 3
    backoff_s: float = 0.5
    send_seed: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("planted", "ngram", "http"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.kind == "ngram" and self.corpus is None:
            raise ConfigError("ngram backend needs a 'corpus' file path")
        if self.kind == "http" and (self.base_url is None or self.model is None):
            raise ConfigError("http backend needs 'base_url' and 'model'")


@dataclass(frozen=True, slots=True)
class EvalSpec:
    beam_width: int = 4
    length_alpha: float = 0.6
    max_new_tokens: int = 16
    case_sensitive: bool = True
    matrix: bool = False

    def zero_shot(self) -> ZeroShotConfig:
        return ZeroShotConfig(
            beam_width=self.beam_width,
            length_alpha=self.length_alpha,
            max_new_tokens=self.max_new_tokens,
            case_sensitive=self.case_sensitive,
        )


@dataclass(frozen=True, slots=True)
class RunConfig:
    dataset: DatasetSpec
    backend: BackendSpec = field(default_factory=BackendSpec)
    algorithm: str = IPROMPT
    search: SearchConfig = field(default_factory=SearchConfig)
    beam: BeamParams = field(default_factory=BeamParams)
    eval: EvalSpec = field(default_factory=EvalSpec)
    suffix_template: str = DEFAULT_SUFFIX_TEMPLATE
    seed: int = 0
    out: str | None = None

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(
                f"unknown algorithm {self.algorithm!r}; choose one of {', '.join(ALGORITHMS)}"
            )


_TOP_FIELDS = {
    "dataset", "backend", "algorithm", "search", "beam", "eval",
    "suffix_template", "seed", "out",
}


def parse_config(data: dict, base_dir: Path | None = None) -> RunConfig:
    data = dict(_require_mapping(data, "config"))
    _reject_unknown(data, _TOP_FIELDS, "config")
    if "dataset" not in data:
        raise ConfigError("config is missing the 'dataset' section")
    dataset = _build(DatasetSpec, _require_mapping(data["dataset"], "dataset"), "dataset")
    backend = _build(
        BackendSpec, _require_mapping(data.get("backend", {}), "backend"), "backend"
    )
    search = _build(SearchConfig, _require_mapping(data.get("search", {}), "search"), "search")
    beam = _build(BeamParams, _require_mapping(data.get("beam", {}), "beam"), "beam")
    eval_spec = _build(EvalSpec, _require_mapping(data.get("eval", {}), "eval"), "eval")
    config = RunConfig(
        dataset=dataset,
        backend=backend,
        algorithm=data.get("algorithm", IPROMPT),
        search=search,
        beam=beam,
        eval=eval_spec,
        suffix_template=data.get("suffix_template", DEFAULT_SUFFIX_TEMPLATE),
        seed=_require_int(data.get("seed", 0), "seed"),
        out=data.get("out"),
    )
    _check_files(config, base_dir or Path.cwd())
    return _absolutize(config, base_dir or Path.cwd())


def _absolutize(config: RunConfig, base_dir: Path) -> RunConfig:
    """Pin file references to absolute paths so runs survive cwd changes."""
    dataset = config.dataset
    if dataset.path is not None:
        dataset = replace(dataset, path=str(_resolve(dataset.path, base_dir)))
    backend = config.backend
    if backend.corpus is not None:
        backend = replace(backend, corpus=str(_resolve(backend.corpus, base_dir)))
    if dataset is config.dataset and backend is config.backend:
        return config
    return replace(config, dataset=dataset, backend=backend)


def _require_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where} must be an integer")
    return value


def _resolve(path: str, base_dir: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base_dir / p


def _check_files(config: RunConfig, base_dir: Path) -> None:
    if config.dataset.path is not None and not _resolve(config.dataset.path, base_dir).exists():
        raise ConfigError(f"dataset file not found: {config.dataset.path}")
    if config.backend.corpus is not None and not _resolve(config.backend.corpus, base_dir).exists():
        raise ConfigError(f"corpus file not found: {config.backend.corpus}")


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(data, base_dir=path.resolve().parent)


def config_to_dict(config: RunConfig) -> dict:
    """Round-trippable plain-dict form (what run directories persist)."""

    def dataclass_dict(obj) -> dict:
        return {f.name: getattr(obj, f.name) for f in dc_fields(obj)}

    return {
        "dataset": dataclass_dict(config.dataset),
        "backend": dataclass_dict(config.backend),
        "algorithm": config.algorithm,
        "search": dataclass_dict(config.search),
        "beam": dataclass_dict(config.beam),
        "eval": dataclass_dict(config.eval),
        "suffix_template": config.suffix_template,
        "seed": config.seed,
        "out": config.out,
    }


def build_dataset(spec: DatasetSpec, base_dir: Path | None = None) -> Dataset:
    if spec.task is not None:
        dataset = generate_math_dataset(spec.task, seed=spec.seed)
    else:
        assert spec.path is not None
        rule = KeywordRule(keywords=tuple(spec.keywords)) if spec.keywords else None
        dataset = load_jsonl_dataset(
            _resolve(spec.path, base_dir or Path.cwd()),
            verbalizer=spec.verbalizer,
            keyword_rule=rule,
        )
    if spec.keywords:
        dataset = Dataset(
            name=dataset.name,
            examples=dataset.examples,
            keyword_rule=KeywordRule(keywords=tuple(spec.keywords)),
            ground_truth_description=dataset.ground_truth_description,
            verbalizer=dataset.verbalizer,
        )
    return dataset


def build_backend(
    spec: BackendSpec, dataset: Dataset, base_dir: Path | None = None
) -> OracleBackend:
    if spec.kind == "planted":
        task = spec.task or dataset.name
        return oracle_for_task(task, dataset)
    if spec.kind == "ngram":
        assert spec.corpus is not None
        return NgramOracle.from_file(_resolve(spec.corpus, base_dir or Path.cwd()), order=spec.order)
    assert spec.kind == "http" and spec.base_url is not None and spec.model is not None
    return HttpOracleBackend(
        HttpBackendConfig(
            base_url=spec.base_url,
            model=spec.model,
            auth_env=spec.auth_env,
            top_logprobs=spec.top_logprobs,
            timeout_s=spec.timeout_s,
            max_attempts=spec.max_attempts,
            backoff_s=spec.backoff_s,
            send_seed=spec.send_seed,
        )
    )
