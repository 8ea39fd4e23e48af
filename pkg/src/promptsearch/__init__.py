"""Prompt search over scoring oracles: datasets, decoding, search loops, evaluation."""

__version__ = "0.1.0"

from .config import (
    ALGORITHMS,
    AVG_SUFFIX,
    BackendSpec,
    DatasetSpec,
    EvalSpec,
    RunConfig,
    build_backend,
    build_dataset,
    load_config,
    parse_config,
)
from .datasets import (
    Dataset,
    Example,
    KeywordRule,
    RenderTemplate,
    check_keywords,
    generate_math_dataset,
    keyword_rule_for,
    load_jsonl_dataset,
    render,
)
from .decoding import BeamParams, Hypothesis, averaged_suffix_decode, beam_search, greedy_decode
from .errors import (
    AveragingCoverageError,
    CapabilityError,
    ConfigError,
    DatasetError,
    EvalError,
    GenerationError,
    OracleError,
    PromptSearchError,
    RenderError,
    SearchError,
    SpanAlignmentError,
    TransportError,
)
from .evaluation import (
    EvalReport,
    GeneralizationTable,
    SelectionMatrix,
    ZeroShotConfig,
    build_eval_report,
    generalization_eval,
    mrr,
    reciprocal_rank,
    selection_matrix,
    top_prompt_correctness,
    zero_shot_accuracy,
)
from .oracles import NgramOracle, PlantedRuleOracle, oracle_for_task
from .oracles.base import OracleBackend
from .search import (
    COORD_SWAP,
    IPROMPT,
    ScoreLedger,
    SearchConfig,
    SearchResult,
    run_coordinate_swap,
    run_iprompt,
)
from .runner import (
    cmd_gen_data,
    evaluate_runs,
    replay_journal,
    resume_run,
    run_search,
)

__all__ = [
    "ALGORITHMS",
    "AVG_SUFFIX",
    "AveragingCoverageError",
    "BackendSpec",
    "BeamParams",
    "COORD_SWAP",
    "CapabilityError",
    "ConfigError",
    "Dataset",
    "DatasetError",
    "DatasetSpec",
    "EvalError",
    "EvalReport",
    "EvalSpec",
    "Example",
    "GeneralizationTable",
    "GenerationError",
    "Hypothesis",
    "IPROMPT",
    "KeywordRule",
    "NgramOracle",
    "OracleBackend",
    "OracleError",
    "PlantedRuleOracle",
    "PromptSearchError",
    "RenderError",
    "RenderTemplate",
    "RunConfig",
    "ScoreLedger",
    "SearchConfig",
    "SearchError",
    "SearchResult",
    "SelectionMatrix",
    "SpanAlignmentError",
    "TransportError",
    "ZeroShotConfig",
    "averaged_suffix_decode",
    "beam_search",
    "build_backend",
    "build_dataset",
    "build_eval_report",
    "check_keywords",
    "cmd_gen_data",
    "evaluate_runs",
    "generalization_eval",
    "generate_math_dataset",
    "greedy_decode",
    "keyword_rule_for",
    "load_config",
    "load_jsonl_dataset",
    "mrr",
    "oracle_for_task",
    "parse_config",
    "reciprocal_rank",
    "render",
    "replay_journal",
    "resume_run",
    "run_coordinate_swap",
    "run_iprompt",
    "run_search",
    "selection_matrix",
    "top_prompt_correctness",
    "zero_shot_accuracy",
    "__version__",
]
