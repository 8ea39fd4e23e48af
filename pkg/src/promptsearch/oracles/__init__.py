"""Scoring/generation backends: deterministic local oracles and an HTTP client."""

from .base import Capabilities, GenerationParams, OracleBackend, TokenLogits, span_loss
from .ngram import BOS, EOS, NgramOracle
from .planted import (
    DISTRACTOR_PHRASES,
    MATCH_LOGPROB,
    MISS_LOGPROB,
    TASK_PHRASES,
    PlantedRuleOracle,
    oracle_for_task,
)
from .tokens import WhitespaceTokenizer

__all__ = [
    "BOS",
    "Capabilities",
    "DISTRACTOR_PHRASES",
    "EOS",
    "GenerationParams",
    "MATCH_LOGPROB",
    "MISS_LOGPROB",
    "NgramOracle",
    "OracleBackend",
    "PlantedRuleOracle",
    "TASK_PHRASES",
    "TokenLogits",
    "WhitespaceTokenizer",
    "oracle_for_task",
    "span_loss",
]
