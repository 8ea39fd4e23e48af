"""Backend contract for scoring and generation oracles.

A backend exposes a tokenizer, per-token scoring of an output span, a
next-token distribution, and sampling-based generation.  Deterministic
local oracles implement the full contract; remote backends may only
support a subset and advertise that through ``capabilities``.
"""

from __future__ import annotations

import logging
import math
import random
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

from ..errors import CapabilityError, ConfigError, GenerationError, OracleError

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class Capabilities:
    """What a backend can do beyond plain generation."""

    full_logits: bool = False
    sparse_logits: bool = False
    echo_scoring: bool = False
    vocabulary: bool = False


@dataclass(frozen=True, slots=True)
class GenerationParams:
    """Sampling controls shared by every backend.

    ``repetition_penalty`` follows the usual decoder convention: scores of
    already-seen tokens are divided by the penalty when positive and
    multiplied when negative.  ``greedy`` is the temperature-to-zero limit.
    """

    max_new_tokens: int
    temperature: float = 1.0
    repetition_penalty: float = 1.0
    stop_tokens: tuple[str, ...] = ()
    seed: int | None = None
    greedy: bool = False

    def __post_init__(self) -> None:
        if self.max_new_tokens < 0:
            raise ConfigError("max_new_tokens must be >= 0")
        if self.temperature <= 0 and not self.greedy:
            raise ConfigError("temperature must be positive (use greedy=True for the zero limit)")
        if self.repetition_penalty <= 0:
            raise ConfigError("repetition_penalty must be positive")


@dataclass(frozen=True)
class TokenLogits:
    """Next-token log-probabilities, dense or top-k sparse.

    Dense entries cover the whole vocabulary and their exponentials sum to
    one.  Sparse entries cover only the top k tokens; ``remainder`` is the
    total log-probability mass outside them (``None`` when dense).
    """

    entries: dict[str, float]
    dense: bool = True
    remainder: float | None = None

    def __post_init__(self) -> None:
        if not self.entries:
            raise OracleError("empty next-token distribution")
        if not self.dense and self.remainder is None:
            raise OracleError("sparse logits need a remainder mass")

    def argmax(self) -> str:
        # Ties resolve to the lexicographically smallest token so greedy
        # decoding is deterministic across dict orderings.
        best = max(sorted(self.entries), key=lambda t: self.entries[t])
        return best


class OracleBackend(ABC):
    """Scoring/generation oracle over whitespace-style surface tokens."""

    identity: str = "oracle"

    @property
    def capabilities(self) -> Capabilities:
        return Capabilities()

    @property
    def eos_token(self) -> str | None:
        """Sentinel emitted by the distribution to end a sequence."""
        return None

    @property
    def vocab_size(self) -> int | None:
        return None

    @abstractmethod
    def tokenize(self, text: str) -> list[str]: ...

    @abstractmethod
    def detokenize(self, tokens: list[str] | tuple[str, ...]) -> str: ...

    @abstractmethod
    def score_output_span(self, full_text: str, span: tuple[int, int]) -> list[float]:
        """Log-probability of each token in ``span`` given everything before it.

        ``span`` is a half-open token-index interval into ``tokenize(full_text)``.
        An empty span yields an empty list.
        """

    def next_token_logits(self, context: str) -> TokenLogits:
        raise CapabilityError(f"{self.identity} backend does not expose next-token logits")

    def vocab_tokens(self) -> list[str]:
        raise CapabilityError(f"{self.identity} backend does not expose its vocabulary")

    def penalty_key(self, token: str) -> str:
        """Identity used when applying the repetition penalty."""
        return token

    def generate(self, context: str, params: GenerationParams) -> list[str]:
        """Sample a continuation token-by-token from the next-token distribution.

        Returns surface tokens (stop/end tokens excluded).  Backends without
        logits must override this.
        """
        rng = random.Random(params.seed)
        seen = {self.penalty_key(t) for t in self.tokenize(context)}
        stops = {self.penalty_key(t) for t in params.stop_tokens}
        out: list[str] = []
        text = context
        for _ in range(params.max_new_tokens):
            logits = self.next_token_logits(text)
            token = self._draw(logits, seen, params, rng)
            if token is None:
                break
            if token == self.eos_token or self.penalty_key(token) in stops:
                break
            out.append(token)
            seen.add(self.penalty_key(token))
            text += token
        return out

    def _draw(
        self,
        logits: TokenLogits,
        seen: set[str],
        params: GenerationParams,
        rng: random.Random,
    ) -> str | None:
        adjusted: dict[str, float] = {}
        for token, score in logits.entries.items():
            if self.penalty_key(token) in seen:
                score = score / params.repetition_penalty if score > 0 else score * params.repetition_penalty
            adjusted[token] = score
        tokens = sorted(adjusted)
        if params.greedy:
            return max(tokens, key=lambda t: adjusted[t])
        scaled = [adjusted[t] / params.temperature for t in tokens]
        peak = max(scaled)
        if peak == -math.inf:
            raise GenerationError("all candidate tokens have zero probability")
        weights = [math.exp(s - peak) for s in scaled]
        total = math.fsum(weights)
        pick = rng.random() * total
        acc = 0.0
        for token, w in zip(tokens, weights):
            acc += w
            if pick <= acc:
                return token
        return tokens[-1]


def span_loss(logprobs: list[float]) -> float:
    """Candidate loss for one example: negative mean token log-probability."""
    if not logprobs:
        raise OracleError("empty output span: loss is undefined")
    return -math.fsum(logprobs) / len(logprobs)


def conditional_span_scores(
    backend: OracleBackend, full_text: str, span: tuple[int, int]
) -> list[float]:
    """Per-token span scores built from next-token queries instead of echo.

    Fallback for backends that cannot score a given text in one call: each
    span token is scored conditionally against the prefix before it, so the
    span total equals score(context+span) minus score(context).  Sparse
    backends raise ``CapabilityError`` when a span token falls outside the
    returned top-k.
    """
    tokens = backend.tokenize(full_text)
    start, end = span
    if not (0 <= start <= end <= len(tokens)):
        raise OracleError(f"span {span} out of range for {len(tokens)} tokens")
    scores: list[float] = []
    for i in range(start, end):
        prefix = "".join(tokens[:i])
        logits = backend.next_token_logits(prefix)
        lp = logits.entries.get(tokens[i])
        if lp is None:
            if logits.dense:
                raise OracleError(f"token {tokens[i]!r} missing from a dense distribution")
            raise CapabilityError(
                f"token {tokens[i]!r} not in the top-{len(logits.entries)} logits; "
                "cannot score conditionally"
            )
        scores.append(lp)
    return scores
