"""Beam search and averaged-logit suffix decoding.

Beam slots hold live and finished hypotheses jointly.  Within a step,
candidates compete on cumulative raw log-probability (so width one reduces
exactly to greedy argmax decoding); the final ranking of finished
hypotheses applies the length normalization

    score = logprob / (((5 + length) / 6) ** alpha)

Ties break toward the hypothesis that finished at an earlier step, then
lexicographically by token sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import AveragingCoverageError, ConfigError, OracleError
from .oracles.base import OracleBackend, TokenLogits


@dataclass(frozen=True, slots=True)
class BeamParams:
    width: int = 4
    max_len: int = 16
    length_alpha: float = 0.6

    def __post_init__(self) -> None:
        if self.width < 1:
            raise ConfigError("beam width must be >= 1")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        if self.length_alpha < 0:
            raise ConfigError("length_alpha must be >= 0")


def length_normalizer(length: int, alpha: float) -> float:
    return ((5 + length) / 6) ** alpha


@dataclass(frozen=True, slots=True)
class Hypothesis:
    """One beam entry; ``eos_logprob`` is None until (unless) it ends on EOS."""

    tokens: tuple[str, ...]
    logprob: float
    token_logprobs: tuple[float, ...]
    eos_logprob: float | None = None
    finished_step: int | None = None

    @property
    def finished(self) -> bool:
        return self.finished_step is not None

    def normalized_score(self, alpha: float) -> float:
        return self.logprob / length_normalizer(len(self.tokens), alpha)

    def text(self, backend: OracleBackend) -> str:
        return backend.detokenize(self.tokens)


def _rank_key(hyp: Hypothesis, alpha: float) -> tuple:
    step = hyp.finished_step if hyp.finished_step is not None else math.inf
    return (-hyp.normalized_score(alpha), step, hyp.tokens)


def _slot_key(hyp: Hypothesis) -> tuple:
    step = hyp.finished_step if hyp.finished_step is not None else math.inf
    return (-hyp.logprob, step, hyp.tokens)


def beam_search(
    backend: OracleBackend,
    context: str,
    params: BeamParams,
    stop_tokens: tuple[str, ...] = (),
    step_callback=None,
) -> list[Hypothesis]:
    """Return finished hypotheses, best first under the normalized score.

    Stop tokens behave like the end symbol: they finish a hypothesis, their
    log-probability counts toward its score, and they are not emitted.
    """
    vocab = backend.vocab_size
    if vocab is not None and params.width > vocab:
        raise OracleError(f"beam width {params.width} exceeds vocabulary size {vocab}")
    beam: list[Hypothesis] = [Hypothesis(tokens=(), logprob=0.0, token_logprobs=())]
    for step in range(1, params.max_len + 1):
        candidates: list[Hypothesis] = []
        any_live = False
        for hyp in beam:
            if hyp.finished:
                candidates.append(hyp)
                continue
            any_live = True
            logits = backend.next_token_logits(context + backend.detokenize(hyp.tokens))
            for token in sorted(logits.entries):
                lp = logits.entries[token]
                if token == backend.eos_token or token in stop_tokens:
                    # Terminators score like any other token but stay out of
                    # the emitted sequence.
                    candidates.append(
                        Hypothesis(
                            tokens=hyp.tokens,
                            logprob=hyp.logprob + lp,
                            token_logprobs=hyp.token_logprobs,
                            eos_logprob=lp,
                            finished_step=step,
                        )
                    )
                else:
                    candidates.append(
                        Hypothesis(
                            tokens=hyp.tokens + (token,),
                            logprob=hyp.logprob + lp,
                            token_logprobs=hyp.token_logprobs + (lp,),
                        )
                    )
        if not any_live:
            break
        candidates.sort(key=_slot_key)
        beam = candidates[: params.width]
        if step_callback is not None:
            step_callback(step, beam)
    finished = [
        hyp
        if hyp.finished
        else Hypothesis(
            tokens=hyp.tokens,
            logprob=hyp.logprob,
            token_logprobs=hyp.token_logprobs,
            finished_step=params.max_len,
        )
        for hyp in beam
    ]
    finished.sort(key=lambda h: _rank_key(h, params.length_alpha))
    return finished


def greedy_decode(
    backend: OracleBackend,
    context: str,
    max_len: int,
    stop_tokens: tuple[str, ...] = (),
) -> Hypothesis:
    """Argmax chain; definitionally what a width-one beam must reproduce."""
    tokens: tuple[str, ...] = ()
    logprobs: tuple[float, ...] = ()
    total = 0.0
    for step in range(1, max_len + 1):
        logits = backend.next_token_logits(context + backend.detokenize(tokens))
        # Tie rule matches beam slot ordering: prefer finishing, then the
        # lexicographically smallest token.
        terminators = set(stop_tokens)
        if backend.eos_token is not None:
            terminators.add(backend.eos_token)
        token = min(
            logits.entries,
            key=lambda t: (-logits.entries[t], t not in terminators, t),
        )
        lp = logits.entries[token]
        if token in terminators:
            return Hypothesis(tokens, total + lp, logprobs, eos_logprob=lp, finished_step=step)
        tokens += (token,)
        logprobs += (lp,)
        total += lp
    return Hypothesis(tokens, total, logprobs, finished_step=max_len)


def average_next_token_logits(backend: OracleBackend, contexts: list[str]) -> TokenLogits:
    """Arithmetic mean of per-context logits, renormalized when dense.

    Sparse inputs are averaged over the intersection of their supports;
    an empty intersection raises ``AveragingCoverageError``.
    """
    if not contexts:
        raise OracleError("cannot average over zero contexts")
    per_context = [backend.next_token_logits(c) for c in contexts]
    n = len(per_context)
    if all(tl.dense for tl in per_context):
        keys = set(per_context[0].entries)
        for tl in per_context[1:]:
            if set(tl.entries) != keys:
                raise OracleError("dense backends must agree on the vocabulary")
        averaged = {k: math.fsum(tl.entries[k] for tl in per_context) / n for k in keys}
        lse = _logsumexp(list(averaged.values()))
        return TokenLogits(entries={k: v - lse for k, v in averaged.items()}, dense=True)
    common = set(per_context[0].entries)
    for tl in per_context[1:]:
        common &= set(tl.entries)
    if not common:
        raise AveragingCoverageError(
            "top-k supports are disjoint across contexts; nothing to average"
        )
    averaged = {k: math.fsum(tl.entries[k] for tl in per_context) / n for k in sorted(common)}
    covered = _logsumexp(list(averaged.values()))
    remainder = math.log1p(-math.exp(covered)) if covered < 0 else -math.inf
    return TokenLogits(entries=averaged, dense=False, remainder=remainder)


def _logsumexp(values: list[float]) -> float:
    peak = max(values)
    if peak == -math.inf:
        return -math.inf
    return peak + math.log(math.fsum(math.exp(v - peak) for v in values))


class _AveragedView(OracleBackend):
    """Backend view whose distribution is the average over fixed base contexts."""

    def __init__(self, backend: OracleBackend, contexts: list[str]) -> None:
        self.identity = f"avg({backend.identity})"
        self._backend = backend
        self._contexts = contexts

    @property
    def capabilities(self):
        return self._backend.capabilities

    @property
    def eos_token(self) -> str | None:
        return self._backend.eos_token

    @property
    def vocab_size(self) -> int | None:
        return self._backend.vocab_size

    def tokenize(self, text: str) -> list[str]:
        return self._backend.tokenize(text)

    def detokenize(self, tokens: list[str] | tuple[str, ...]) -> str:
        return self._backend.detokenize(tokens)

    def score_output_span(self, full_text: str, span: tuple[int, int]) -> list[float]:
        raise OracleError("averaged view does not score spans")

    def next_token_logits(self, context: str) -> TokenLogits:
        return average_next_token_logits(self._backend, [c + context for c in self._contexts])


def averaged_suffix_decode(
    backend: OracleBackend,
    contexts: list[str],
    params: BeamParams,
    stop_tokens: tuple[str, ...] = (),
    step_callback=None,
) -> list[Hypothesis]:
    """Beam-decode a shared continuation for every context at once.

    Each step queries the backend once per (context, beam entry) pair and
    averages the resulting logits before extending the beam.
    """
    view = _AveragedView(backend, contexts)
    return beam_search(view, "", params, stop_tokens=stop_tokens, step_callback=step_callback)
