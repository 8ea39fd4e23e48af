"""Iterative prompt search over a scoring oracle.

Two loops share the same ledger, trace, and stopping rule:

* ``run_iprompt`` ("iprompt"): propose candidates by sampling the
  backend, rerank them on random data batches, and explore by truncating
  the best candidates and regenerating their tails.
* ``run_coordinate_swap`` ("coord_swap"): hold a fixed-length word list and
  repeatedly try uniform single-position substitutions, keeping a swap only
  when it strictly beats the incumbent on the same batch.

Candidate losses are negative mean token log-probabilities of the rendered
output span, averaged over the batch.  The ledger stores every batch loss
and computes running means with exact summation, so the mean of a
candidate does not depend on the order its losses arrived in.
"""

from __future__ import annotations

import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol, Sequence

from .datasets import Dataset, RenderTemplate, render
from .errors import ConfigError, SearchError
from .oracles.base import GenerationParams, OracleBackend, span_loss
from .oracles import tokens as tok

log = logging.getLogger(__name__)

IPROMPT = "iprompt"
COORD_SWAP = "coord_swap"


@dataclass(frozen=True, slots=True)
class SearchConfig:
    """Knobs shared by both search loops; defaults follow the usual setup."""

    prompt_length_budget: int = 6
    population_top_k: int = 8
    mutations_per_parent: int = 4
    fresh_per_step: int = 4
    max_steps: int = 5000
    patience_steps: int = 100
    batch_size: int | None = None  # None: min(32, dataset size)
    min_evals: int = 3
    temperature: float = 1.0
    repetition_penalty: float = 2.0
    prompt_marker: str = "\nPrompt:"
    prefix_examples: int = 1
    swap_candidates: int = 32
    swap_init: str = "the"  # "the" or "random"
    parallelism: int = 1

    def __post_init__(self) -> None:
        positive = {
            "prompt_length_budget": self.prompt_length_budget,
            "population_top_k": self.population_top_k,
            "mutations_per_parent": self.mutations_per_parent,
            "max_steps": self.max_steps,
            "patience_steps": self.patience_steps,
            "min_evals": self.min_evals,
            "prefix_examples": self.prefix_examples,
            "swap_candidates": self.swap_candidates,
            "parallelism": self.parallelism,
        }
        for name, value in positive.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if self.fresh_per_step < 0:
            raise ConfigError("fresh_per_step must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1 when given")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.repetition_penalty <= 0:
            raise ConfigError("repetition_penalty must be positive")
        if self.swap_init not in ("the", "random"):
            raise ConfigError("swap_init must be 'the' or 'random'")

    def effective_batch_size(self, dataset_size: int) -> int:
        limit = self.batch_size if self.batch_size is not None else 32
        return min(limit, dataset_size)


@dataclass(frozen=True, slots=True)
class PromptCandidate:
    text: str
    tokens: tuple[str, ...]
    first_word: str
    origin: str
    created_step: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tokens"] = list(self.tokens)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PromptCandidate":
        return cls(
            text=d["text"],
            tokens=tuple(d["tokens"]),
            first_word=d["first_word"],
            origin=d["origin"],
            created_step=d["created_step"],
        )


def make_candidate(
    backend: OracleBackend, raw_tokens: Sequence[str], origin: str, step: int, budget: int
) -> PromptCandidate | None:
    """Canonicalize raw surface tokens into a candidate; None when empty."""
    text = tok.detokenize(raw_tokens).strip()
    if not text:
        return None
    tokens = tuple(backend.tokenize(text)[:budget])
    text = tok.detokenize(tokens)
    return PromptCandidate(
        text=text,
        tokens=tokens,
        first_word=tok.word(tokens[0]) or tokens[0],
        origin=origin,
        created_step=step,
    )


class LedgerEntry:
    __slots__ = ("candidate", "losses", "last_step")

    def __init__(self, candidate: PromptCandidate) -> None:
        self.candidate = candidate
        self.losses: list[float] = []
        self.last_step = candidate.created_step

    @property
    def eval_count(self) -> int:
        return len(self.losses)

    @property
    def running_mean(self) -> float:
        # fsum computes the correctly rounded sum, so the mean is identical
        # under any permutation of the recorded losses.
        return math.fsum(self.losses) / len(self.losses)


class ScoreLedger:
    """Per-candidate loss history keyed by exact prompt text."""

    def __init__(self) -> None:
        self._entries: dict[str, LedgerEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, text: str) -> bool:
        return text in self._entries

    def add(self, candidate: PromptCandidate, loss: float, step: int) -> LedgerEntry:
        entry = self._entries.get(candidate.text)
        if entry is None:
            entry = LedgerEntry(candidate)
            self._entries[candidate.text] = entry
        entry.losses.append(loss)
        entry.last_step = step
        return entry

    def entry(self, text: str) -> LedgerEntry:
        return self._entries[text]

    def entries(self) -> list[LedgerEntry]:
        return list(self._entries.values())

    def best_running_mean(self) -> float | None:
        means = [e.running_mean for e in self._entries.values() if e.losses]
        return min(means) if means else None

    def ranking(self, min_evals: int = 1) -> list[LedgerEntry]:
        pool = [e for e in self._entries.values() if e.eval_count >= min_evals]
        return sorted(
            pool,
            key=lambda e: (e.running_mean, e.candidate.created_step, e.candidate.text),
        )

    def snapshot(self) -> dict:
        return {
            text: {
                "candidate": entry.candidate.to_dict(),
                "losses": list(entry.losses),
                "last_step": entry.last_step,
            }
            for text, entry in self._entries.items()
        }

    @classmethod
    def restore(cls, payload: dict) -> "ScoreLedger":
        ledger = cls()
        for text, data in payload.items():
            entry = LedgerEntry(PromptCandidate.from_dict(data["candidate"]))
            entry.losses = [float(x) for x in data["losses"]]
            entry.last_step = int(data["last_step"])
            ledger._entries[text] = entry
        return ledger


@dataclass(frozen=True, slots=True)
class StepRecord:
    """One journal row: a candidate evaluated on one step's batch."""

    step: int
    text: str
    origin: str
    batch_loss: float
    running_mean: float
    eval_count: int
    accepted: bool


@dataclass(frozen=True, slots=True)
class TraceRow:
    step: int
    best_running_mean: float
    current_batch_loss: float


@dataclass(frozen=True, slots=True)
class RankedPrompt:
    text: str
    mean_loss: float
    eval_count: int
    origin: str


@dataclass(slots=True)
class SearchResult:
    algorithm: str
    ranking: list[RankedPrompt]
    trace: list[TraceRow]
    steps_executed: int
    stopped_early: bool
    warnings: list[str] = field(default_factory=list)


class SearchObserver(Protocol):
    """Sink for per-step journal rows, trace rows, and resume state."""

    def on_step(
        self, step: int, records: list[StepRecord], trace: TraceRow, state: dict
    ) -> None: ...


def step_rng(seed: int, step: int | str) -> random.Random:
    """Random stream for one step, derived statelessly from the run seed.

    String seeding hashes the text, so the stream depends only on
    (seed, step) and resumed runs replay the exact same draws.
    """
    return random.Random(f"{seed}/{step}")


class _Evaluator:
    """Renders and scores candidates; caches renders per (prompt, example)."""

    def __init__(
        self,
        backend: OracleBackend,
        dataset: Dataset,
        template: RenderTemplate,
        parallelism: int = 1,
    ) -> None:
        self.backend = backend
        self.dataset = dataset
        self.template = template
        self.parallelism = parallelism
        self.truncated_examples: set[int] = set()
        self._renders: dict[tuple[str, int], object] = {}

    def _rendered(self, prompt: str, idx: int):
        key = (prompt, idx)
        hit = self._renders.get(key)
        if hit is None:
            hit = render(self.template, prompt, self.dataset.examples[idx], self.backend)
            if hit.truncated:
                self.truncated_examples.add(idx)
            self._renders[key] = hit
        return hit

    def batch_loss(self, prompt: str, batch: Sequence[int]) -> float:
        losses = []
        for idx in batch:
            r = self._rendered(prompt, idx)
            losses.append(span_loss(self.backend.score_output_span(r.full_text, r.token_span)))
        return math.fsum(losses) / len(losses)

    def batch_losses(self, prompts: Sequence[str], batch: Sequence[int]) -> list[float]:
        if self.parallelism > 1 and len(prompts) > 1:
            with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
                return list(pool.map(lambda p: self.batch_loss(p, batch), prompts))
        return [self.batch_loss(p, batch) for p in prompts]


def _example_context(evaluator: _Evaluator, rng: random.Random, config: SearchConfig) -> str:
    """Concatenated random examples followed by the prompt marker."""
    plain = RenderTemplate(
        pattern="{input}{output}", max_example_tokens=evaluator.template.max_example_tokens
    )
    parts = []
    for _ in range(config.prefix_examples):
        idx = rng.randrange(len(evaluator.dataset.examples))
        parts.append(render(plain, "", evaluator.dataset.examples[idx], evaluator.backend).full_text)
    return "".join(parts) + config.prompt_marker


def _generate_candidate(
    evaluator: _Evaluator,
    rng: random.Random,
    config: SearchConfig,
    step: int,
    origin: str,
    prefix_tokens: tuple[str, ...] = (),
) -> PromptCandidate | None:
    """Sample one candidate, optionally continuing a truncated parent prefix."""
    backend = evaluator.backend
    budget = config.prompt_length_budget
    room = max(1, budget - len(prefix_tokens))
    for attempt in range(2):
        context = _example_context(evaluator, rng, config)
        if prefix_tokens:
            context += " " + tok.detokenize(prefix_tokens)
        params = GenerationParams(
            max_new_tokens=room,
            temperature=config.temperature,
            repetition_penalty=config.repetition_penalty,
            seed=rng.getrandbits(63),
        )
        generated = backend.generate(context, params)
        candidate = make_candidate(
            backend, tuple(prefix_tokens) + tuple(generated), origin, step, budget
        )
        if candidate is not None:
            return candidate
    log.warning("empty generation twice in a row at step %d; candidate skipped", step)
    return None


def _propose_fresh(
    evaluator: _Evaluator, rng: random.Random, config: SearchConfig, step: int, count: int
) -> list[PromptCandidate]:
    if count < 1:
        raise ConfigError("fresh proposal count must be >= 1")
    out = []
    for _ in range(count):
        candidate = _generate_candidate(evaluator, rng, config, step, origin="fresh")
        if candidate is not None:
            out.append(candidate)
    return out


def _mutate_parents(
    evaluator: _Evaluator,
    parents: Sequence[PromptCandidate],
    rng: random.Random,
    config: SearchConfig,
    step: int,
) -> list[PromptCandidate]:
    """Truncate each parent at a uniform point and regenerate the tail."""
    out = []
    for parent in parents:
        if len(parent.tokens) > 1:
            cut = rng.randint(1, len(parent.tokens) - 1)
        else:
            cut = len(parent.tokens)
        prefix = parent.tokens[:cut]
        for _ in range(config.mutations_per_parent):
            candidate = _generate_candidate(
                evaluator, rng, config, step, origin="mutation", prefix_tokens=prefix
            )
            if candidate is not None:
                out.append(candidate)
    return out


def _select_parents(ledger: ScoreLedger, config: SearchConfig) -> list[PromptCandidate]:
    """Best-scoring candidates from the whole ledger, distinct first words."""
    parents: list[PromptCandidate] = []
    seen_first: set[str] = set()
    for entry in ledger.ranking(min_evals=1):
        if entry.candidate.first_word in seen_first:
            continue
        parents.append(entry.candidate)
        seen_first.add(entry.candidate.first_word)
        if len(parents) == config.population_top_k:
            break
    return parents


def _dedupe(candidates: Sequence[PromptCandidate]) -> list[PromptCandidate]:
    seen: set[str] = set()
    out = []
    for c in candidates:
        if c.text in seen:
            continue
        seen.add(c.text)
        out.append(c)
    return out


def _final_result(
    algorithm: str,
    ledger: ScoreLedger,
    trace: list[TraceRow],
    steps: int,
    stopped_early: bool,
    config: SearchConfig,
    evaluator: "_Evaluator | None" = None,
) -> SearchResult:
    warnings: list[str] = []
    if evaluator is not None and evaluator.truncated_examples:
        warnings.append(
            f"{len(evaluator.truncated_examples)} example(s) truncated to the token budget"
        )
    ranked = ledger.ranking(min_evals=config.min_evals)
    if not ranked:
        warnings.append(
            f"no candidate reached {config.min_evals} evaluations; ranking over all candidates"
        )
        log.warning(warnings[-1])
        ranked = ledger.ranking(min_evals=1)
    ranking = [
        RankedPrompt(
            text=e.candidate.text,
            mean_loss=e.running_mean,
            eval_count=e.eval_count,
            origin=e.candidate.origin,
        )
        for e in ranked
    ]
    return SearchResult(
        algorithm=algorithm,
        ranking=ranking,
        trace=trace,
        steps_executed=steps,
        stopped_early=stopped_early,
        warnings=warnings,
    )


def run_iprompt(
    backend: OracleBackend,
    dataset: Dataset,
    config: SearchConfig | None = None,
    *,
    template: RenderTemplate | None = None,
    seed: int = 0,
    observer: SearchObserver | None = None,
    state: dict | None = None,
) -> SearchResult:
    """Propose, rerank, and explore prompt candidates until the best mean plateaus."""
    config = config or SearchConfig()
    template = template or RenderTemplate()
    evaluator = _Evaluator(backend, dataset, template, config.parallelism)
    batch_size = config.effective_batch_size(len(dataset.examples))

    if state is not None:
        ledger = ScoreLedger.restore(state["ledger"])
        parents = [PromptCandidate.from_dict(d) for d in state["parents"]]
        best_mean = state["best_mean"]
        last_improvement = state["last_improvement"]
        trace = [TraceRow(**row) for row in state["trace"]]
        evaluator.truncated_examples = set(state.get("truncated", []))
        start = state["step"] + 1
    else:
        ledger = ScoreLedger()
        parents = []
        best_mean = math.inf
        last_improvement = 0
        trace = []
        start = 1

    # A checkpoint taken on the stopping step resumes to an immediate stop.
    if start > 1 and (start - 1) - last_improvement >= config.patience_steps:
        return _final_result(IPROMPT, ledger, trace, start - 1, True, config, evaluator)

    stopped_early = False
    step = start - 1
    for step in range(start, config.max_steps + 1):
        rng = step_rng(seed, step)
        if not parents:
            count = config.population_top_k * config.mutations_per_parent + config.fresh_per_step
            candidates = _propose_fresh(evaluator, rng, config, step, count)
        else:
            candidates = _mutate_parents(evaluator, parents, rng, config, step)
            if config.fresh_per_step:
                candidates += _propose_fresh(evaluator, rng, config, step, config.fresh_per_step)
        candidates = _dedupe(candidates)
        if not candidates:
            raise SearchError(f"no candidates could be generated at step {step}")
        batch = rng.sample(range(len(dataset.examples)), batch_size)

        losses = evaluator.batch_losses([c.text for c in candidates], batch)
        for candidate, loss in zip(candidates, losses):
            ledger.add(candidate, loss, step)
        parents = _select_parents(ledger, config)
        parent_texts = {p.text for p in parents}

        records = [
            StepRecord(
                step=step,
                text=c.text,
                origin=c.origin,
                batch_loss=loss,
                running_mean=ledger.entry(c.text).running_mean,
                eval_count=ledger.entry(c.text).eval_count,
                accepted=c.text in parent_texts,
            )
            for c, loss in zip(candidates, losses)
        ]
        current = ledger.best_running_mean()
        assert current is not None
        row = TraceRow(step=step, best_running_mean=current, current_batch_loss=min(losses))
        trace.append(row)

        if current < best_mean:
            best_mean = current
            last_improvement = step
        if observer is not None:
            observer.on_step(step, records, row, _population_state(
                step, seed, ledger, parents, best_mean, last_improvement, trace, evaluator
            ))
        if step - last_improvement >= config.patience_steps:
            stopped_early = True
            break

    return _final_result(IPROMPT, ledger, trace, step, stopped_early, config, evaluator)


def _population_state(
    step: int,
    seed: int,
    ledger: ScoreLedger,
    parents: list[PromptCandidate],
    best_mean: float,
    last_improvement: int,
    trace: list[TraceRow],
    evaluator: _Evaluator,
) -> dict:
    return {
        "algorithm": IPROMPT,
        "step": step,
        "seed": seed,
        "ledger": ledger.snapshot(),
        "parents": [p.to_dict() for p in parents],
        "best_mean": best_mean,
        "last_improvement": last_improvement,
        "trace": [asdict(t) for t in trace],
        "truncated": sorted(evaluator.truncated_examples),
    }


def run_coordinate_swap(
    backend: OracleBackend,
    dataset: Dataset,
    config: SearchConfig | None = None,
    *,
    template: RenderTemplate | None = None,
    seed: int = 0,
    observer: SearchObserver | None = None,
    state: dict | None = None,
) -> SearchResult:
    """Score-guided single-position word substitution over a fixed-length prompt."""
    config = config or SearchConfig()
    template = template or RenderTemplate()
    vocab = backend.vocab_tokens()  # CapabilityError when unsupported
    if not vocab:
        raise SearchError("backend vocabulary is empty")
    evaluator = _Evaluator(backend, dataset, template, config.parallelism)
    batch_size = config.effective_batch_size(len(dataset.examples))
    length = config.prompt_length_budget

    if state is not None:
        ledger = ScoreLedger.restore(state["ledger"])
        incumbent_words = list(state["incumbent_words"])
        best_mean = state["best_mean"]
        last_improvement = state["last_improvement"]
        trace = [TraceRow(**row) for row in state["trace"]]
        evaluator.truncated_examples = set(state.get("truncated", []))
        start = state["step"] + 1
    else:
        ledger = ScoreLedger()
        init_rng = step_rng(seed, "init")
        if config.swap_init == "random":
            incumbent_words = [init_rng.choice(vocab) for _ in range(length)]
        else:
            incumbent_words = ["the"] * length
        best_mean = math.inf
        last_improvement = 0
        trace = []
        start = 1

    if start > 1 and (start - 1) - last_improvement >= config.patience_steps:
        return _final_result(COORD_SWAP, ledger, trace, start - 1, True, config, evaluator)

    stopped_early = False
    step = start - 1
    for step in range(start, config.max_steps + 1):
        rng = step_rng(seed, step)
        batch = rng.sample(range(len(dataset.examples)), batch_size)
        position = rng.randrange(length)
        incumbent = make_candidate(backend, _spaced(incumbent_words), "incumbent", step, length)
        assert incumbent is not None
        proposals: list[PromptCandidate] = []
        proposal_words: list[list[str]] = []
        seen = {incumbent.text}
        for _ in range(config.swap_candidates):
            replacement = rng.choice(vocab)
            words = list(incumbent_words)
            words[position] = replacement
            candidate = make_candidate(backend, _spaced(words), "swap", step, length)
            if candidate is None or candidate.text in seen:
                continue
            seen.add(candidate.text)
            proposals.append(candidate)
            proposal_words.append(words)

        texts = [incumbent.text] + [p.text for p in proposals]
        losses = evaluator.batch_losses(texts, batch)
        incumbent_loss = losses[0]
        ledger.add(incumbent, incumbent_loss, step)
        for candidate, loss in zip(proposals, losses[1:]):
            ledger.add(candidate, loss, step)

        accepted_text = None
        if proposals:
            best_i = min(range(len(proposals)), key=lambda i: losses[1 + i])
            if losses[1 + best_i] < incumbent_loss:
                incumbent_words = proposal_words[best_i]
                accepted_text = proposals[best_i].text

        records = [
            StepRecord(
                step=step,
                text=text,
                origin="incumbent" if i == 0 else "swap",
                batch_loss=losses[i],
                running_mean=ledger.entry(text).running_mean,
                eval_count=ledger.entry(text).eval_count,
                accepted=(text == accepted_text) if accepted_text else (i == 0),
            )
            for i, text in enumerate(texts)
        ]
        current = ledger.best_running_mean()
        assert current is not None
        row = TraceRow(step=step, best_running_mean=current, current_batch_loss=min(losses))
        trace.append(row)
        if current < best_mean:
            best_mean = current
            last_improvement = step
        if observer is not None:
            observer.on_step(step, records, row, {
                "algorithm": COORD_SWAP,
                "step": step,
                "seed": seed,
                "ledger": ledger.snapshot(),
                "incumbent_words": list(incumbent_words),
                "best_mean": best_mean,
                "last_improvement": last_improvement,
                "trace": [asdict(t) for t in trace],
                "truncated": sorted(evaluator.truncated_examples),
            })
        if step - last_improvement >= config.patience_steps:
            stopped_early = True
            break

    return _final_result(COORD_SWAP, ledger, trace, step, stopped_early, config, evaluator)


def _spaced(words: Sequence[str]) -> list[str]:
    """Surface tokens for a word list: first bare, the rest space-prefixed."""
    return [w if i == 0 else " " + w for i, w in enumerate(words)]
