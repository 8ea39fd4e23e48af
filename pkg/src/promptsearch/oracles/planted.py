"""Deterministic oracle with a planted scoring rule.

Scoring: every token of an output span gets one of two constant
log-probabilities depending on whether the prompt region of the rendered
text satisfies a keyword rule.  The prompt region is everything before the
first occurrence of a known example input, so keywords that also appear in
example outputs cannot leak a match.

Generation: next-token distributions follow a weighted bank of candidate
phrases (suffix-of-context against prefix-of-phrase matching), so sampled
prompts are always drawn from the bank.  When the context ends in a known
example input, the oracle instead continues with that example's answer if
the rule matches, or with a junk word if it does not; this is what makes
zero-shot decoding succeed exactly when the prompt satisfies the rule.
"""

from __future__ import annotations

import math
from typing import Mapping

from ..datasets import Dataset, KeywordRule, check_keywords, keyword_rule_for
from ..errors import OracleError
from . import tokens as tok
from .base import Capabilities, OracleBackend, TokenLogits

EOS = "</s>"

MATCH_LOGPROB = -0.1
MISS_LOGPROB = -3.0

_FLOOR = 1e-9
_SCORE_CACHE_LIMIT = 200_000


class PlantedRuleOracle(OracleBackend):
    def __init__(
        self,
        rule: KeywordRule,
        phrases: Mapping[str, float],
        answers: Mapping[str, str] | None = None,
        *,
        match_logprob: float = MATCH_LOGPROB,
        miss_logprob: float = MISS_LOGPROB,
        junk_word: str = "unrelated",
        identity: str = "planted",
    ) -> None:
        if not phrases:
            raise OracleError("phrase bank must not be empty")
        if match_logprob >= 0 or miss_logprob >= 0:
            raise OracleError("score constants must be negative log-probabilities")
        total = math.fsum(phrases.values())
        if total <= 0:
            raise OracleError("phrase weights must sum to a positive value")
        self.identity = identity
        self.rule = rule
        self.match_logprob = match_logprob
        self.miss_logprob = miss_logprob
        self.junk_word = junk_word
        self._phrases: dict[tuple[str, ...], float] = {}
        words_seen: set[str] = set()
        for text, weight in phrases.items():
            words = tuple(text.split())
            if not words:
                raise OracleError("phrase bank contains an empty phrase")
            self._phrases[words] = weight / total
            words_seen.update(words)
        words_seen.add(junk_word)
        self._answers = dict(answers or {})
        # Answer continuations drop pure-whitespace tokens so decoded text
        # ends cleanly at the answer itself.
        self._answer_tokens: dict[str, tuple[str, ...]] = {
            inp: tuple(t for t in tok.tokenize(out) if t.strip()) for inp, out in self._answers.items()
        }
        for toks in self._answer_tokens.values():
            words_seen.update(tok.word(t) for t in toks)
        self.vocab: tuple[str, ...] = tuple(sorted(words_seen))
        self._probe_index = self._build_probe_index()
        self._match_cache: dict[str, bool] = {}
        self._score_cache: dict[tuple[str, tuple[int, int]], tuple[float, ...]] = {}

    # -- tokenizer ---------------------------------------------------------

    def tokenize(self, text: str) -> list[str]:
        return tok.tokenize(text)

    def detokenize(self, tokens: list[str] | tuple[str, ...]) -> str:
        return tok.detokenize(tokens)

    def penalty_key(self, token: str) -> str:
        return tok.word(token)

    @property
    def capabilities(self) -> Capabilities:
        return Capabilities(full_logits=True, echo_scoring=True, vocabulary=True)

    @property
    def eos_token(self) -> str:
        return EOS

    @property
    def vocab_size(self) -> int:
        return len(self.vocab) + 1  # end symbol

    def vocab_tokens(self) -> list[str]:
        return list(self.vocab)

    # -- scoring -----------------------------------------------------------

    def _prompt_region(self, full_text: str) -> str:
        cut = len(full_text)
        for inp in self._answers:
            idx = full_text.find(inp)
            if 0 <= idx < cut:
                cut = idx
        return full_text[:cut]

    def _prompt_matches(self, full_text: str) -> bool:
        hit = self._match_cache.get(full_text)
        if hit is None:
            hit = check_keywords(self.rule, self._prompt_region(full_text))
            if len(self._match_cache) > _SCORE_CACHE_LIMIT:
                self._match_cache.clear()
            self._match_cache[full_text] = hit
        return hit

    def score_output_span(self, full_text: str, span: tuple[int, int]) -> list[float]:
        key = (full_text, span)
        cached = self._score_cache.get(key)
        if cached is not None:
            return list(cached)
        toks = self.tokenize(full_text)
        start, end = span
        if not (0 <= start <= end <= len(toks)):
            raise OracleError(f"span {span} out of range for {len(toks)} tokens")
        value = self.match_logprob if self._prompt_matches(full_text) else self.miss_logprob
        scores = [value] * (end - start)
        if len(self._score_cache) > _SCORE_CACHE_LIMIT:
            self._score_cache.clear()
        self._score_cache[key] = tuple(scores)
        return scores

    # -- generation --------------------------------------------------------

    def _build_probe_index(self) -> dict[str, list[tuple[str, str, int, int]]]:
        """Map of probe tails to (probe, input, branch, position) entries.

        A probe is a known input plus a prefix of either its true answer
        ("answer" branch) or the junk continuation ("junk" branch).  Probes
        are bucketed by their last characters for cheap suffix lookup.
        """
        index: dict[str, list[tuple[str, str, int, int]]] = {}
        junk = (tok.surface(self.junk_word, "x"),)  # junk always follows non-space text
        for inp in self._answers:
            branches = {0: self._answer_tokens[inp], 1: junk}
            for branch, toks in branches.items():
                for j in range(len(toks) + 1):
                    probe = inp + "".join(toks[:j])
                    index.setdefault(probe[-8:], []).append((probe, inp, branch, j))
        return index

    def _answer_state(self, context: str) -> tuple[str, int, int] | None:
        """Which (input, branch, position) the context tail sits in, if any."""
        best: tuple[str, int, int] | None = None
        best_len = -1
        for probe, inp, branch, j in self._probe_index.get(context[-8:], ()):
            if len(probe) > best_len and context.endswith(probe):
                best = (inp, branch, j)
                best_len = len(probe)
        return best

    def _distribution(self, masses: Mapping[str, float], context: str) -> TokenLogits:
        """Dense logits over the vocabulary plus any explicit surface targets.

        ``masses`` must sum to one; keys are word symbols, raw surface
        tokens, or the end symbol.  Every entry gets a tiny floor mass and
        the explicit masses are scaled down to compensate, so the
        exponentials sum to one.
        """
        resolved: dict[str, float] = {}
        for key, mass in masses.items():
            if key != EOS and key == key.strip():
                key = tok.surface(key, context)
            resolved[key] = resolved.get(key, 0.0) + mass
        entry_keys = {tok.surface(w, context) for w in self.vocab} | {EOS} | set(resolved)
        scale = 1.0 - _FLOOR * len(entry_keys)
        entries = {key: math.log(resolved.get(key, 0.0) * scale + _FLOOR) for key in entry_keys}
        return TokenLogits(entries=entries, dense=True)

    def next_token_logits(self, context: str) -> TokenLogits:
        state = self._answer_state(context)
        if state is not None:
            inp, branch, j = state
            probe_len = len(inp) + len("".join(self._branch_tokens(inp, branch)[:j]))
            region = context[: len(context) - probe_len]
            matched = check_keywords(self.rule, self._prompt_region(region + inp))
            follow = 0 if matched else 1
            toks = self._branch_tokens(inp, follow)
            if follow != branch and j > 0:
                target = EOS  # inconsistent tail: terminate
            elif j < len(toks):
                target = toks[j]
            else:
                target = EOS
            return self._distribution({target: 1.0}, context)
        return self._distribution(self._phrase_masses(context), context)

    def _branch_tokens(self, inp: str, branch: int) -> tuple[str, ...]:
        if branch == 0:
            return self._answer_tokens[inp]
        return (tok.surface(self.junk_word, "x"),)

    def _phrase_masses(self, context: str) -> dict[str, float]:
        ctx_words = [w for w in (tok.word(t) for t in self.tokenize(context)) if w]
        depth = 0
        for words in self._phrases:
            top = min(len(words), len(ctx_words))
            for k in range(top, depth, -1):
                if ctx_words[-k:] == list(words[:k]):
                    depth = k
                    break
        masses: dict[str, float] = {}
        for words, weight in self._phrases.items():
            if depth and (len(words) < depth or list(words[:depth]) != ctx_words[-depth:]):
                continue
            symbol = words[depth] if depth < len(words) else EOS
            masses[symbol] = masses.get(symbol, 0.0) + weight
        total = math.fsum(masses.values())
        return {k: v / total for k, v in masses.items()}


TASK_PHRASES: dict[str, str] = {
    "add_two": "Sum the two numbers",
    "subtract_two": "Subtract the second number",
    "multiply_two": "Multiply the two values",
    "divide_two": "Divide the two numbers",
    "max_two": "Return the maximum value",
    "first_two": "Return the first number",
    "square_one": "Square the given input",
    "exp_one": "Exponentiate the given input",
    "double_one": "Double the input value",
    "fibonacci_one": "Compute the fibonacci value",
}

DISTRACTOR_PHRASES: tuple[str, ...] = (
    "Return the output",
    "Compute the result",
    "Look at the data",
)


def oracle_for_task(task: str, dataset: Dataset, *, rule: KeywordRule | None = None) -> PlantedRuleOracle:
    """Planted oracle wired to a math task: its rule, answers, and phrase bank."""
    if task not in TASK_PHRASES:
        raise OracleError(f"no phrase bank for task {task!r}")
    phrases = {TASK_PHRASES[task]: 0.25}
    for text in DISTRACTOR_PHRASES:
        phrases[text] = 0.25
    answers = {ex.input_text: ex.output_text for ex in dataset.examples}
    return PlantedRuleOracle(
        rule or keyword_rule_for(task),
        phrases,
        answers,
        identity=f"planted:{task}",
    )
