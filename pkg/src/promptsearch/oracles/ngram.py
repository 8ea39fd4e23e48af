"""Laplace-smoothed n-gram oracle over a whitespace corpus.

Each corpus line is one document.  Words are whitespace-delimited symbols;
every document is padded with start symbols and closed with a single end
symbol that lives in the vocabulary, so the model can terminate sequences.
Conditional probabilities use add-one smoothing:

    p(w | ctx) = (count(ctx, w) + 1) / (count(ctx) + V)

with V the vocabulary size including the end symbol.  Words outside the
vocabulary score as unseen events, count zero.
"""

from __future__ import annotations

from collections import Counter, defaultdict
import math
from pathlib import Path

from ..errors import OracleError
from . import tokens as tok
from .base import Capabilities, OracleBackend, TokenLogits

BOS = "<s>"
EOS = "</s>"


class NgramOracle(OracleBackend):
    def __init__(self, corpus: str, order: int = 2, identity: str = "ngram") -> None:
        if order < 1:
            raise OracleError("n-gram order must be >= 1")
        self.identity = identity
        self.order = order
        words_seen: set[str] = set()
        counts: dict[tuple[str, ...], Counter[str]] = defaultdict(Counter)
        totals: Counter[tuple[str, ...]] = Counter()
        lines = [ln for ln in corpus.splitlines() if ln.split()]
        if not lines:
            raise OracleError("corpus has no non-empty lines")
        for line in lines:
            words = line.split()
            if BOS in words or EOS in words:
                raise OracleError(f"corpus must not contain the reserved symbols {BOS!r}/{EOS!r}")
            words_seen.update(words)
            padded = [BOS] * (order - 1) + words + [EOS]
            for i in range(order - 1, len(padded)):
                ctx = tuple(padded[i - order + 1 : i])
                counts[ctx][padded[i]] += 1
                totals[ctx] += 1
        self.vocab: tuple[str, ...] = tuple(sorted(words_seen)) + (EOS,)
        self._counts = dict(counts)
        self._totals = dict(totals)

    @classmethod
    def from_file(cls, path: str | Path, order: int = 2, identity: str | None = None) -> "NgramOracle":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text, order=order, identity=identity or Path(path).stem)

    @property
    def capabilities(self) -> Capabilities:
        return Capabilities(full_logits=True, echo_scoring=True, vocabulary=True)

    @property
    def eos_token(self) -> str:
        return EOS

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def tokenize(self, text: str) -> list[str]:
        return tok.tokenize(text)

    def detokenize(self, tokens: list[str] | tuple[str, ...]) -> str:
        return tok.detokenize(tokens)

    def penalty_key(self, token: str) -> str:
        return tok.word(token)

    def vocab_tokens(self) -> list[str]:
        return [w for w in self.vocab if w != EOS]

    def _context_tuple(self, words: list[str]) -> tuple[str, ...]:
        padded = [BOS] * (self.order - 1) + words
        return tuple(padded[len(padded) - self.order + 1 :])

    def _logprob(self, word_symbol: str, ctx: tuple[str, ...]) -> float:
        total = self._totals.get(ctx, 0)
        count = self._counts.get(ctx, {}).get(word_symbol, 0)
        return math.log((count + 1) / (total + len(self.vocab)))

    def _words(self, text: str) -> list[str]:
        return [w for w in (tok.word(t) for t in self.tokenize(text)) if w]

    def score_output_span(self, full_text: str, span: tuple[int, int]) -> list[float]:
        toks = self.tokenize(full_text)
        start, end = span
        if not (0 <= start <= end <= len(toks)):
            raise OracleError(f"span {span} out of range for {len(toks)} tokens")
        words = [tok.word(t) for t in toks]
        out: list[float] = []
        for i in range(start, end):
            ctx = self._context_tuple([w for w in words[:i] if w])
            out.append(self._logprob(words[i], ctx))
        return out

    def next_token_logits(self, context: str) -> TokenLogits:
        ctx = self._context_tuple(self._words(context))
        entries: dict[str, float] = {}
        for w in self.vocab:
            key = w if w == EOS else tok.surface(w, context)
            entries[key] = self._logprob(w, ctx)
        return TokenLogits(entries=entries, dense=True)
