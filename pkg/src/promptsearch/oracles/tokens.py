"""Whitespace tokenization that preserves the exact surface string.

Tokens carry their leading whitespace (a trailing all-whitespace run becomes
its own token), so joining the tokens reproduces the input byte-for-byte.
The stripped form of a token is its model symbol ("word"); surface and
symbol are kept distinct so span extraction stays lossless while n-gram
counts and repetition penalties operate on words.
"""

from __future__ import annotations

import re
from typing import Iterable

_TOKEN_RE = re.compile(r"\s*\S+|\s+$")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def detokenize(tokens: Iterable[str]) -> str:
    return "".join(tokens)


def word(token: str) -> str:
    """Model symbol of a surface token (empty for pure-whitespace tokens)."""
    return token.strip()


def surface(word_symbol: str, context: str) -> str:
    """Surface form a word takes when appended to the given context."""
    if not context or context[-1].isspace():
        return word_symbol
    return " " + word_symbol


class WhitespaceTokenizer:
    """Object form of the module functions, for APIs that take a tokenizer."""

    def tokenize(self, text: str) -> list[str]:
        return tokenize(text)

    def detokenize(self, tokens: Iterable[str]) -> str:
        return detokenize(tokens)
