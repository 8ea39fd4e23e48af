"""HTTP completion-API backend (OpenAI-style /v1/completions).

Span scoring uses the server's echo mode with per-token logprobs; the
next-token distribution comes from top-k logprobs of a one-token
completion, reported as sparse logits.  The bearer token is read from an
environment variable named in the config and never stored beyond the
request headers.
"""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass

import requests

from ..errors import CapabilityError, ConfigError, OracleError, TransportError
from . import tokens as tok
from .base import Capabilities, GenerationParams, OracleBackend, TokenLogits

log = logging.getLogger(__name__)

_CACHE_LIMIT = 50_000


@dataclass(frozen=True, slots=True)
class HttpBackendConfig:
    base_url: str
    model: str
    auth_env: str | None = None
    top_logprobs: int = 5
    timeout_s: float = 30.0
    max_attempts: int = 3
    backoff_s: float = 0.5
    send_seed: bool = False  # include the seed field for servers that accept it

    def __post_init__(self) -> None:
        if self.top_logprobs < 1:
            raise ConfigError("top_logprobs must be >= 1")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")


class HttpOracleBackend(OracleBackend):
    def __init__(self, config: HttpBackendConfig, session: requests.Session | None = None) -> None:
        self.config = config
        self.identity = config.model
        self._session = session or requests.Session()
        self._headers = {"Content-Type": "application/json"}
        if config.auth_env is not None:
            token = os.environ.get(config.auth_env)
            if token is None:
                raise ConfigError(f"environment variable {config.auth_env!r} is not set")
            self._headers["Authorization"] = f"Bearer {token}"
        self._url = config.base_url.rstrip("/") + "/v1/completions"
        self._echo_cache: dict[str, tuple[list[str], list[float | None]]] = {}

    @property
    def capabilities(self) -> Capabilities:
        return Capabilities(sparse_logits=True, echo_scoring=True)

    # -- transport ---------------------------------------------------------

    def _post(self, payload: dict) -> dict:
        payload = {"model": self.config.model, **payload}
        delay = self.config.backoff_s
        last: Exception | None = None
        for attempt in range(self.config.max_attempts):
            if attempt:
                time.sleep(delay)
                delay *= 2
            try:
                resp = self._session.post(
                    self._url, json=payload, headers=self._headers, timeout=self.config.timeout_s
                )
            except requests.RequestException as exc:
                last = TransportError(f"request failed: {exc}")
                log.warning("attempt %d/%d failed: %s", attempt + 1, self.config.max_attempts, exc)
                continue
            if resp.status_code >= 500:
                last = TransportError(f"server error {resp.status_code}", status=resp.status_code)
                log.warning("attempt %d/%d: status %d", attempt + 1, self.config.max_attempts, resp.status_code)
                continue
            if resp.status_code >= 400:
                # Client errors are not retried; 401 means the bearer token
                # from the configured env var was rejected.
                raise TransportError(
                    f"request rejected with status {resp.status_code}", status=resp.status_code
                )
            try:
                return resp.json()
            except ValueError as exc:
                raise TransportError(f"response is not valid JSON: {exc}") from exc
        assert last is not None
        raise last

    def _choice(self, payload: dict) -> dict:
        data = self._post(payload)
        choices = data.get("choices")
        if not choices:
            raise TransportError("response has no choices")
        return choices[0]

    # -- tokenization via server echo -------------------------------------

    def _echo(self, text: str) -> tuple[list[str], list[float | None]]:
        hit = self._echo_cache.get(text)
        if hit is not None:
            return hit
        choice = self._choice(
            {"prompt": text, "max_tokens": 0, "echo": True, "logprobs": 0, "temperature": 0.0}
        )
        lp = choice.get("logprobs")
        if not lp or "tokens" not in lp or "token_logprobs" not in lp:
            raise CapabilityError("server does not support echo with logprobs")
        tokens = list(lp["tokens"])
        if "".join(tokens) != text:
            raise OracleError("server tokens do not reassemble the prompt")
        result = (tokens, list(lp["token_logprobs"]))
        if len(self._echo_cache) > _CACHE_LIMIT:
            self._echo_cache.clear()
        self._echo_cache[text] = result
        return result

    def tokenize(self, text: str) -> list[str]:
        if not text:
            return []
        return self._echo(text)[0]

    def detokenize(self, tokens: list[str] | tuple[str, ...]) -> str:
        return tok.detokenize(tokens)

    # -- scoring -----------------------------------------------------------

    def score_output_span(self, full_text: str, span: tuple[int, int]) -> list[float]:
        tokens, logprobs = self._echo(full_text)
        start, end = span
        if not (0 <= start <= end <= len(tokens)):
            raise OracleError(f"span {span} out of range for {len(tokens)} tokens")
        out: list[float] = []
        for i in range(start, end):
            lp = logprobs[i]
            if lp is None:
                raise OracleError(
                    f"no conditional log-probability for token {i} (sequence start)"
                )
            out.append(float(lp))
        return out

    def next_token_logits(self, context: str) -> TokenLogits:
        choice = self._choice(
            {
                "prompt": context,
                "max_tokens": 1,
                "logprobs": self.config.top_logprobs,
                "temperature": 0.0,
            }
        )
        lp = choice.get("logprobs")
        if not lp or not lp.get("top_logprobs"):
            raise CapabilityError("server does not return top logprobs")
        top = lp["top_logprobs"][0]
        if not top:
            raise CapabilityError("empty top_logprobs entry")
        entries = {token: float(v) for token, v in top.items()}
        mass = math.fsum(math.exp(v) for v in entries.values())
        remainder = math.log1p(-mass) if mass < 1.0 else -math.inf
        return TokenLogits(entries=entries, dense=False, remainder=remainder)

    # -- generation --------------------------------------------------------

    def generate(self, context: str, params: GenerationParams) -> list[str]:
        payload: dict = {
            "prompt": context,
            "max_tokens": params.max_new_tokens,
            "temperature": 0.0 if params.greedy else params.temperature,
        }
        if params.repetition_penalty != 1.0:
            payload["repetition_penalty"] = params.repetition_penalty
        if params.stop_tokens:
            payload["stop"] = list(params.stop_tokens)
        if params.seed is not None and self.config.send_seed:
            payload["seed"] = params.seed
        choice = self._choice(payload)
        text = choice.get("text")
        if text is None:
            raise OracleError("completion response has no text")
        # Whitespace surface tokens; the search layer re-tokenizes candidates
        # anyway, and generation output never feeds span arithmetic.
        return tok.tokenize(text)
