"""HTTP backend against an in-process completion server.

The mock wraps the n-gram oracle behind an OpenAI-style /v1/completions
endpoint, so the client can be checked for exact score agreement with the
local oracle it proxies.
"""

import math

import pytest

from mock_server import MockCompletionHandler, completion_server
from promptsearch.errors import CapabilityError, ConfigError, OracleError, TransportError
from promptsearch.oracles.base import GenerationParams
from promptsearch.oracles.http import HttpBackendConfig, HttpOracleBackend

TOKEN = "swordfish-123"


@pytest.fixture
def server():
    with completion_server() as base_url:
        yield base_url


def make_backend(base_url: str, **overrides) -> HttpOracleBackend:
    config = HttpBackendConfig(base_url=base_url, model="mock", backoff_s=0.01, **overrides)
    return HttpOracleBackend(config)


def test_echo_scoring_matches_local_oracle(server):
    backend = make_backend(server)
    local = MockCompletionHandler.oracle
    text = "the cat sat"
    assert backend.tokenize(text) == local.tokenize(text)
    remote = backend.score_output_span(text, (1, 3))
    assert remote == pytest.approx(local.score_output_span(text, (1, 3)), abs=1e-9)


def test_scoring_position_zero_has_no_logprob(server):
    backend = make_backend(server)
    with pytest.raises(OracleError):
        backend.score_output_span("the cat", (0, 2))


def test_sparse_top_k_logits(server):
    backend = make_backend(server, top_logprobs=3)
    logits = backend.next_token_logits("the")
    assert not logits.dense
    assert len(logits.entries) == 3
    local = MockCompletionHandler.oracle.next_token_logits("the")
    for token, lp in logits.entries.items():
        assert lp == pytest.approx(local.entries[token], abs=1e-9)
    mass = math.fsum(math.exp(v) for v in logits.entries.values())
    assert logits.remainder == pytest.approx(math.log1p(-mass), abs=1e-9)


def test_generate_round_trip(server):
    backend = make_backend(server)
    toks = backend.generate("the", GenerationParams(max_new_tokens=2, greedy=True))
    assert toks == MockCompletionHandler.oracle.generate(
        "the", GenerationParams(max_new_tokens=2, greedy=True)
    )


def test_bearer_token_sent_but_never_persisted(server, monkeypatch):
    monkeypatch.setenv("MOCK_API_KEY", TOKEN)
    MockCompletionHandler.require_token = TOKEN
    backend = make_backend(server, auth_env="MOCK_API_KEY")
    backend.tokenize("the cat")
    auth = [h.get("Authorization") for h in MockCompletionHandler.seen_headers]
    assert f"Bearer {TOKEN}" in auth
    # The token lives in request headers only, never in the config dataclass.
    assert TOKEN not in repr(backend.config)


def test_missing_auth_env_is_a_config_error(server, monkeypatch):
    monkeypatch.delenv("ABSENT_KEY_VAR", raising=False)
    with pytest.raises(ConfigError):
        make_backend(server, auth_env="ABSENT_KEY_VAR")


def test_rejected_token_maps_to_transport_error_with_status(server, monkeypatch):
    monkeypatch.setenv("MOCK_API_KEY", "wrong-value")
    MockCompletionHandler.require_token = TOKEN
    backend = make_backend(server, auth_env="MOCK_API_KEY")
    with pytest.raises(TransportError) as err:
        backend.tokenize("the")
    assert err.value.status == 401


def test_server_errors_retry_then_succeed(server):
    MockCompletionHandler.fail_statuses = [500, 503]
    backend = make_backend(server, max_attempts=3)
    assert backend.tokenize("the cat") == ["the", " cat"]


def test_server_errors_exhaust_attempts(server):
    MockCompletionHandler.fail_statuses = [500, 500, 500]
    backend = make_backend(server, max_attempts=3)
    with pytest.raises(TransportError) as err:
        backend.tokenize("the cat")
    assert err.value.status == 500


def test_client_errors_are_not_retried(server):
    MockCompletionHandler.fail_statuses = [404]
    backend = make_backend(server, max_attempts=3)
    with pytest.raises(TransportError) as err:
        backend.tokenize("the")
    assert err.value.status == 404
    assert not MockCompletionHandler.fail_statuses


def test_echoless_server_is_a_capability_error(server):
    MockCompletionHandler.echo_supported = False
    backend = make_backend(server)
    with pytest.raises(CapabilityError):
        backend.score_output_span("the cat", (1, 2))
