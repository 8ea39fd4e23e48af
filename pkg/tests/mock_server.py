"""In-process OpenAI-style completion server for backend tests.

Wraps the n-gram oracle behind /v1/completions with echo+logprobs, top-k
logprobs, and plain completion, plus knobs for injected failures.
"""

import json
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from promptsearch.oracles import NgramOracle
from promptsearch.oracles.base import GenerationParams

CORPUS = "the cat sat\nthe cat ran\nthe dog sat"


class MockCompletionHandler(BaseHTTPRequestHandler):
    oracle = NgramOracle(CORPUS, order=2)
    require_token: str | None = None
    fail_statuses: list[int] = []
    echo_supported = True
    seen_headers: list[dict] = []

    def log_message(self, *args):
        pass

    def _reply(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        cls = type(self)
        cls.seen_headers.append(dict(self.headers))
        if cls.fail_statuses:
            self._reply(cls.fail_statuses.pop(0), {"error": "injected"})
            return
        if cls.require_token is not None:
            if self.headers.get("Authorization") != f"Bearer {cls.require_token}":
                self._reply(401, {"error": "bad token"})
                return
        length = int(self.headers["Content-Length"])
        req = json.loads(self.rfile.read(length))
        prompt = req.get("prompt", "")
        if req.get("echo"):
            if not cls.echo_supported:
                self._reply(200, {"choices": [{"text": prompt, "logprobs": None}]})
                return
            tokens = self.oracle.tokenize(prompt)
            lps: list[float | None] = [None]
            if tokens:
                lps += self.oracle.score_output_span(prompt, (1, len(tokens)))
            self._reply(
                200,
                {
                    "choices": [
                        {"logprobs": {"tokens": tokens, "token_logprobs": lps[: len(tokens)]}}
                    ]
                },
            )
        elif req.get("logprobs"):
            logits = self.oracle.next_token_logits(prompt)
            k = int(req["logprobs"])
            top = dict(sorted(logits.entries.items(), key=lambda kv: (-kv[1], kv[0]))[:k])
            self._reply(200, {"choices": [{"logprobs": {"top_logprobs": [top]}}]})
        else:
            toks = self.oracle.generate(
                prompt,
                GenerationParams(max_new_tokens=int(req.get("max_tokens", 1)), greedy=True),
            )
            self._reply(200, {"choices": [{"text": self.oracle.detokenize(toks)}]})


def reset_handler() -> None:
    MockCompletionHandler.require_token = None
    MockCompletionHandler.fail_statuses = []
    MockCompletionHandler.echo_supported = True
    MockCompletionHandler.seen_headers = []


@contextmanager
def completion_server():
    reset_handler()
    httpd = ThreadingHTTPServer(("127.0.0.1", 0), MockCompletionHandler)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{httpd.server_address[1]}"
    finally:
        httpd.shutdown()
        thread.join(timeout=5)
