"""HTTP adapters against a fake OpenAI-compatible server on loopback."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

import taskds.clients
import taskds.embed
from taskds.clients import OpenAIChatClient
from taskds.embed import HTTPEmbeddingProvider
from taskds.errors import DimensionMismatch, ModelUnavailable, ProviderUnavailable


class FakeAPI(ThreadingHTTPServer):
    def __init__(self):
        super().__init__(("127.0.0.1", 0), _Handler)
        self.requests: list[tuple[str, dict, dict]] = []
        self.fail_first = 0
        self.mode = "ok"
        self.dim = 4

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.server_address[1]}/v1"


class _Handler(BaseHTTPRequestHandler):
    server: FakeAPI

    def log_message(self, *a):
        pass

    def _reply(self, status, obj):
        body = (obj if isinstance(obj, bytes) else json.dumps(obj).encode())
        self.send_response(status)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        srv = self.server
        srv.requests.append((self.path, body, dict(self.headers)))
        if srv.fail_first > 0:
            srv.fail_first -= 1
            return self._reply(503, {"error": "busy"})
        if srv.mode == "garbage":
            return self._reply(200, b"<html>")
        if self.path.endswith("/chat/completions"):
            return self._reply(200, {"choices": [{"message": {"content": "echo:" + body["messages"][0]["content"]}}]})
        n = len(body["input"])
        if srv.mode == "short":
            n -= 1
        # answer out of order; the client must sort by index
        data = [{"index": i, "embedding": [float(i + 1)] + [0.5] * (srv.dim - 1)} for i in range(n)][::-1]
        return self._reply(200, {"data": data})


@pytest.fixture()
def api(monkeypatch):
    monkeypatch.setattr(taskds.clients.time, "sleep", lambda s: None)
    monkeypatch.setattr(taskds.embed.time, "sleep", lambda s: None)
    srv = FakeAPI()
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    yield srv
    srv.shutdown()
    srv.server_close()


def test_chat_client_round_trip(api, monkeypatch):
    monkeypatch.setenv("FAKE_KEY", "k-123")
    c = OpenAIChatClient(api.url, "m1", api_key_env="FAKE_KEY")
    assert c.complete("hello", "boolean") == "echo:hello"
    path, body, headers = api.requests[0]
    assert path == "/v1/chat/completions" and body["model"] == "m1" and body["temperature"] == 0
    assert headers["Authorization"] == "Bearer k-123"
    assert c.counter.total == 1 and c.identity == "openai-compatible/m1"


def test_chat_client_retries_then_succeeds(api):
    api.fail_first = 2
    c = OpenAIChatClient(api.url, "m1", retries=2)
    assert c.complete("x", "boolean") == "echo:x"
    assert len(api.requests) == 3


def test_chat_client_gives_up(api):
    api.fail_first = 10
    c = OpenAIChatClient(api.url, "m1", retries=1)
    with pytest.raises(ModelUnavailable):
        c.complete("x", "boolean")
    assert len(api.requests) == 2 and c.counter.failures == 1


def test_chat_client_malformed_reply(api):
    api.mode = "garbage"
    with pytest.raises(ModelUnavailable):
        OpenAIChatClient(api.url, "m1", retries=0).complete("x", "boolean")


def test_chat_client_unreachable(monkeypatch):
    monkeypatch.setattr(taskds.clients.time, "sleep", lambda s: None)
    srv = FakeAPI()
    url = srv.url
    srv.server_close()
    with pytest.raises(ModelUnavailable):
        OpenAIChatClient(url, "m1", retries=1, timeout=2).complete("x", "boolean")


def test_embedding_provider_batches_and_orders(api):
    p = HTTPEmbeddingProvider(api.url, "e1", 4, batch_size=2)
    vecs = p.embed(["a", "b", "c"])
    assert p.calls == 2 and [len(r[1]["input"]) for r in api.requests] == [2, 1]
    firsts = [float(v.values[0]) for v in vecs]
    assert firsts == [1.0, 2.0, 1.0]
    assert p.identity == "http/e1-d4"


def test_embedding_provider_dimension_check(api):
    with pytest.raises(DimensionMismatch):
        HTTPEmbeddingProvider(api.url, "e1", 8).embed(["a"])


@pytest.mark.parametrize("mode,fail", [("short", 0), ("garbage", 0), ("ok", 5)])
def test_embedding_provider_failures(api, mode, fail):
    api.mode, api.fail_first = mode, fail
    with pytest.raises(ProviderUnavailable):
        HTTPEmbeddingProvider(api.url, "e1", 4, retries=1).embed(["a", "b"])


def test_embedding_provider_retry(api):
    api.fail_first = 1
    vecs = HTTPEmbeddingProvider(api.url, "e1", 4, retries=1).embed(["a"])
    assert np.isclose(float(vecs[0].values[0]), 1.0)
