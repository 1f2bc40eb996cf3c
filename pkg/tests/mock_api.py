"""In-process HTTP mock for the embeddings and chat endpoints used in tests."""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

ITEM_RE = re.compile(r"ITEM (\S+):")


class MockApi:
    """Scriptable embeddings + chat server.

    embed_fn(text) -> list[float]; chat_fn(item_id, attempt) -> str.
    `kill_after` caps the number of successful chat responses: once reached,
    every chat request gets a 503 until the cap is lifted.
    """

    def __init__(self, embed_fn=None, chat_fn=None, shuffle_embed_order=True):
        self.embed_fn = embed_fn
        self.chat_fn = chat_fn
        self.shuffle_embed_order = shuffle_embed_order
        self.lock = threading.Lock()
        self.embed_batches: list[list[str]] = []
        self.embed_fail_next = 0
        self.chat_requests: dict[str, int] = {}
        self.chat_ok: dict[str, int] = {}
        self.kill_after: int | None = None
        self._ok_count = 0
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), _make_handler(self))
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def start(self) -> "MockApi":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    @property
    def embed_url(self) -> str:
        return self.base_url + "/v1/embeddings"

    @property
    def chat_url(self) -> str:
        return self.base_url + "/v1/chat/completions"

    def heal(self) -> None:
        with self.lock:
            self.kill_after = None


def _make_handler(api: MockApi):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):  # keep test output clean
            pass

        def _reply(self, status: int, payload: dict | None = None) -> None:
            body = json.dumps(payload or {}).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
            if self.path.endswith("/embeddings"):
                self._embeddings(payload)
            elif self.path.endswith("/chat/completions"):
                self._chat(payload)
            else:
                self._reply(404, {"error": "unknown path"})

        def _embeddings(self, payload):
            with api.lock:
                if api.embed_fail_next > 0:
                    api.embed_fail_next -= 1
                    self._reply(503, {"error": "try again"})
                    return
                texts = payload["input"]
                api.embed_batches.append(list(texts))
            data = [{"index": i, "embedding": api.embed_fn(t)} for i, t in enumerate(texts)]
            if api.shuffle_embed_order:
                data = list(reversed(data))
            self._reply(200, {"data": data})

        def _chat(self, payload):
            prompt = payload["messages"][0]["content"]
            match = ITEM_RE.search(prompt)
            item_id = match.group(1) if match else prompt[:40]
            with api.lock:
                api.chat_requests[item_id] = api.chat_requests.get(item_id, 0) + 1
                attempt = api.chat_requests[item_id]
                if api.kill_after is not None and self._killed():
                    self._reply(503, {"error": "killed"})
                    return
                api._ok_count += 1
                api.chat_ok[item_id] = api.chat_ok.get(item_id, 0) + 1
            text = api.chat_fn(item_id, attempt)
            self._reply(200, {"choices": [{"message": {"role": "assistant", "content": text}}]})

        def _killed(self) -> bool:
            return api._ok_count >= api.kill_after

    return Handler
