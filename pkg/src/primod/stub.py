"""Canned-response chat endpoint for tests and offline demos.

Speaks the same wire format as :func:`primod.llm_client.generate`. The flow
id is read from the ``- ID: <df_id>`` line of the prompt and the reply is
looked up in a directory (or mapping) keyed by df_id:

* ``<df_id>.<n>.json`` / ``.txt`` - reply for the n-th call for that flow
* ``<df_id>.json`` / ``.txt``     - reply for any call
* ``_default.json`` / ``.txt``    - fallback; ``{df_id}`` in it is substituted

Unknown flows get HTTP 404.
"""

from __future__ import annotations

import json
import re
import threading
import time
from collections import Counter
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Mapping

_DF_LINE = re.compile(r"^- ID: (.+?)\s*$", re.M)


class StubLLMServer:
    def __init__(
        self,
        responses: str | Path | Mapping[str, str],
        host: str = "127.0.0.1",
        port: int = 0,
        delay: float = 0.0,
    ):
        self.responses = responses if isinstance(responses, Mapping) else Path(responses)
        self.delay = delay
        self.calls: Counter[str] = Counter()
        self.requests: list[dict] = []
        self._lock = threading.Lock()
        self._httpd = ThreadingHTTPServer((host, port), self._handler_class())
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}/api/generate"

    def _lookup(self, df_id: str, n: int) -> str | None:
        names = [f"{df_id}.{n}", df_id]
        if isinstance(self.responses, Mapping):
            for name in names:
                if name in self.responses:
                    return self.responses[name]
            default = self.responses.get("_default")
        else:
            for name in names:
                for ext in (".json", ".txt"):
                    p = self.responses / f"{name}{ext}"
                    if p.is_file():
                        return p.read_text(encoding="utf-8")
            default = None
            for ext in (".json", ".txt"):
                p = self.responses / f"_default{ext}"
                if p.is_file():
                    default = p.read_text(encoding="utf-8")
                    break
        return default.replace("{df_id}", df_id) if default is not None else None

    def _handler_class(self):
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # silence stderr access log
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    self._reply(400, {"error": "request body is not JSON"})
                    return
                m = _DF_LINE.search(str(body.get("prompt", "")))
                df_id = m.group(1) if m else ""
                with stub._lock:
                    stub.calls[df_id] += 1
                    n = stub.calls[df_id]
                    stub.requests.append(body)
                if stub.delay:
                    time.sleep(stub.delay)
                text = stub._lookup(df_id, n)
                if text is None:
                    self._reply(404, {"error": f"no canned response for {df_id!r}"})
                    return
                self._reply(200, {"model": body.get("model", ""), "response": text, "done": True})

            def _reply(self, status: int, payload: dict) -> None:
                data = json.dumps(payload).encode()
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass

        return Handler

    def start(self) -> "StubLLMServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, args=(0.05,), daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "StubLLMServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
