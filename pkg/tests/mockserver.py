"""Tiny threaded HTTP server standing in for chat/embedding endpoints."""
from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable

from bladeinspect.bridge import parse_blocks

# handler(request_json, call_index) -> (status, body_obj_or_text)
Responder = Callable[[dict, int], tuple]


class MockEndpoint:
    def __init__(self, responder: Responder):
        self.responder = responder
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length) or b"{}")
                with outer._lock:
                    index = len(outer.requests)
                    outer.requests.append(payload)
                    outer.headers.append(dict(self.headers))
                status, body = outer.responder(payload, index)
                data = body.encode() if isinstance(body, str) else json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def chat_reply(content: str) -> dict:
    return {"id": "mock", "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}


DEFAULT_PROCEDURE = {"coating": "CT-101", "dirt": "DT-201", "VG-missing-teeth": "VG-402A", "markings": "MK-301"}
_PROCEDURE_RE = re.compile(r"procedure (\S+) applies")


def report_from_prompt(payload: dict) -> dict:
    """A well-behaved teacher: restate every detection block as a report entry."""
    user = next(m["content"] for m in payload["messages"] if m["role"] == "user")
    defects = []
    for segment in user.split("\n\n"):
        blocks = parse_blocks(segment)
        if not blocks:
            continue
        b = blocks[0]
        protocol = segment.partition("\nRetrieved Protocol: ")[2]
        m = _PROCEDURE_RE.search(protocol)
        defects.append({
            "defect_class": b.class_label,
            "grid_label": b.grid.value,
            "obb_corners": [list(c) for c in b.corners],
            "severity_code": "S2",
            "procedure_ref": m.group(1) if m else DEFAULT_PROCEDURE[b.class_label],
            "urgency": "scheduled",
            "recommendation": protocol or f"Inspect the {b.class_label} region and log the finding.",
        })
    return {"defects": defects, "summary": f"{len(defects)} defect(s) reported."}


def consistent_responder(payload: dict, index: int):
    return 200, chat_reply(json.dumps(report_from_prompt(payload)))
