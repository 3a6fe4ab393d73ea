"""Embedded mock LMS platform.

Serves the same page-retrieval HTTP surface a Canvas-style LMS exposes,
plus POST /mock/pages for rewriting page bodies mid-test. State lives
in memory; writes are serialized, so per-page history is linearizable:
a fetch always sees the most recent update.
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .clock import Clock, SystemClock

log = logging.getLogger(__name__)


class MockLmsPlatform:
    def __init__(self, api_token: str = "mock-token", clock: Clock | None = None) -> None:
        self.api_token = api_token
        self.clock = clock or SystemClock()
        self.base_url: str | None = None
        # Test-only fault injection: serve an unparseable page document.
        self.respond_malformed = False
        self._pages: dict[tuple[str, str], dict] = {}
        self._lock = threading.Lock()
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    # In-process store ---------------------------------------------------

    def upsert_page(self, course_id: str, page_slug: str, body: str) -> None:
        with self._lock:
            self._pages[(course_id, page_slug)] = {
                "course_id": course_id,
                "page_slug": page_slug,
                "body": body,
                "updated_at": self.clock.now(),
            }

    def get_page(self, course_id: str, page_slug: str) -> dict | None:
        with self._lock:
            page = self._pages.get((course_id, page_slug))
            return dict(page) if page else None

    # HTTP surface --------------------------------------------------------

    def start(self) -> str:
        """Bind an ephemeral local port and serve until stop()."""
        if self._server is not None:
            return self.base_url  # type: ignore[return-value]
        handler = _make_handler(self)
        server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
        self._server = server
        self._thread = threading.Thread(
            target=lambda: server.serve_forever(poll_interval=0.05),
            name="mock-lms",
            daemon=True,
        )
        self._thread.start()
        host, port = self._server.server_address[:2]
        self.base_url = f"http://{host}:{port}"
        log.debug("mock LMS listening on %s", self.base_url)
        return self.base_url

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
            self._thread = None

    def __enter__(self) -> "MockLmsPlatform":
        self.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self.stop()


def _make_handler(platform: MockLmsPlatform) -> type[BaseHTTPRequestHandler]:
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt: str, *args) -> None:
            log.debug("mock LMS: " + fmt, *args)

        def _send(self, status: int, payload: dict | str) -> None:
            body = payload if isinstance(payload, str) else json.dumps(payload)
            data = body.encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def _authorized(self) -> bool:
            return self.headers.get("Authorization") == f"Bearer {platform.api_token}"

        def do_GET(self) -> None:
            parts = self.path.strip("/").split("/")
            # api/v1/courses/{course_id}/pages/{page_slug}
            if len(parts) == 6 and parts[:3] == ["api", "v1", "courses"] and parts[4] == "pages":
                if not self._authorized():
                    self._send(401, {"error": "unauthorized"})
                    return
                if platform.respond_malformed:
                    self._send(200, "this is not the page document you expected")
                    return
                page = platform.get_page(parts[3], parts[5])
                if page is None:
                    self._send(404, {"error": "page not found"})
                    return
                self._send(200, page)
                return
            self._send(404, {"error": "unknown path"})

        def do_POST(self) -> None:
            if self.path.rstrip("/") != "/mock/pages":
                self._send(404, {"error": "unknown path"})
                return
            if not self._authorized():
                self._send(401, {"error": "unauthorized"})
                return
            length = int(self.headers.get("Content-Length", "0"))
            try:
                doc = json.loads(self.rfile.read(length) or b"{}")
                course_id = doc["course_id"]
                page_slug = doc["page_slug"]
                body = doc["body"]
            except (ValueError, KeyError) as exc:
                self._send(400, {"error": f"bad update request: {exc}"})
                return
            platform.upsert_page(course_id, page_slug, body)
            self._send(200, {"ok": True})

    return Handler
