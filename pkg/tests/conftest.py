import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest


class FakeAnnotationService:
    """Tiny in-process entity-linking service for client/cache tests.

    Routes a few keywords to canned Wikipedia-style annotations and counts
    every request it serves. ``fail_next`` injects 503s ahead of a success.
    """

    CANNED = {
        "gradient": [
            {"title": "Gradient descent",
             "url": "https://en.wikipedia.org/wiki/Gradient_descent",
             "pageRank": 0.82, "cosine": 0.61, "support": 12},
            {"title": "Mathematical optimization",
             "url": "https://en.wikipedia.org/wiki/Mathematical_optimization",
             "pageRank": 0.33, "cosine": 0.47},
        ],
        "bayes": [
            {"title": "Bayes' theorem",
             "url": "https://en.wikipedia.org/wiki/Bayes%27_theorem",
             "pageRank": 0.74, "cosine": 0.58},
        ],
    }

    def __init__(self):
        self.requests_served = 0
        self.fail_next = 0
        self.respond_garbage = False
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                body = self.rfile.read(int(self.headers["Content-Length"]))
                outer.requests_served += 1
                if outer.fail_next > 0:
                    outer.fail_next -= 1
                    self.send_response(503)
                    self.end_headers()
                    return
                if outer.respond_garbage:
                    self.send_response(200)
                    self.end_headers()
                    self.wfile.write(b"this is not json")
                    return
                payload = json.loads(body)
                annotations = []
                for keyword, canned in outer.CANNED.items():
                    if keyword in payload["text"].lower():
                        annotations.extend(canned)
                if not annotations:
                    annotations = [{"title": "Lecture",
                                    "url": "https://en.wikipedia.org/wiki/Lecture",
                                    "pageRank": 0.1, "cosine": 0.2}]
                out = json.dumps({"annotations": annotations,
                                  "lang": payload.get("lang", "en")}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.end_headers()
                self.wfile.write(out)

        self.server = HTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def endpoint(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}/annotate"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def fake_service():
    service = FakeAnnotationService()
    yield service
    service.close()
