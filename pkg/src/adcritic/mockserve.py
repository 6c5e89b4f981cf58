"""HTTP server that speaks the critic wire protocol from a mock world.

The server indexes the world's images by the digest of their bytes, so any
client that ships image content (as the protocol requires) gets answers
derived from that image's manifest. Unknown images show nothing, which makes
every schema-valid request answerable: classification falls back to
hallucinated and the salient list to empty.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import protocol
from .backends import non_salient_rationale, salient_rationale
from .core import (
    HALLUCINATED_RATIONALE,
    FeatureLabel,
    MixedModalRecord,
    MockManifest,
    canonical_key,
    read_records,
)
from .errors import ProtocolError

log = logging.getLogger(__name__)


def build_image_index(records: list[MixedModalRecord]) -> dict[str, MockManifest]:
    """Map sha256(image bytes) -> manifest for every manifested image."""
    index: dict[str, MockManifest] = {}
    for record in records:
        for img in record.images:
            if img.manifest is None:
                continue
            try:
                data = Path(img.uri).read_bytes()
            except OSError:
                log.warning("world image unreadable, skipping: %s", img.uri)
                continue
            index[hashlib.sha256(data).hexdigest()] = img.manifest
    return index


def classify_against_manifest(manifest: MockManifest | None, feature: str) -> protocol.CriticVerdict:
    key = canonical_key(feature)
    if manifest is not None and key in manifest.salient_set:
        return protocol.CriticVerdict(FeatureLabel.SALIENT, salient_rationale(feature.strip()))
    if manifest is not None and key in manifest.visible_set:
        return protocol.CriticVerdict(
            FeatureLabel.NON_SALIENT, non_salient_rationale(feature.strip())
        )
    return protocol.CriticVerdict(FeatureLabel.HALLUCINATED, HALLUCINATED_RATIONALE)


class _Handler(BaseHTTPRequestHandler):
    index: dict[str, MockManifest] = {}

    def log_message(self, fmt, *args):  # keep test output quiet
        log.debug("mock-serve: " + fmt, *args)

    def _reply(self, status: int, body: bytes):
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, message: str):
        self._reply(status, json.dumps({"error": message}).encode("utf-8"))

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        body = self.rfile.read(length)
        try:
            if self.path == protocol.CLASSIFY_PATH:
                image, feature = protocol.parse_classify_request(body)
                manifest = self.index.get(hashlib.sha256(image).hexdigest())
                verdict = classify_against_manifest(manifest, feature)
                self._reply(200, protocol.render_classify_response(verdict))
            elif self.path == protocol.SALIENT_PATH:
                image = protocol.parse_salient_request(body)
                manifest = self.index.get(hashlib.sha256(image).hexdigest())
                features = list(manifest.salient) if manifest else []
                self._reply(200, protocol.render_salient_response(features))
            else:
                self._error(404, f"unknown path {self.path}")
        except ProtocolError as exc:
            self._error(400, str(exc))


class MockCriticServer:
    """Embeddable server; use ``with`` or start()/stop() in tests."""

    def __init__(self, records: list[MixedModalRecord], host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundHandler", (_Handler,), {"index": build_image_index(records)})
        self._server = ThreadingHTTPServer((host, port), handler)
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockCriticServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def serve_forever(self):
        self._server.serve_forever()


def serve_world(world_path: str | Path, port: int, host: str = "127.0.0.1"):
    """Blocking entry point for the CLI: serve until interrupted."""
    records = read_records(world_path, strict=False)
    server = MockCriticServer(records, host=host, port=port)
    print(f"mock critic serving {len(records)} records on {server.endpoint}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
