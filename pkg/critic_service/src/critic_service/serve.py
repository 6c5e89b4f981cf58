"""HTTP serving of a trained critic checkpoint.

Implements the pipeline's critic wire protocol:

    POST /v1/classify {"image": "<base64>", "feature": "..."}
        -> 200 {"label": ..., "rationale": ...}
    POST /v1/salient  {"image": "<base64>"}
        -> 200 {"features": [...]}

Requests are validated strictly (400 on schema errors). The label comes
from constrained scoring over the three canonical labels; the rationale and
the salient list are free generations parsed with the same grammars the
training targets use. A generation that defies its grammar after the
fallbacks yields a 502 with a diagnostic body.

Inference runs on a single model worker behind a lock; requests queue on the
server's connection handling, so ordering across clients is not guaranteed.
"""

from __future__ import annotations

import base64
import binascii
import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import data as D
from .model import pack_image
from .train import load_checkpoint, predict_label

HALLUCINATED_RATIONALE = "The feature is not visible in the image."
_BRACKET_ITEM = re.compile(r"\[([^\[\]]+)\]")
_RATIONALE = re.compile(r"rationale\s*:\s*(.*)", re.IGNORECASE | re.DOTALL)

_DEFAULT_RATIONALES = {
    "salient": "This feature stands out to buyers.",
    "non-salient": "This feature adds little to the listing.",
    "hallucinated": HALLUCINATED_RATIONALE,
}


class SchemaError(ValueError):
    pass


def _parse_request(body: bytes, keys: set[str]) -> dict:
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict) or set(obj) != keys:
        raise SchemaError(f"body must be an object with keys {sorted(keys)}")
    return obj


def _decode_image(value) -> bytes:
    if not isinstance(value, str) or not value:
        raise SchemaError("image must be a non-empty base64 string")
    try:
        return base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise SchemaError(f"image is not valid base64: {exc}") from exc


class CriticModelWorker:
    """Serializes inference over the task checkpoints.

    The two critic tasks train as separate checkpoints; the worker mounts
    either or both and routes each endpoint to its model (falling back to
    the single mounted model when only one is given).
    """

    def __init__(self, classifier_dir=None, lister_dir=None):
        if classifier_dir is None and lister_dir is None:
            raise ValueError("need at least one checkpoint directory")
        self.classifier = self.lister = None
        self.classifier_config = self.lister_config = None
        if classifier_dir is not None:
            self.classifier, self.classifier_config = load_checkpoint(classifier_dir)
        if lister_dir is not None:
            self.lister, self.lister_config = load_checkpoint(lister_dir)
        if self.classifier is None:
            self.classifier, self.classifier_config = self.lister, self.lister_config
        if self.lister is None:
            self.lister, self.lister_config = self.classifier, self.classifier_config
        self._lock = threading.Lock()

    def classify(self, image: bytes, feature: str) -> dict:
        with self._lock:
            label = predict_label(self.classifier, image, feature)
            rationale = self._generate_rationale(image, feature, label)
        return {"label": label, "rationale": rationale}

    def _generate_rationale(self, image: bytes, feature: str, label: str) -> str:
        if label == "hallucinated":
            return HALLUCINATED_RATIONALE
        model = self.classifier
        image_ids, image_mask = pack_image(image, model.dims.max_image_bytes)
        prompt = D.encode_text(D.CLASSIFIER_PROMPT.format(feature=feature))
        generated = D.decode_tokens(
            model.generate(
                image_ids,
                image_mask,
                prompt,
                max_new_tokens=min(self.classifier_config.max_output_tokens, 80),
            )
        )
        match = _RATIONALE.search(generated)
        rationale = match.group(1).strip() if match else ""
        rationale = rationale.splitlines()[0].strip() if rationale else ""
        return rationale or _DEFAULT_RATIONALES[label]

    def salient(self, image: bytes) -> list[str]:
        model = self.lister
        image_ids, image_mask = pack_image(image, model.dims.max_image_bytes)
        prompt = D.encode_text(D.LISTER_PROMPT)
        with self._lock:
            generated = D.decode_tokens(
                model.generate(
                    image_ids,
                    image_mask,
                    prompt,
                    max_new_tokens=min(self.lister_config.max_output_tokens, 120),
                )
            )
        items = [m.group(1).strip() for m in _BRACKET_ITEM.finditer(generated)]
        if not items:
            items = [part.strip(" []") for part in generated.split(";")]
        seen: set[str] = set()
        features = []
        for item in items:
            if item and item not in seen:
                seen.add(item)
                features.append(item)
        return features


class _Handler(BaseHTTPRequestHandler):
    worker: CriticModelWorker

    def log_message(self, fmt, *args):
        pass

    def _reply(self, status: int, payload: dict):
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        body = self.rfile.read(length)
        try:
            if self.path == "/v1/classify":
                obj = _parse_request(body, {"image", "feature"})
                feature = obj["feature"]
                if not isinstance(feature, str) or not feature.strip():
                    raise SchemaError("feature must be a non-empty string")
                image = _decode_image(obj["image"])
                self._reply(200, self.worker.classify(image, feature))
            elif self.path == "/v1/salient":
                obj = _parse_request(body, {"image"})
                image = _decode_image(obj["image"])
                self._reply(200, {"features": self.worker.salient(image)})
            else:
                self._reply(404, {"error": f"unknown path {self.path}"})
        except SchemaError as exc:
            self._reply(400, {"error": str(exc)})
        except Exception as exc:  # noqa: BLE001 - unparsable/failed generation
            self._reply(502, {"error": f"generation failed: {exc}"})


class CriticServer:
    def __init__(self, classifier_dir=None, lister_dir=None, host="127.0.0.1", port=0):
        worker = CriticModelWorker(classifier_dir=classifier_dir, lister_dir=lister_dir)
        handler = type("BoundHandler", (_Handler,), {"worker": worker})
        self._server = ThreadingHTTPServer((host, port), handler)
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
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
