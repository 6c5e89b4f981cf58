"""The critic wire protocol shared by every critic backend.

Two endpoints, JSON over HTTP:

    POST /v1/classify  {"image": "<base64>", "feature": "<string>"}
        -> 200 {"label": "salient"|"non-salient"|"hallucinated",
                "rationale": "<string>"}
    POST /v1/salient   {"image": "<base64>"}
        -> 200 {"features": ["...", ...]}

Both sides validate strictly: objects must carry exactly the declared keys
with the declared types. Schema violations raise :class:`ProtocolError` on
the client and produce a 400 on servers.
"""

from __future__ import annotations

import base64
import binascii
import json
from dataclasses import dataclass
from typing import Any

from .core import FeatureLabel
from .errors import ProtocolError

CLASSIFY_PATH = "/v1/classify"
SALIENT_PATH = "/v1/salient"

WIRE_LABELS = {
    "salient": FeatureLabel.SALIENT,
    "non-salient": FeatureLabel.NON_SALIENT,
    "hallucinated": FeatureLabel.HALLUCINATED,
}
LABEL_WIRE = {v: k for k, v in WIRE_LABELS.items()}


@dataclass(frozen=True, slots=True)
class CriticVerdict:
    """One critic classification: a three-way label plus its explanation."""

    label: FeatureLabel
    rationale: str


def _load_object(data: bytes | str, what: str, keys: set[str]) -> dict[str, Any]:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"{what}: not UTF-8") from exc
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"{what}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError(f"{what}: expected object, got {type(obj).__name__}")
    if set(obj) != keys:
        raise ProtocolError(f"{what}: keys must be exactly {sorted(keys)}, got {sorted(obj)}")
    return obj


def parse_classify_response(data: bytes | str) -> CriticVerdict:
    obj = _load_object(data, "classify response", {"label", "rationale"})
    label = obj["label"]
    if not isinstance(label, str) or label not in WIRE_LABELS:
        raise ProtocolError(f"classify response: bad label {label!r}")
    rationale = obj["rationale"]
    if not isinstance(rationale, str):
        raise ProtocolError("classify response: rationale must be a string")
    return CriticVerdict(label=WIRE_LABELS[label], rationale=rationale)


def render_classify_response(verdict: CriticVerdict) -> bytes:
    payload = {"label": LABEL_WIRE[verdict.label], "rationale": verdict.rationale}
    return json.dumps(payload, ensure_ascii=False).encode("utf-8")


def parse_salient_response(data: bytes | str) -> list[str]:
    obj = _load_object(data, "salient response", {"features"})
    features = obj["features"]
    if not isinstance(features, list) or any(not isinstance(f, str) for f in features):
        raise ProtocolError("salient response: features must be a list of strings")
    return features


def render_salient_response(features: list[str]) -> bytes:
    return json.dumps({"features": features}, ensure_ascii=False).encode("utf-8")


def parse_classify_request(data: bytes | str) -> tuple[bytes, str]:
    """Validate a classify request; returns (image bytes, feature string)."""
    obj = _load_object(data, "classify request", {"image", "feature"})
    feature = obj["feature"]
    if not isinstance(feature, str) or not feature.strip():
        raise ProtocolError("classify request: feature must be a non-empty string")
    return _decode_image(obj["image"]), feature


def parse_salient_request(data: bytes | str) -> bytes:
    obj = _load_object(data, "salient request", {"image"})
    return _decode_image(obj["image"])


def _decode_image(value: Any) -> bytes:
    if not isinstance(value, str) or not value:
        raise ProtocolError("image must be a non-empty base64 string")
    try:
        return base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ProtocolError(f"image is not valid base64: {exc}") from exc


def render_classify_request(image: bytes, feature: str) -> bytes:
    payload = {"image": base64.b64encode(image).decode("ascii"), "feature": feature}
    return json.dumps(payload, ensure_ascii=False).encode("utf-8")


def render_salient_request(image: bytes) -> bytes:
    payload = {"image": base64.b64encode(image).decode("ascii")}
    return json.dumps(payload, ensure_ascii=False).encode("utf-8")
