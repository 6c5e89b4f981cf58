"""Uniform client layer over every model role, with content-addressed caching.

All model traffic flows through :class:`Gateway`. Requests are canonically
serialized; the cache key is the digest of backend id, role, and those
canonical bytes, so keys are stable across processes and platforms. With a
warm cache a whole pipeline run performs zero backend calls and is
byte-deterministic.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from . import protocol
from .cache import FileCache
from .core import Feature, FeatureLabel, FeatureOrigin, ImageRef, canonicalize_feature
from .errors import BackendError, BackendUnavailable, ProtocolError, SchemaError
from .prompts import PromptText, parse_classification, parse_feature_list
from .enums import ModelRole, TEXT_ROLES


@dataclass(frozen=True, slots=True)
class ModelRequest:
    """Cache-keyed envelope for one model call."""

    role: ModelRole
    backend_id: str
    prompt: PromptText | None = None
    images: tuple[ImageRef, ...] = ()
    feature: Feature | None = None
    text: str | None = None

    def __post_init__(self):
        if self.role in TEXT_ROLES and self.prompt is None:
            raise SchemaError(f"{self.role.value} requests need a prompt")
        if self.role is ModelRole.CRITIC_CLASSIFIER:
            if not self.images or self.feature is None:
                raise SchemaError("critic_classifier requests need images and a feature")
        if self.role is ModelRole.CRITIC_LISTER and len(self.images) != 1:
            raise SchemaError("critic_lister requests carry exactly one image")
        if self.role is ModelRole.TEXT_EMBEDDER and not self.text:
            raise SchemaError("text_embedder requests need non-empty text")
        if self.role is ModelRole.IMAGE_EMBEDDER and len(self.images) != 1:
            raise SchemaError("image_embedder requests carry exactly one image")


def canonical_request_bytes(req: ModelRequest) -> bytes:
    """Canonical serialization, defined to the byte for stable cache keys."""
    prompt = None
    if req.prompt is not None:
        prompt = {"template": req.prompt.template.value, "text": req.prompt.text}
    images = []
    for img in req.images:
        manifest = None
        if img.manifest is not None:
            manifest = {
                "visible": list(img.manifest.visible),
                "salient": list(img.manifest.salient),
            }
        images.append({"id": img.id, "uri": img.uri, "manifest": manifest})
    feature = None
    if req.feature is not None:
        feature = {
            "display": req.feature.display,
            "key": req.feature.key,
            "origin": req.feature.origin.value,
        }
    payload = {
        "backend_id": req.backend_id,
        "role": req.role.value,
        "prompt": prompt,
        "images": images,
        "feature": feature,
        "text": req.text,
    }
    return json.dumps(payload, sort_keys=True, ensure_ascii=True, separators=(",", ":")).encode(
        "utf-8"
    )


def request_cache_key(req: ModelRequest) -> str:
    digest = hashlib.sha256()
    digest.update(req.backend_id.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(req.role.value.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(canonical_request_bytes(req))
    return digest.hexdigest()


@dataclass(frozen=True, slots=True)
class EmbeddingVector:
    """Unit-norm embedding; ``values`` has fixed length ``dim``."""

    values: tuple[float, ...]

    def __post_init__(self):
        norm = float(np.linalg.norm(self.values))
        if not self.values or abs(norm - 1.0) > 1e-6:
            raise SchemaError(f"embedding must be unit L2 norm, got {norm}")

    @property
    def dim(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    @classmethod
    def from_raw(cls, values: Sequence[float]) -> "EmbeddingVector":
        arr = np.asarray(values, dtype=np.float64)
        norm = float(np.linalg.norm(arr))
        if arr.size == 0 or norm == 0.0 or not np.isfinite(norm):
            raise ProtocolError("embedding backend returned a degenerate vector")
        return cls(values=tuple(float(x) for x in arr / norm))


class Backend(Protocol):
    """A model provider for one or more roles."""

    id: str

    def invoke(self, req: ModelRequest) -> bytes: ...


@dataclass
class GatewayStats:
    hits: int = 0
    misses: int = 0
    backend_calls: int = 0

    def as_dict(self) -> dict:
        return {"hits": self.hits, "misses": self.misses, "backend_calls": self.backend_calls}


# Aggregation precedence for multi-image classification: a feature visible
# anywhere is not hallucinated, and salient anywhere wins outright.
_PRECEDENCE = {
    FeatureLabel.SALIENT: 2,
    FeatureLabel.NON_SALIENT: 1,
    FeatureLabel.HALLUCINATED: 0,
}


class Gateway:
    """Routes requests to per-role backends through the shared cache.

    Safe for concurrent use: the cache does atomic per-key writes and the
    counters/journal take an internal lock.
    """

    def __init__(
        self,
        backends: Mapping[ModelRole, Backend],
        cache: FileCache,
        max_retries: int = 1,
        role_retries: Mapping[ModelRole, int] | None = None,
    ):
        self._backends = dict(backends)
        self.cache = cache
        self.max_retries = max_retries
        self.role_retries = dict(role_retries or {})
        self.stats = GatewayStats()
        self._lock = threading.Lock()
        self._local = threading.local()

    # -- journal ------------------------------------------------------------
    # The journal is thread-local so a worker's provenance never interleaves
    # with calls made by other workers.

    def _journal(self) -> list[str]:
        if not hasattr(self._local, "journal"):
            self._local.journal = []
        return self._local.journal

    def journal_mark(self) -> int:
        return len(self._journal())

    def journal_since(self, mark: int) -> tuple[str, ...]:
        return tuple(self._journal()[mark:])

    # -- request construction ------------------------------------------------

    def backend_for(self, role: ModelRole) -> Backend:
        backend = self._backends.get(role)
        if backend is None:
            raise BackendUnavailable(f"no backend configured for role {role.value}")
        return backend

    def request(
        self,
        role: ModelRole,
        prompt: PromptText | None = None,
        images: Sequence[ImageRef] = (),
        feature: Feature | None = None,
        text: str | None = None,
    ) -> ModelRequest:
        return ModelRequest(
            role=role,
            backend_id=self.backend_for(role).id,
            prompt=prompt,
            images=tuple(images),
            feature=feature,
            text=text,
        )

    # -- core invoke ----------------------------------------------------------

    def invoke(self, req: ModelRequest, force_refresh: bool = False) -> bytes:
        """Serve from cache, or call the backend and store atomically."""
        key = request_cache_key(req)
        if not force_refresh:
            cached = self.cache.get(key)
            if cached is not None:
                with self._lock:
                    self.stats.hits += 1
                self._journal().append(key)
                return cached
        backend = self.backend_for(req.role)
        attempts = self.role_retries.get(req.role, self.max_retries) + 1
        last_exc: Exception | None = None
        response: bytes | None = None
        for _ in range(attempts):
            try:
                with self._lock:
                    self.stats.backend_calls += 1
                response = backend.invoke(req)
                break
            except (BackendUnavailable, BackendError) as exc:
                last_exc = exc
        if response is None:
            assert last_exc is not None
            raise last_exc
        self.cache.put(key, canonical_request_bytes(req), response)
        with self._lock:
            self.stats.misses += 1
        self._journal().append(key)
        return response

    # -- role-specific entry points -------------------------------------------

    def complete(self, req: ModelRequest, force_refresh: bool = False) -> str:
        """Text completion for the prompt-carrying roles."""
        if req.role not in TEXT_ROLES:
            raise SchemaError(f"complete() only serves text roles, not {req.role.value}")
        return self.invoke(req, force_refresh=force_refresh).decode("utf-8")

    def classify_feature(self, images: Sequence[ImageRef], feature: Feature) -> protocol.CriticVerdict:
        """Classify against each image, then aggregate by label precedence.

        The winning rationale comes from the smallest image id achieving the
        winning label, so the result is independent of image order.
        """
        if not images:
            raise SchemaError("classify_feature needs at least one image")
        verdicts: list[tuple[str, protocol.CriticVerdict]] = []
        for img in images:
            req = self.request(ModelRole.CRITIC_CLASSIFIER, images=(img,), feature=feature)
            verdicts.append((img.id, self._parse_verdict(self.invoke(req))))
        best = max(_PRECEDENCE[v.label] for _, v in verdicts)
        winners = sorted(
            (img_id, v) for img_id, v in verdicts if _PRECEDENCE[v.label] == best
        )
        return winners[0][1]

    @staticmethod
    def _parse_verdict(data: bytes) -> protocol.CriticVerdict:
        """Wire JSON first, text verdict grammar as the fixture fallback."""
        try:
            return protocol.parse_classify_response(data)
        except ProtocolError:
            label, rationale = parse_classification(data.decode("utf-8", "replace"))
            return protocol.CriticVerdict(label=label, rationale=rationale)

    def list_salient(self, image: ImageRef) -> list[Feature]:
        """Salient features of one image, deduplicated by key.

        Accepts the wire JSON of the critic protocol, or a plain feature list
        in the numbered/bracketed grammar (scripted fixtures use the latter).
        """
        req = self.request(ModelRole.CRITIC_LISTER, images=(image,))
        data = self.invoke(req)
        try:
            raw = protocol.parse_salient_response(data)
        except ProtocolError:
            raw = [
                f.display
                for f in parse_feature_list(data.decode("utf-8", "replace"))
            ]
        seen: set[str] = set()
        features: list[Feature] = []
        for item in raw:
            if not item.strip():
                continue
            feature = canonicalize_feature(item, FeatureOrigin.CRITIC_LIST)
            if feature.key in seen:
                continue
            seen.add(feature.key)
            features.append(feature)
        return features

    def _parse_embedding(self, data: bytes) -> EmbeddingVector:
        try:
            obj = json.loads(data.decode("utf-8"))
            values = obj["values"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"bad embedding payload: {exc}") from exc
        return EmbeddingVector.from_raw(values)

    def embed_text(self, text: str) -> EmbeddingVector:
        if not text:
            raise SchemaError("embed_text needs non-empty input")
        req = self.request(ModelRole.TEXT_EMBEDDER, text=text)
        return self._parse_embedding(self.invoke(req))

    def embed_image(self, image: ImageRef) -> EmbeddingVector:
        req = self.request(ModelRole.IMAGE_EMBEDDER, images=(image,))
        return self._parse_embedding(self.invoke(req))

    def embed_text_fn(self):
        """Text-embedding callable for the metric layer (returns ndarrays)."""
        return lambda s: self.embed_text(s).as_array()
