"""Backend implementations: the deterministic mock world and HTTP clients.

The mock backend answers every model role from the records themselves: image
manifests decide visibility and saliency, prompt bindings carry the text
inputs, and all randomness is hash-derived, so a mock pipeline run is fully
deterministic and needs no network. The HTTP backends speak a minimal
chat-completion shape for text roles, the critic wire protocol for critic
roles, and a one-field embed endpoint for embedder roles.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

from . import matching, protocol
from .core import HALLUCINATED_RATIONALE, FeatureLabel, ImageRef
from .enums import ModelRole, TEXT_ROLES
from .errors import BackendError, BackendUnavailable
from .gateway import ModelRequest
from .prompts import TemplateId, list_items
from .textutil import split_sentences

#: Invented amenities the flawed mock generator sneaks into drafts. Disjoint
#: from the synthetic-world feature pool, and never structured-aligned.
DECOY_FEATURES = (
    "ducted heating",
    "wine cellar",
    "solar panels",
    "heated towel rail",
    "marble staircase",
    "rooftop terrace",
)

_FEATURE_SENTENCE = re.compile(r"\bIt (?:also )?features ([^.!?]+)[.!?]", re.IGNORECASE)


def hash_unit(*parts: str) -> float:
    """Deterministic hash of the parts mapped into [0, 1)."""
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def hash_unit_vector(seed: str, dim: int) -> np.ndarray:
    """Pseudo-random unit vector derived only from the seed string."""
    digest = hashlib.sha256(seed.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


def feature_sentence(display: str, also: bool = False) -> str:
    return f"It {'also ' if also else ''}features {display}."


def extract_feature_mentions(text: str) -> list[str]:
    """Surface forms mentioned via the mock feature-sentence pattern."""
    return [m.group(1).strip() for m in _FEATURE_SENTENCE.finditer(text)]


def salient_rationale(display: str) -> str:
    return f"Buyers are drawn straight to the {display}."


def non_salient_rationale(display: str) -> str:
    return f"The {display} does little to sell this listing."


@dataclass(frozen=True, slots=True)
class MockFlaws:
    """How imperfect the mock generator is; zeroed for a faithful generator."""

    drop_rate: float = 0.25
    decoys_per_draft: int = 1


def numbered(items: list[str]) -> str:
    if not items:
        return "NONE"
    return "\n".join(f"{i}. {item}" for i, item in enumerate(items, start=1))


def _sections(pairs: list[tuple[str, list[str]]]) -> str:
    lines: list[str] = []
    for heading, items in pairs:
        lines.append(f"{heading}:")
        lines.extend(f"{i}. {item}" for i, item in enumerate(items, start=1))
    return "\n".join(lines)


class MockBackend:
    """Deterministic model stand-in driven by manifests and prompt bindings.

    Scripted responses can be queued per role with :meth:`script`; they are
    consumed FIFO before the world-derived answer is computed.
    """

    def __init__(
        self,
        flaws: MockFlaws | None = None,
        embed_dim: int = 64,
        id: str = "mock:world-v1",
    ):
        self.id = id
        self.flaws = flaws if flaws is not None else MockFlaws()
        self.embed_dim = embed_dim
        self._scripts: dict[ModelRole, deque[bytes]] = {}

    def script(self, role: ModelRole, response: str | bytes) -> None:
        if isinstance(response, str):
            response = response.encode("utf-8")
        self._scripts.setdefault(role, deque()).append(response)

    def invoke(self, req: ModelRequest) -> bytes:
        queue = self._scripts.get(req.role)
        if queue:
            return queue.popleft()
        if req.role in TEXT_ROLES:
            return self._text_answer(req).encode("utf-8")
        if req.role is ModelRole.CRITIC_CLASSIFIER:
            return protocol.render_classify_response(self._classify(req))
        if req.role is ModelRole.CRITIC_LISTER:
            salient = req.images[0].manifest.salient if req.images[0].manifest else ()
            return protocol.render_salient_response(list(salient))
        if req.role is ModelRole.TEXT_EMBEDDER:
            return self._embedding("text:" + (req.text or ""))
        if req.role is ModelRole.IMAGE_EMBEDDER:
            img = req.images[0]
            return self._embedding(f"image:{img.id}:{img.uri}")
        raise BackendError(500, f"mock cannot serve role {req.role.value}")

    # -- per-template text handlers -------------------------------------------

    def _text_answer(self, req: ModelRequest) -> str:
        assert req.prompt is not None
        template = req.prompt.template
        bindings = req.prompt.bindings
        if template is TemplateId.IMAGE_KEY_FEATURES:
            manifest = req.images[0].manifest if req.images else None
            return numbered(list(manifest.visible) if manifest else [])
        if template is TemplateId.DRAFT_GENERATION:
            return self._draft(req)
        if template is TemplateId.EXTRACT_FEATURES:
            return numbered(extract_feature_mentions(bindings.get("sentence", "")))
        if template is TemplateId.VISIBILITY_CHECK:
            return self._visibility(req)
        if template is TemplateId.HALLUCINATION_FILTER:
            return self._hallucination_filter(bindings)
        if template is TemplateId.SALIENCY_COMPARE:
            return self._saliency_compare(bindings)
        if template is TemplateId.RATIONALE_GEN:
            display = bindings.get("feature", "this feature")
            if bindings.get("label") == FeatureLabel.SALIENT.value:
                return salient_rationale(display)
            return non_salient_rationale(display)
        if template is TemplateId.POST_EDIT:
            return self._post_edit(bindings)
        if template is TemplateId.GT_FAITHFUL_FEATURES:
            return self._gt_faithful(req)
        if template is TemplateId.GT_PARAGRAPH:
            features = list_items(bindings.get("features", ""))
            parts = ["A home with plenty to love."]
            parts.extend(feature_sentence(f) for f in features)
            return " ".join(parts)
        raise BackendError(500, f"mock has no handler for template {template.value}")

    def _visible_keys(self, images: tuple[ImageRef, ...]) -> set[str]:
        keys: set[str] = set()
        for img in images:
            if img.manifest is not None:
                keys.update(img.manifest.visible_set)
        return keys

    def _draft(self, req: ModelRequest) -> str:
        assert req.prompt is not None
        bindings = req.prompt.bindings
        features: list[str] = []
        for item in list_items(bindings.get("key_features", "")):
            if item.casefold() not in {f.casefold() for f in features}:
                features.append(item)
        digest = req.prompt.bindings_digest
        kept = [
            f
            for f in features
            if hash_unit(digest, "drop", f.casefold()) >= self.flaws.drop_rate
        ]
        decoy_pool = [d for d in DECOY_FEATURES if d not in {f.casefold() for f in features}]
        decoy_pool.sort(key=lambda d: hash_unit(digest, "decoy", d))
        decoys = decoy_pool[: self.flaws.decoys_per_draft]
        structured = bindings.get("structured", "")
        first_fact = structured.splitlines()[0] if structured else "a fine location"
        parts = [
            "Presenting a standout listing.",
            f"The records note {first_fact.replace('|', 'of').replace(':', ' of')}.",
        ]
        parts.extend(feature_sentence(f) for f in kept)
        parts.extend(feature_sentence(d) for d in decoys)
        return " ".join(parts)

    def _visibility(self, req: ModelRequest) -> str:
        assert req.prompt is not None
        candidates = list_items(req.prompt.bindings.get("features", ""))
        visible_keys = self._visible_keys(req.images)
        visible = [c for c in candidates if c.casefold() in visible_keys]
        hidden = [c for c in candidates if c.casefold() not in visible_keys]
        return _sections([("VISIBLE", visible), ("NOT VISIBLE", hidden)])

    def _hallucination_filter(self, bindings) -> str:
        lines = bindings.get("structured", "").splitlines()
        candidates = list_items(bindings.get("features", ""))
        aligned = [c for c in candidates if matching.aligned_with_lines(c.casefold(), lines)]
        hallucinated = [c for c in candidates if c not in aligned]
        return _sections([("ALIGNED", aligned), ("HALLUCINATED", hallucinated)])

    def _saliency_compare(self, bindings) -> str:
        generated = list_items(bindings.get("generated_features", ""))
        gt_keys = {g.casefold() for g in list_items(bindings.get("ground_truth_features", ""))}
        lines = bindings.get("structured", "").splitlines()
        salient = [
            g
            for g in generated
            if g.casefold() in gt_keys or matching.aligned_with_lines(g.casefold(), lines)
        ]
        non_salient = [g for g in generated if g not in salient]
        return _sections([("SALIENT", salient), ("NOT SALIENT", non_salient)])

    def _post_edit(self, bindings) -> str:
        text = bindings.get("text", "")
        remove = [r.casefold() for r in list_items(bindings.get("remove", ""))]
        add = list_items(bindings.get("add", ""))
        kept = [
            s
            for s in split_sentences(text)
            if not any(r in s.casefold() for r in remove)
        ]
        kept.extend(feature_sentence(a, also=True) for a in add)
        return " ".join(kept) if kept else "This listing speaks for itself."

    def _gt_faithful(self, req: ModelRequest) -> str:
        assert req.prompt is not None
        bindings = req.prompt.bindings
        candidates = list_items(bindings.get("features", ""))
        visible_keys = self._visible_keys(req.images)
        lines = bindings.get("structured", "").splitlines()
        faithful = [
            c
            for c in candidates
            if c.casefold() in visible_keys
            or matching.aligned_with_lines(c.casefold(), lines)
        ]
        return numbered(faithful)

    # -- critic / embeddings ----------------------------------------------------

    def _classify(self, req: ModelRequest) -> protocol.CriticVerdict:
        assert req.feature is not None
        manifest = req.images[0].manifest
        key = req.feature.key
        if manifest is not None and key in manifest.salient_set:
            return protocol.CriticVerdict(
                FeatureLabel.SALIENT, salient_rationale(req.feature.display)
            )
        if manifest is not None and key in manifest.visible_set:
            return protocol.CriticVerdict(
                FeatureLabel.NON_SALIENT, non_salient_rationale(req.feature.display)
            )
        return protocol.CriticVerdict(FeatureLabel.HALLUCINATED, HALLUCINATED_RATIONALE)

    def _embedding(self, seed: str) -> bytes:
        vec = hash_unit_vector(seed, self.embed_dim)
        return json.dumps({"values": [float(x) for x in vec]}).encode("utf-8")


# ---------------------------------------------------------------------------
# HTTP backends


@dataclass(frozen=True, slots=True)
class HttpConfig:
    endpoint: str
    id: str
    auth_env: str | None = None
    timeout_s: float = 30.0
    model: str | None = None


def _auth_headers(cfg: HttpConfig) -> dict[str, str]:
    import os

    headers = {"Content-Type": "application/json"}
    if cfg.auth_env:
        token = os.environ.get(cfg.auth_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
    return headers


def _post(cfg: HttpConfig, url: str, payload: bytes) -> bytes:
    try:
        resp = requests.post(url, data=payload, headers=_auth_headers(cfg), timeout=cfg.timeout_s)
    except requests.RequestException as exc:
        raise BackendUnavailable(f"{url}: {exc}") from exc
    if resp.status_code != 200:
        raise BackendError(resp.status_code, resp.text)
    return resp.content


def read_image_bytes(image: ImageRef) -> bytes:
    try:
        return Path(image.uri).read_bytes()
    except OSError as exc:
        raise BackendUnavailable(f"cannot read image file {image.uri}: {exc}") from exc


class HttpChatBackend:
    """Chat-completion-style client: one user message, optional base64 images."""

    def __init__(self, cfg: HttpConfig):
        self.cfg = cfg
        self.id = cfg.id

    def invoke(self, req: ModelRequest) -> bytes:
        assert req.prompt is not None
        content: list[dict] = [{"type": "text", "text": req.prompt.text}]
        for img in req.images:
            content.append(
                {
                    "type": "image_b64",
                    "data": base64.b64encode(read_image_bytes(img)).decode("ascii"),
                }
            )
        payload = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": content}],
        }
        body = _post(self.cfg, self.cfg.endpoint, json.dumps(payload).encode("utf-8"))
        try:
            text = json.loads(body)["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(200, f"malformed chat completion: {body[:200]!r}") from exc
        return str(text).encode("utf-8")


class CriticHttpBackend:
    """Client for the critic wire protocol (/v1/classify, /v1/salient)."""

    def __init__(self, cfg: HttpConfig):
        self.cfg = cfg
        self.id = cfg.id

    def invoke(self, req: ModelRequest) -> bytes:
        base = self.cfg.endpoint.rstrip("/")
        image = read_image_bytes(req.images[0])
        if req.role is ModelRole.CRITIC_CLASSIFIER:
            assert req.feature is not None
            payload = protocol.render_classify_request(image, req.feature.display)
            return _post(self.cfg, base + protocol.CLASSIFY_PATH, payload)
        if req.role is ModelRole.CRITIC_LISTER:
            payload = protocol.render_salient_request(image)
            return _post(self.cfg, base + protocol.SALIENT_PATH, payload)
        raise BackendError(500, f"critic backend cannot serve role {req.role.value}")


class HttpEmbedBackend:
    """Client for a minimal embedding endpoint returning {"values": [...]}."""

    def __init__(self, cfg: HttpConfig):
        self.cfg = cfg
        self.id = cfg.id

    def invoke(self, req: ModelRequest) -> bytes:
        if req.role is ModelRole.TEXT_EMBEDDER:
            payload = json.dumps({"text": req.text}).encode("utf-8")
        else:
            image = base64.b64encode(read_image_bytes(req.images[0])).decode("ascii")
            payload = json.dumps({"image": image}).encode("utf-8")
        return _post(self.cfg, self.cfg.endpoint, payload)
