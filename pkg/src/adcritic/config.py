"""Declarative pipeline configuration (one JSON file).

Secrets never live in the file: HTTP backends name the environment variable
holding their token. Every run records the digest of its canonical config,
so output trees can be tied back to the exact settings that produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .backends import (
    CriticHttpBackend,
    HttpChatBackend,
    HttpConfig,
    HttpEmbedBackend,
    MockBackend,
    MockFlaws,
)
from .cache import FileCache
from .core import HALLUCINATED_RATIONALE
from .enums import ModelRole
from .errors import ConfigError
from .gateway import Gateway

_BACKEND_KINDS = {"mock", "http_chat", "critic_http", "http_embed"}


@dataclass(frozen=True, slots=True)
class BackendSpec:
    kind: str = "mock"
    endpoint: str = ""
    auth_env: str | None = None
    timeout_s: float = 30.0
    max_retries: int | None = None  # falls back to the global retry count
    model: str | None = None
    id: str | None = None

    def backend_id(self) -> str:
        if self.id:
            return self.id
        tail = self.model or self.endpoint or "world-v1"
        return f"{self.kind}:{tail}"


@dataclass
class PipelineConfig:
    corpus: Path
    cache_dir: Path
    output_dir: Path
    templates_dir: Path | None = None
    backends: dict[ModelRole, BackendSpec] = field(default_factory=dict)
    tau_align: float = 0.8
    tau_sal: float = 0.8
    seed: int = 0
    split_ratio: float = 0.87
    retries: int = 1
    schema_mode: str = "strict"
    workers: int = 4
    clip_weight: float = 1.0
    alignment_mode: str = "llm"
    saliency_mode: str = "local"
    hallucinated_rationale: str = HALLUCINATED_RATIONALE
    mock_flaws: MockFlaws = field(default_factory=MockFlaws)
    embed_dim: int = 64
    trainer: dict[str, Any] = field(default_factory=dict)
    raw: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.tau_align <= 1.0 and 0.0 <= self.tau_sal <= 1.0):
            raise ConfigError("thresholds must lie in [0, 1]")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.schema_mode not in ("strict", "lax"):
            raise ConfigError("schema_mode must be 'strict' or 'lax'")
        if self.alignment_mode not in ("llm", "fallback"):
            raise ConfigError("alignment_mode must be 'llm' or 'fallback'")
        if self.saliency_mode not in ("local", "llm"):
            raise ConfigError("saliency_mode must be 'local' or 'llm'")
        if self.workers < 1 or self.retries < 0:
            raise ConfigError("workers must be >= 1 and retries >= 0")

    # -- loading -------------------------------------------------------------

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw, base_dir=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "PipelineConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be an object")
        paths = raw.get("paths")
        if not isinstance(paths, dict):
            raise ConfigError("config needs a 'paths' object")

        def _path(key: str, required: bool = True) -> Path | None:
            value = paths.get(key)
            if value is None:
                if required:
                    raise ConfigError(f"paths.{key} is required")
                return None
            p = Path(value)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            return p

        backends: dict[ModelRole, BackendSpec] = {}
        raw_backends = raw.get("backends", {})
        default_spec = _backend_spec(raw_backends.get("default", {"kind": "mock"}))
        for role in ModelRole:
            spec_raw = raw_backends.get(role.value)
            backends[role] = _backend_spec(spec_raw) if spec_raw is not None else default_spec

        thresholds = raw.get("thresholds", {})
        mock_raw = raw.get("mock", {})
        flaws = MockFlaws(
            drop_rate=float(mock_raw.get("drop_rate", 0.25)),
            decoys_per_draft=int(mock_raw.get("decoys_per_draft", 1)),
        )
        try:
            return cls(
                corpus=_path("corpus"),
                cache_dir=_path("cache_dir"),
                output_dir=_path("output_dir"),
                templates_dir=_path("templates_dir", required=False),
                backends=backends,
                tau_align=float(thresholds.get("tau_align", 0.8)),
                tau_sal=float(thresholds.get("tau_sal", 0.8)),
                seed=int(raw.get("seed", 0)),
                split_ratio=float(raw.get("split_ratio", 0.87)),
                retries=int(raw.get("retries", 1)),
                schema_mode=str(raw.get("schema_mode", "strict")),
                workers=int(raw.get("workers", 4)),
                clip_weight=float(raw.get("clip_weight", 1.0)),
                alignment_mode=str(raw.get("alignment_mode", "llm")),
                saliency_mode=str(raw.get("saliency_mode", "local")),
                hallucinated_rationale=str(
                    raw.get("hallucinated_rationale", HALLUCINATED_RATIONALE)
                ),
                mock_flaws=flaws,
                embed_dim=int(mock_raw.get("embed_dim", 64)),
                trainer=dict(raw.get("trainer", {})),
                raw=raw,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config value: {exc}") from exc

    # -- derived objects --------------------------------------------------------

    def digest(self) -> str:
        canonical = json.dumps(
            self.raw, sort_keys=True, ensure_ascii=True, separators=(",", ":")
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def build_gateway(self) -> Gateway:
        cache = FileCache(self.cache_dir)
        shared_mock: MockBackend | None = None
        backends = {}
        for role, spec in self.backends.items():
            if spec.kind == "mock":
                if shared_mock is None or shared_mock.id != spec.backend_id():
                    shared_mock = MockBackend(
                        flaws=self.mock_flaws,
                        embed_dim=self.embed_dim,
                        id=spec.backend_id(),
                    )
                backends[role] = shared_mock
            elif spec.kind == "http_chat":
                backends[role] = HttpChatBackend(_http_config(spec))
            elif spec.kind == "critic_http":
                backends[role] = CriticHttpBackend(_http_config(spec))
            elif spec.kind == "http_embed":
                backends[role] = HttpEmbedBackend(_http_config(spec))
            else:
                raise ConfigError(f"unknown backend kind {spec.kind!r}")
        role_retries = {
            role: spec.max_retries
            for role, spec in self.backends.items()
            if spec.max_retries is not None
        }
        return Gateway(backends, cache, max_retries=self.retries, role_retries=role_retries)


def _backend_spec(raw: dict) -> BackendSpec:
    if not isinstance(raw, dict):
        raise ConfigError("backend spec must be an object")
    kind = raw.get("kind", "mock")
    if kind not in _BACKEND_KINDS:
        raise ConfigError(f"backend kind must be one of {sorted(_BACKEND_KINDS)}")
    if kind != "mock" and not raw.get("endpoint"):
        raise ConfigError(f"backend kind {kind!r} needs an endpoint")
    retries = raw.get("max_retries")
    return BackendSpec(
        kind=kind,
        endpoint=str(raw.get("endpoint", "")),
        auth_env=raw.get("auth_env"),
        timeout_s=float(raw.get("timeout_s", 30.0)),
        max_retries=int(retries) if retries is not None else None,
        model=raw.get("model"),
        id=raw.get("id"),
    )


def _http_config(spec: BackendSpec) -> HttpConfig:
    return HttpConfig(
        endpoint=spec.endpoint,
        id=spec.backend_id(),
        auth_env=spec.auth_env,
        timeout_s=spec.timeout_s,
        model=spec.model,
    )
