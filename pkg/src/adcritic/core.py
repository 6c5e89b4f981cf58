"""Shared domain types, feature canonicalization, and record (de)serialization.

A record couples structured data (a knowledge graph or an attribute table)
with one or more image references and, optionally, the raw reference text it
was advertised with. Everything here is an immutable value object: instances
can be shared freely between worker threads.

Record file format (one JSON object per line, UTF-8):

    {"record_id": "...",
     "structured": {"kind": "kg", "triples": [["s", "r", "o"], ...]}
                   or {"kind": "table", "pairs": [["a", "v"], ...]},
     "images": [{"id": "...", "uri": "...", "manifest": {...}?}, ...],
     "ground_truth_text": "..."?}

Unknown keys are rejected in ``strict`` mode and ignored in ``lax`` mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

from .errors import DuplicateImageId, EmptyFeature, SchemaError

#: Default explanation attached to hallucinated features.
HALLUCINATED_RATIONALE = "The feature is not visible in the image."


class StructKind(str, Enum):
    KG = "kg"
    TABLE = "table"


class FeatureOrigin(str, Enum):
    GROUND_TRUTH_TEXT = "ground_truth_text"
    GENERATED_TEXT = "generated_text"
    CRITIC_LIST = "critic_list"


class FeatureLabel(str, Enum):
    SALIENT = "salient"
    NON_SALIENT = "non_salient"
    HALLUCINATED = "hallucinated"


class TextVariant(str, Enum):
    DRAFT = "draft"
    PRUNED = "pruned"
    APPENDED = "appended"
    COMBINED = "combined"


def _clean(value: str) -> str:
    """Trim and collapse internal whitespace runs to single spaces."""
    return " ".join(value.split())


@dataclass(frozen=True, slots=True)
class StructuredData:
    """Ordered structured input: KG triples or table attribute/value pairs.

    Component strings are stored trimmed; empty-after-trim components are
    rejected. Row order is preserved exactly as given.
    """

    kind: StructKind
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not self.rows:
            raise SchemaError("structured data must have at least one row")
        arity = 3 if self.kind is StructKind.KG else 2
        cleaned = []
        for row in self.rows:
            if len(row) != arity:
                raise SchemaError(
                    f"{self.kind.value} row needs {arity} fields, got {len(row)}"
                )
            parts = tuple(part.strip() for part in row)
            if any(not part for part in parts):
                raise SchemaError(f"empty field in structured row {row!r}")
            cleaned.append(parts)
        object.__setattr__(self, "rows", tuple(cleaned))

    @classmethod
    def kg(cls, triples: Iterable[tuple[str, str, str]]) -> "StructuredData":
        return cls(StructKind.KG, tuple(tuple(t) for t in triples))

    @classmethod
    def table(cls, pairs: Iterable[tuple[str, str]]) -> "StructuredData":
        return cls(StructKind.TABLE, tuple(tuple(p) for p in pairs))

    @property
    def triples(self) -> tuple[tuple[str, str, str], ...]:
        assert self.kind is StructKind.KG
        return self.rows  # type: ignore[return-value]

    @property
    def pairs(self) -> tuple[tuple[str, str], ...]:
        assert self.kind is StructKind.TABLE
        return self.rows  # type: ignore[return-value]


@dataclass(frozen=True, slots=True)
class MockManifest:
    """Test-world ground truth: which feature keys an image shows.

    ``visible`` and ``salient`` are ordered tuples of canonical feature keys;
    iteration order is the order they were declared in. ``salient`` must be a
    subset of ``visible``.
    """

    visible: tuple[str, ...]
    salient: tuple[str, ...]

    def __post_init__(self):
        vis = tuple(dict.fromkeys(canonical_key(k) for k in self.visible))
        sal = tuple(dict.fromkeys(canonical_key(k) for k in self.salient))
        missing = [k for k in sal if k not in vis]
        if missing:
            raise SchemaError(f"salient keys not visible: {missing}")
        object.__setattr__(self, "visible", vis)
        object.__setattr__(self, "salient", sal)

    @property
    def visible_set(self) -> frozenset[str]:
        return frozenset(self.visible)

    @property
    def salient_set(self) -> frozenset[str]:
        return frozenset(self.salient)


@dataclass(frozen=True, slots=True)
class ImageRef:
    """Opaque reference to an image; pixels are never decoded here."""

    id: str
    uri: str
    manifest: MockManifest | None = None

    def __post_init__(self):
        if not self.id.strip():
            raise SchemaError("image id must be non-empty")
        if not self.uri.strip():
            raise SchemaError("image uri must be non-empty")


@dataclass(frozen=True, slots=True)
class MixedModalRecord:
    """One sample: structured data + images + optional reference text."""

    record_id: str
    structured: StructuredData
    images: tuple[ImageRef, ...]
    ground_truth_text: str | None = None

    def __post_init__(self):
        if not self.record_id.strip():
            raise SchemaError("record_id must be non-empty")
        if not self.images:
            raise SchemaError("record must have at least one image")
        seen: set[str] = set()
        for img in self.images:
            if img.id in seen:
                raise DuplicateImageId(f"duplicate image id {img.id!r}")
            seen.add(img.id)
        # Table-style records come from single-photo product listings.
        if self.structured.kind is StructKind.TABLE and len(self.images) != 1:
            raise SchemaError("table records carry exactly one image")


@dataclass(frozen=True, slots=True)
class Feature:
    """An atomic text-mentioned attribute.

    ``display`` keeps the surface form (whitespace-normalized); ``key`` is the
    casefolded canonical form used for all matching. Two features refer to the
    same thing iff their keys are byte-equal.
    """

    display: str
    key: str
    origin: FeatureOrigin

    def __post_init__(self):
        if not self.display:
            raise EmptyFeature("feature display must be non-empty")
        if self.key != self.display.casefold():
            raise EmptyFeature(f"key {self.key!r} is not canonical for {self.display!r}")


def canonical_key(raw: str) -> str:
    """Canonical matching key: trim, collapse whitespace, casefold."""
    return _clean(raw).casefold()


def canonicalize_feature(raw: str, origin: FeatureOrigin) -> Feature:
    """Build a :class:`Feature` from a raw surface string.

    Raises :class:`EmptyFeature` when the string is empty after trimming.
    """
    display = _clean(raw)
    if not display:
        raise EmptyFeature(f"empty feature from {raw!r}")
    return Feature(display=display, key=display.casefold(), origin=origin)


@dataclass(frozen=True, slots=True)
class LabeledFeature:
    feature: Feature
    label: FeatureLabel
    rationale: str


def label_feature(
    feature: Feature,
    label: FeatureLabel,
    rationale: str = "",
    hallucinated_rationale: str = HALLUCINATED_RATIONALE,
) -> LabeledFeature:
    """Attach a label, forcing the fixed rationale onto hallucinated features."""
    if label is FeatureLabel.HALLUCINATED:
        rationale = hallucinated_rationale
    return LabeledFeature(feature=feature, label=label, rationale=rationale)


@dataclass(frozen=True, slots=True)
class GeneratedText:
    """A pipeline text output plus the model-call cache keys that produced it."""

    record_id: str
    variant: TextVariant
    text: str
    provenance: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.text.strip():
            raise SchemaError(f"{self.variant.value} text must be non-empty")


# ---------------------------------------------------------------------------
# Record parsing and line-delimited serialization


_RECORD_KEYS = {"record_id", "structured", "images", "ground_truth_text"}
_STRUCT_KEYS = {"kind", "triples", "pairs"}
_IMAGE_KEYS = {"id", "uri", "manifest"}
_MANIFEST_KEYS = {"visible", "salient"}


def _check_unknown(obj: dict, allowed: set[str], where: str, strict: bool):
    if strict:
        unknown = set(obj) - allowed
        if unknown:
            raise SchemaError(f"unknown keys in {where}: {sorted(unknown)}")


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise SchemaError(f"missing {key!r} in {where}")
    return obj[key]


def parse_record(raw: dict, strict: bool = True) -> MixedModalRecord:
    """Parse one record object; field order is preserved.

    ``strict`` rejects unknown keys anywhere in the object; lax mode ignores
    them.
    """
    if not isinstance(raw, dict):
        raise SchemaError(f"record must be an object, got {type(raw).__name__}")
    _check_unknown(raw, _RECORD_KEYS, "record", strict)

    record_id = _require(raw, "record_id", "record")
    if not isinstance(record_id, str) or not record_id.strip():
        raise SchemaError("record_id must be a non-empty string")

    sraw = _require(raw, "structured", "record")
    if not isinstance(sraw, dict):
        raise SchemaError("structured must be an object")
    _check_unknown(sraw, _STRUCT_KEYS, "structured", strict)
    kind = _require(sraw, "kind", "structured")
    if kind == "kg":
        rows = _require(sraw, "triples", "structured")
        structured = StructuredData(StructKind.KG, tuple(tuple(r) for r in rows))
    elif kind == "table":
        rows = _require(sraw, "pairs", "structured")
        structured = StructuredData(StructKind.TABLE, tuple(tuple(r) for r in rows))
    else:
        raise SchemaError(f"structured kind must be 'kg' or 'table', got {kind!r}")

    iraw = _require(raw, "images", "record")
    if not isinstance(iraw, list) or not iraw:
        raise SchemaError("images must be a non-empty list")
    images = []
    for iobj in iraw:
        if not isinstance(iobj, dict):
            raise SchemaError("image entry must be an object")
        _check_unknown(iobj, _IMAGE_KEYS, "image", strict)
        manifest = None
        if iobj.get("manifest") is not None:
            mraw = iobj["manifest"]
            _check_unknown(mraw, _MANIFEST_KEYS, "manifest", strict)
            manifest = MockManifest(
                visible=tuple(mraw.get("visible", ())),
                salient=tuple(mraw.get("salient", ())),
            )
        images.append(
            ImageRef(
                id=str(_require(iobj, "id", "image")),
                uri=str(_require(iobj, "uri", "image")),
                manifest=manifest,
            )
        )

    gt = raw.get("ground_truth_text")
    if gt is not None and not isinstance(gt, str):
        raise SchemaError("ground_truth_text must be a string")

    return MixedModalRecord(
        record_id=record_id,
        structured=structured,
        images=tuple(images),
        ground_truth_text=gt,
    )


def record_to_dict(record: MixedModalRecord) -> dict:
    if record.structured.kind is StructKind.KG:
        structured = {"kind": "kg", "triples": [list(r) for r in record.structured.rows]}
    else:
        structured = {"kind": "table", "pairs": [list(r) for r in record.structured.rows]}
    images = []
    for img in record.images:
        iobj: dict[str, Any] = {"id": img.id, "uri": img.uri}
        if img.manifest is not None:
            iobj["manifest"] = {
                "visible": list(img.manifest.visible),
                "salient": list(img.manifest.salient),
            }
        images.append(iobj)
    out: dict[str, Any] = {
        "record_id": record.record_id,
        "structured": structured,
        "images": images,
    }
    if record.ground_truth_text is not None:
        out["ground_truth_text"] = record.ground_truth_text
    return out


def write_records(path: str | Path, records: Iterable[MixedModalRecord]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record), ensure_ascii=False))
            fh.write("\n")


def read_records(path: str | Path, strict: bool = True) -> list[MixedModalRecord]:
    """Read a line-delimited record file, validating ids are unique."""
    path = Path(path)
    records: list[MixedModalRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            record = parse_record(obj, strict=strict)
            if record.record_id in seen:
                raise SchemaError(f"{path}:{lineno}: duplicate record_id {record.record_id!r}")
            seen.add(record.record_id)
            records.append(record)
    return records
