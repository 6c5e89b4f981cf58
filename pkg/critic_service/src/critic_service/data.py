"""Loaders for the two critic training corpora and image resolution.

Input schemas (one JSON object per line):

    classification: {"image_id", "feature", "label", "rationale"}
                    label in {"salient", "non-salient", "hallucinated"}
    salient list:   {"image_id", "salient_features": ["...", ...]}

Images are referenced by id only, so training needs a side channel to the
bytes: either a records file (the pipeline's line-delimited record format,
which maps image ids to uris) or a directory of files named ``<image_id>``
(optionally with an extension).

Targets are serialized as free text the model must generate:

    classifier: "label: <L> | rationale: <R>"
    lister:     "[s1]; [s2]; ..."
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import DatasetSchemaError

LABELS = ("salient", "non-salient", "hallucinated")

#: Byte-level vocabulary: 256 raw bytes plus three specials.
BOS, EOS, PAD = 256, 257, 258
VOCAB_SIZE = 259

CLASSIFIER_PROMPT = "feature: {feature}\nanswer:"
LISTER_PROMPT = "list the salient features of this image\nanswer:"


def encode_text(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode_tokens(tokens: list[int]) -> str:
    raw = bytes(t for t in tokens if 0 <= t < 256)
    return raw.decode("utf-8", errors="replace")


def classifier_target(label: str, rationale: str) -> str:
    return f"label: {label} | rationale: {rationale}"


def lister_target(features: list[str]) -> str:
    return "; ".join(f"[{f}]" for f in features)


@dataclass(frozen=True, slots=True)
class ClassifierExample:
    image_id: str
    feature: str
    label: str
    rationale: str

    @property
    def prompt(self) -> str:
        return CLASSIFIER_PROMPT.format(feature=self.feature)

    @property
    def target(self) -> str:
        return classifier_target(self.label, self.rationale)


@dataclass(frozen=True, slots=True)
class ListerExample:
    image_id: str
    features: tuple[str, ...]

    @property
    def prompt(self) -> str:
        return LISTER_PROMPT

    @property
    def target(self) -> str:
        return lister_target(list(self.features))


def _read_jsonl(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DatasetSchemaError(f"dataset file not found: {path}")
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetSchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(row, dict):
                raise DatasetSchemaError(f"{path}:{lineno}: expected an object")
            rows.append(row)
    return rows


def load_classification(path: str | Path) -> list[ClassifierExample]:
    examples = []
    for i, row in enumerate(_read_jsonl(path), start=1):
        try:
            label = row["label"]
            if label not in LABELS:
                raise DatasetSchemaError(f"line {i}: unknown label {label!r}")
            examples.append(
                ClassifierExample(
                    image_id=str(row["image_id"]),
                    feature=str(row["feature"]),
                    label=label,
                    rationale=str(row.get("rationale", "")),
                )
            )
        except KeyError as exc:
            raise DatasetSchemaError(f"line {i}: missing key {exc}") from exc
    if not examples:
        raise DatasetSchemaError(f"empty classification dataset: {path}")
    return examples


def load_salient(path: str | Path) -> list[ListerExample]:
    examples = []
    for i, row in enumerate(_read_jsonl(path), start=1):
        try:
            features = row["salient_features"]
        except KeyError as exc:
            raise DatasetSchemaError(f"line {i}: missing key {exc}") from exc
        if (
            not isinstance(features, list)
            or not features
            or any(not isinstance(f, str) for f in features)
        ):
            raise DatasetSchemaError(f"line {i}: salient_features must be non-empty strings")
        examples.append(
            ListerExample(image_id=str(row["image_id"]), features=tuple(features))
        )
    if not examples:
        raise DatasetSchemaError(f"empty salient-list dataset: {path}")
    return examples


class ImageResolver:
    """Maps image ids to raw bytes via a records file and/or a directory."""

    def __init__(self, records_file: str | Path | None = None, images_dir: str | Path | None = None):
        self._uris: dict[str, str] = {}
        self.images_dir = Path(images_dir) if images_dir else None
        if records_file is not None:
            for row in _read_jsonl(records_file):
                for img in row.get("images", []):
                    if isinstance(img, dict) and "id" in img and "uri" in img:
                        self._uris[str(img["id"])] = str(img["uri"])

    def resolve(self, image_id: str) -> bytes:
        uri = self._uris.get(image_id)
        if uri is not None:
            path = Path(uri)
            if path.exists():
                return path.read_bytes()
        if self.images_dir is not None:
            for candidate in (self.images_dir / image_id, *self.images_dir.glob(f"{image_id}.*")):
                if candidate.exists():
                    return candidate.read_bytes()
        raise DatasetSchemaError(f"cannot resolve image bytes for id {image_id!r}")


def dataset_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
