"""Synthetic training fixtures written in the published file schemas.

These helpers build everything from scratch (image files, records file,
trainset JSONL) so the tests depend only on the documented interfaces.
"""

from __future__ import annotations

import json
from pathlib import Path

FEATURES = (
    "picket fence",
    "verandah",
    "bay window",
    "garden",
    "white porch",
    "shed",
    "pergola",
    "timber deck",
    "slate roof",
    "front yard",
)
LABELS = ("salient", "non-salient", "hallucinated")


def write_image(images_dir: Path, image_id: str) -> Path:
    images_dir.mkdir(parents=True, exist_ok=True)
    path = images_dir / image_id
    path.write_bytes(f"toy-image:{image_id}:".encode("utf-8") * 4)
    return path


def write_jsonl(path: Path, rows: list[dict]) -> Path:
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    return path


def classifier_set(root: Path, n: int = 50, n_images: int = 10) -> tuple[Path, Path, list[dict]]:
    """n classification rows cycling over n_images images and the 3 labels."""
    images_dir = root / "images"
    rows = []
    for i in range(n):
        image_id = f"img{i % n_images}"
        write_image(images_dir, image_id)
        rows.append(
            {
                "image_id": image_id,
                "feature": FEATURES[i % len(FEATURES)],
                "label": LABELS[i % len(LABELS)],
                "rationale": "A short reason why.",
            }
        )
    return write_jsonl(root / "classification.jsonl", rows), images_dir, rows


def memorization_set(root: Path) -> tuple[Path, Path, list[dict]]:
    """10 distinct (image, feature) pairs, one per image."""
    images_dir = root / "memo-images"
    rows = []
    for i in range(10):
        image_id = f"memo{i}"
        write_image(images_dir, image_id)
        rows.append(
            {
                "image_id": image_id,
                "feature": FEATURES[i],
                "label": LABELS[i % len(LABELS)],
                "rationale": "Why.",
            }
        )
    return write_jsonl(root / "memorization.jsonl", rows), images_dir, rows


def lister_set(root: Path, n: int = 5) -> tuple[Path, Path, list[dict]]:
    images_dir = root / "lister-images"
    lists = [
        ["picket fence", "verandah"],
        ["bay window"],
        ["garden", "white porch"],
        ["timber deck", "slate roof"],
        ["pergola"],
        ["front yard", "shed"],
    ][:n]
    rows = []
    for i, feats in enumerate(lists):
        image_id = f"list{i}"
        write_image(images_dir, image_id)
        rows.append({"image_id": image_id, "salient_features": feats})
    return write_jsonl(root / "salient.jsonl", rows), images_dir, rows


def records_file(root: Path, images_dir: Path, image_ids: list[str]) -> Path:
    """A pipeline-format records file mapping the image ids to their files."""
    rows = []
    for i, image_id in enumerate(image_ids):
        rows.append(
            {
                "record_id": f"r{i}",
                "structured": {"kind": "kg", "triples": [["house", "hasImage", image_id]]},
                "images": [{"id": image_id, "uri": str(images_dir / image_id)}],
            }
        )
    return write_jsonl(root / "records.jsonl", rows)
