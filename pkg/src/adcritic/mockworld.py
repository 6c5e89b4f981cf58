"""Synthetic corpus generation for the manifest-backed test world.

Records come with image manifests declaring which feature keys are visible
and which of those are salient, so every pipeline stage can be checked
against ground truth without any model backend. Reference texts are built to
resemble real listing copy: they mention the salient features, a couple of
facts that are only in the structured data, and sometimes an invented
amenity (reference advertisements hallucinate too).
"""

from __future__ import annotations

import random
from pathlib import Path

from .core import ImageRef, MixedModalRecord, MockManifest, StructuredData
from .backends import feature_sentence

FEATURE_POOL = (
    "picket fence",
    "wrap-around verandah",
    "bay window",
    "manicured garden",
    "white porch",
    "exposed brick chimney",
    "paved driveway",
    "leafy front yard",
    "french doors",
    "pitched slate roof",
    "stained glass panel",
    "timber deck",
    "pergola",
    "garden shed",
    "established hedges",
    "sandstone steps",
    "double garage door",
    "window shutters",
    "climbing ivy",
    "outdoor fireplace",
)

#: Features that appear in reference texts but only exist in the records.
STRUCT_ONLY_PHRASES = {
    "kg": lambda n: f"{n} bedrooms",
    "table": lambda color: f"{color} color",
}

#: Invented reference-text amenities, never visible and never in the records.
GT_DECOYS = (
    "heated swimming pool",
    "home theatre",
    "sauna room",
    "private jetty",
)

SUBURBS = ("Essendon", "Brunswick", "Northcote", "Coburg", "Preston", "Fairfield")
COLORS = ("mint green", "navy blue", "burnt orange", "charcoal grey")
STYLES = ("pleated", "casual", "sporty", "classic")


def make_record(index: int, rng: random.Random, images_dir: Path | None = None) -> MixedModalRecord:
    record_id = f"r{index:04d}"
    use_table = index % 4 == 3
    if use_table:
        color = rng.choice(COLORS)
        structured = StructuredData.table(
            (
                ("color", color),
                ("style", rng.choice(STYLES)),
                ("hem design", f"{rng.randint(2, 5)} panels"),
            )
        )
        struct_phrase = STRUCT_ONLY_PHRASES["table"](color)
        n_images = 1
    else:
        bedrooms = rng.randint(2, 5)
        structured = StructuredData.kg(
            (
                ("house", "hasBedrooms", str(bedrooms)),
                ("house", "locatedIn", rng.choice(SUBURBS)),
                ("house", "hasLandArea", f"{rng.randint(300, 900)} sqm"),
            )
        )
        struct_phrase = STRUCT_ONLY_PHRASES["kg"](bedrooms)
        n_images = rng.randint(1, 3)

    images = []
    all_salient: list[str] = []
    for img_idx in range(n_images):
        visible = rng.sample(FEATURE_POOL, rng.randint(3, 5))
        salient = visible[: rng.randint(1, min(3, len(visible)))]
        for key in salient:
            if key not in all_salient:
                all_salient.append(key)
        image_id = f"{record_id}-img{img_idx}"
        uri = f"{record_id}_{img_idx}.png"
        if images_dir is not None:
            path = images_dir / uri
            path.write_bytes(f"mock-image:{image_id}".encode("utf-8"))
            uri = str(path)
        images.append(
            ImageRef(
                id=image_id,
                uri=uri,
                manifest=MockManifest(visible=tuple(visible), salient=tuple(salient)),
            )
        )

    gt_parts = ["A rare chance in a loved pocket of the city."]
    gt_parts.extend(feature_sentence(key) for key in all_salient)
    gt_parts.append(feature_sentence(struct_phrase))
    if rng.random() < 0.6:
        gt_parts.append(feature_sentence(rng.choice(GT_DECOYS)))
    return MixedModalRecord(
        record_id=record_id,
        structured=structured,
        images=tuple(images),
        ground_truth_text=" ".join(gt_parts),
    )


def make_corpus(
    n_records: int, seed: int = 0, images_dir: str | Path | None = None
) -> list[MixedModalRecord]:
    """Generate a deterministic synthetic corpus.

    When ``images_dir`` is given, a small placeholder file is written per
    image so HTTP backends (which ship image bytes) can operate on the corpus.
    """
    rng = random.Random(seed)
    directory = None
    if images_dir is not None:
        directory = Path(images_dir)
        directory.mkdir(parents=True, exist_ok=True)
    return [make_record(i, rng, directory) for i in range(n_records)]
