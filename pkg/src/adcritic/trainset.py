"""Builds the critic's two training corpora from raw records.

Per record, both the reference text and a generated draft go through the
same five steps: extract features, partition them by visibility against the
images, sort the not-visible ones into aligned vs hallucinated, reconcile
saliency between the two sources, and attach one-sentence rationales. The
result is a classification corpus of (image, feature, label, rationale)
rows and a salient-list corpus of (image, features) rows, each split
deterministically into train/val.
"""

from __future__ import annotations

import json
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .core import (
    Feature,
    FeatureLabel,
    FeatureOrigin,
    MixedModalRecord,
    label_feature,
)
from .editor import PostEditor
from .enums import ModelRole
from .errors import AdcriticError, BuildError, EmptyText, RationaleTooLong, SchemaError
from .extraction import (
    extract_features,
    filter_hallucinated,
    partition_visibility,
    reconcile_saliency,
    reconcile_saliency_llm,
    visible_by_image,
)
from .gateway import Gateway
from .prompts import PromptEngine, TemplateId
from .protocol import LABEL_WIRE
from .textutil import first_sentence, is_single_sentence

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class FeatureInventory:
    """Labeled key-sets for one record and one text source."""

    record_id: str
    source: str  # "ground_truth" | "generated"
    features: tuple[Feature, ...]
    visible: frozenset[str]
    not_visible: frozenset[str]
    hallucinated: frozenset[str]
    salient: frozenset[str]
    non_salient: frozenset[str]

    def __post_init__(self):
        keys = {f.key for f in self.features}
        if self.visible | self.not_visible != keys or self.visible & self.not_visible:
            raise SchemaError(f"{self.record_id}/{self.source}: visibility is not a partition")
        if not self.hallucinated <= self.not_visible:
            raise SchemaError(f"{self.record_id}/{self.source}: hallucinated must be not-visible")
        if self.salient & self.non_salient:
            raise SchemaError(f"{self.record_id}/{self.source}: salient overlaps non-salient")
        if not (self.salient | self.non_salient) <= self.visible:
            raise SchemaError(f"{self.record_id}/{self.source}: saliency labels must be visible")


@dataclass(frozen=True, slots=True)
class ClassificationExample:
    image_id: str
    feature: Feature
    label: FeatureLabel
    rationale: str

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "feature": self.feature.display,
            "label": LABEL_WIRE[self.label],
            "rationale": self.rationale,
        }


@dataclass(frozen=True, slots=True)
class SalientListExample:
    image_id: str
    salient_features: tuple[Feature, ...]

    def __post_init__(self):
        if not self.salient_features:
            raise SchemaError("salient-list example needs at least one feature")
        keys = [f.key for f in self.salient_features]
        if len(keys) != len(set(keys)):
            raise SchemaError("salient-list example has duplicate features")

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "salient_features": [f.display for f in self.salient_features],
        }


@dataclass
class TrainsetBuild:
    classification_train: list[ClassificationExample]
    classification_val: list[ClassificationExample]
    salient_train: list[SalientListExample]
    salient_val: list[SalientListExample]
    inventories: list[FeatureInventory]
    failed_records: dict[str, str] = field(default_factory=dict)

    def counts(self) -> dict:
        def class_counts(examples: list[ClassificationExample]) -> dict:
            out = {"total": len(examples)}
            for label in FeatureLabel:
                out[label.value] = sum(1 for e in examples if e.label is label)
            return out

        return {
            "classification": {
                "train": class_counts(self.classification_train),
                "val": class_counts(self.classification_val),
            },
            "salient_list": {
                "train": {"total": len(self.salient_train)},
                "val": {"total": len(self.salient_val)},
            },
            "failed_records": sorted(self.failed_records),
        }

    def write(self, outdir: str | Path) -> list[str]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        names = []
        parts = [
            ("classification.train.jsonl", self.classification_train),
            ("classification.val.jsonl", self.classification_val),
            ("salient.train.jsonl", self.salient_train),
            ("salient.val.jsonl", self.salient_val),
        ]
        for name, examples in parts:
            with (outdir / name).open("w", encoding="utf-8") as fh:
                for example in examples:
                    fh.write(json.dumps(example.to_json(), ensure_ascii=False))
                    fh.write("\n")
            names.append(name)
        with (outdir / "trainset-manifest.json").open("w", encoding="utf-8") as fh:
            json.dump(self.counts(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        names.append("trainset-manifest.json")
        return names


def split_deterministic(examples: list, ratio: float, seed: int, identity) -> tuple[list, list]:
    """Seeded shuffle by digest, then a head/tail cut at the ratio."""
    keyed = sorted(
        examples,
        key=lambda e: hashlib.sha256(f"{seed}|{identity(e)}".encode("utf-8")).hexdigest(),
    )
    n_train = int(ratio * len(keyed) + 0.5)
    return keyed[:n_train], keyed[n_train:]


def split_classification(
    examples: list[ClassificationExample], ratio: float, seed: int
) -> tuple[list[ClassificationExample], list[ClassificationExample]]:
    """Stratified split: each label class lands within one example of the ratio."""
    train: list[ClassificationExample] = []
    val: list[ClassificationExample] = []
    for label in FeatureLabel:
        group = [e for e in examples if e.label is label]
        t, v = split_deterministic(
            group, ratio, seed, lambda e: f"{e.image_id}|{e.feature.key}|{e.label.value}"
        )
        train.extend(t)
        val.extend(v)
    return train, val


class TrainsetBuilder:
    def __init__(
        self,
        gateway: Gateway,
        engine: PromptEngine,
        editor: PostEditor,
        tau_align: float = 0.8,
        tau_sal: float = 0.8,
        seed: int = 0,
        split_ratio: float = 0.87,
        alignment_mode: str = "llm",
        saliency_mode: str = "local",
        max_failure_rate: float = 0.10,
        use_embedding_fallback: bool = False,
    ):
        self.gateway = gateway
        self.engine = engine
        self.editor = editor
        self.tau_align = tau_align
        self.tau_sal = tau_sal
        self.seed = seed
        self.split_ratio = split_ratio
        self.alignment_mode = alignment_mode
        self.saliency_mode = saliency_mode
        self.max_failure_rate = max_failure_rate
        self._embed = gateway.embed_text_fn() if use_embedding_fallback else None

    # -- rationale generation ----------------------------------------------------

    def attach_rationales(
        self, examples: list[ClassificationExample]
    ) -> list[ClassificationExample]:
        """Fill in one-sentence rationales.

        Hallucinated rows get the fixed explanation without a model call.
        A multi-sentence answer triggers one retry, then truncation at the
        first sentence boundary.
        """
        out: list[ClassificationExample] = []
        rationales: dict[tuple[str, str], str] = {}
        for example in examples:
            if example.label is FeatureLabel.HALLUCINATED:
                rationale = label_feature(example.feature, example.label).rationale
            else:
                cache_key = (example.feature.key, example.label.value)
                if cache_key not in rationales:
                    rationales[cache_key] = self._one_sentence_rationale(
                        example.feature, example.label
                    )
                rationale = rationales[cache_key]
            out.append(
                ClassificationExample(
                    image_id=example.image_id,
                    feature=example.feature,
                    label=example.label,
                    rationale=rationale,
                )
            )
        return out

    def _one_sentence_rationale(self, feature: Feature, label: FeatureLabel) -> str:
        prompt = self.engine.render(
            TemplateId.RATIONALE_GEN, {"feature": feature.display, "label": label.value}
        )
        req = self.gateway.request(ModelRole.EXTRACTOR_LLM, prompt=prompt)
        answer = self.gateway.complete(req).strip()
        if not is_single_sentence(answer):
            answer = self.gateway.complete(req, force_refresh=True).strip()
            if not is_single_sentence(answer):
                truncated = first_sentence(answer)
                if not truncated:
                    raise RationaleTooLong(f"no usable rationale for {feature.display!r}")
                answer = truncated
        return answer

    # -- per-record pipeline -------------------------------------------------------

    def _inventory(
        self,
        record: MixedModalRecord,
        source: str,
        features: list[Feature],
        salient_keys: set[str],
        non_salient_keys: set[str],
    ) -> FeatureInventory:
        visible, hidden = partition_visibility(
            self.gateway, self.engine, features, record.images
        )
        hallucinated = filter_hallucinated(
            self.gateway,
            self.engine,
            hidden,
            record.structured,
            mode=self.alignment_mode,
            embed=self._embed,
            tau_align=self.tau_align,
        )
        visible_keys = frozenset(f.key for f in visible)
        return FeatureInventory(
            record_id=record.record_id,
            source=source,
            features=tuple(features),
            visible=visible_keys,
            not_visible=frozenset(f.key for f in hidden),
            hallucinated=frozenset(f.key for f in hallucinated),
            salient=frozenset(salient_keys & visible_keys),
            non_salient=frozenset(non_salient_keys & visible_keys),
        )

    def build_record(
        self, record: MixedModalRecord
    ) -> tuple[list[ClassificationExample], list[SalientListExample], list[FeatureInventory]]:
        """Run the labeling steps for one record (both text sources)."""
        if not record.ground_truth_text:
            raise EmptyText(f"record {record.record_id} has no ground truth text")
        draft = self.editor.generate_draft(
            record, self.editor.generate_key_features(record)
        )

        gt_features = extract_features(
            self.gateway, self.engine, record.ground_truth_text, FeatureOrigin.GROUND_TRUTH_TEXT
        )
        gen_features = extract_features(
            self.gateway, self.engine, draft.text, FeatureOrigin.GENERATED_TEXT, allow_empty=True
        )

        gt_visible, _ = partition_visibility(
            self.gateway, self.engine, gt_features, record.images
        )
        gt_visible_keys = {f.key for f in gt_visible}
        gen_visible_keys: set[str] = set()
        if gen_features:
            gen_vis, _ = partition_visibility(
                self.gateway, self.engine, gen_features, record.images
            )
            gen_visible_keys = {f.key for f in gen_vis}

        if self.saliency_mode == "llm" and gen_features:
            by_key = {f.key: f for f in gen_features}
            salient_keys, non_salient_keys = reconcile_saliency_llm(
                self.gateway,
                self.engine,
                [by_key[k] for k in sorted(gen_visible_keys)],
                [f for f in gt_visible],
                record.structured,
            )
        else:
            salient_keys, non_salient_keys = reconcile_saliency(
                gen_visible_keys,
                gt_visible_keys,
                record.structured,
                embed=self._embed,
                tau_sal=self.tau_sal,
            )

        inventories = [
            self._inventory(record, "ground_truth", gt_features, salient_keys, set()),
            *(
                [self._inventory(record, "generated", gen_features, salient_keys, non_salient_keys)]
                if gen_features
                else []
            ),
        ]

        # Cross-source sanity: a key must never be both hallucinated and visible.
        hallucinated_all = frozenset().union(*(inv.hallucinated for inv in inventories))
        visible_all = frozenset().union(*(inv.visible for inv in inventories))
        if hallucinated_all & visible_all:
            raise SchemaError(
                f"{record.record_id}: conflicting visibility for "
                f"{sorted(hallucinated_all & visible_all)}"
            )

        union: dict[str, Feature] = {}
        for feature in [*gt_features, *gen_features]:
            union.setdefault(feature.key, feature)
        per_image = visible_by_image(
            self.gateway, self.engine, list(union.values()), record.images
        )

        examples: list[ClassificationExample] = []
        seen_pairs: set[tuple[str, str]] = set()

        def add(image_id: str, feature: Feature, label: FeatureLabel):
            if (image_id, feature.key) in seen_pairs:
                return
            seen_pairs.add((image_id, feature.key))
            examples.append(
                ClassificationExample(
                    image_id=image_id, feature=feature, label=label, rationale=""
                )
            )

        for inv in inventories:
            for feature in inv.features:
                if feature.key in inv.hallucinated:
                    for img in record.images:
                        add(img.id, feature, FeatureLabel.HALLUCINATED)
                elif feature.key in inv.salient or feature.key in inv.non_salient:
                    label = (
                        FeatureLabel.SALIENT
                        if feature.key in inv.salient
                        else FeatureLabel.NON_SALIENT
                    )
                    hosts = [
                        img.id
                        for img in record.images
                        if feature.key in per_image.get(img.id, set())
                    ]
                    # A globally visible feature that no single-image check
                    # confirms is paired with every image rather than dropped.
                    for image_id in hosts or [img.id for img in record.images]:
                        add(image_id, feature, label)

        examples = self.attach_rationales(examples)

        salient_examples: list[SalientListExample] = []
        gt_salient_features = [f for f in gt_features if f.key in gt_visible_keys]
        for img in record.images:
            listed = [
                f for f in gt_salient_features if f.key in per_image.get(img.id, set())
            ]
            if listed:
                salient_examples.append(
                    SalientListExample(image_id=img.id, salient_features=tuple(listed))
                )
        return examples, salient_examples, inventories

    # -- corpus build ---------------------------------------------------------------

    def build(self, records: list[MixedModalRecord]) -> TrainsetBuild:
        """Label every record; fail the build when too many records fail."""
        if not records:
            raise BuildError("corpus is empty")
        classification: list[ClassificationExample] = []
        salient: list[SalientListExample] = []
        inventories: list[FeatureInventory] = []
        failed: dict[str, str] = {}
        for record in records:
            try:
                examples, lists, invs = self.build_record(record)
            except AdcriticError as exc:
                log.warning("record %s failed: %s", record.record_id, exc)
                failed[record.record_id] = str(exc)
                continue
            classification.extend(examples)
            salient.extend(lists)
            inventories.extend(invs)
        if len(failed) > self.max_failure_rate * len(records):
            raise BuildError(
                f"{len(failed)}/{len(records)} records failed: {sorted(failed)[:5]}"
            )
        train_c, val_c = split_classification(classification, self.split_ratio, self.seed)
        train_s, val_s = split_deterministic(
            salient,
            self.split_ratio,
            self.seed,
            lambda e: e.image_id + "|" + "|".join(f.key for f in e.salient_features),
        )
        return TrainsetBuild(
            classification_train=train_c,
            classification_val=val_c,
            salient_train=train_s,
            salient_val=val_s,
            inventories=inventories,
            failed_records=failed,
        )
