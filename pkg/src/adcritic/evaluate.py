"""Ground-truth preprocessing and report assembly.

Reference texts hallucinate too, so before scoring anything against them the
harness extracts their features, keeps only those visible in the images or
backed by the structured data, and regenerates a clean paragraph from the
survivors. Scored rows are assembled into a report table: one row per text
variant, per-column maxima bolded within each backbone group.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import matching, metrics
from .core import Feature, FeatureOrigin, MixedModalRecord
from .enums import ModelRole
from .errors import EmptyGeneration, EmptyText, NoListFound
from .extraction import bracket_join, extract_features
from .gateway import Gateway
from .linearize import linearize
from .prompts import PromptEngine, TemplateId, parse_feature_list

VARIANT_ORDER = ("baseline", "draft", "pruned", "appended", "combined")


@dataclass(frozen=True, slots=True)
class FaithfulGT:
    """A reference text reduced to its defensible features."""

    record_id: str
    faithful_features: tuple[Feature, ...]
    paragraph: str

    def __post_init__(self):
        if not self.paragraph.strip():
            raise EmptyText("faithful paragraph must be non-empty")


def preprocess_ground_truth(
    gateway: Gateway,
    engine: PromptEngine,
    record: MixedModalRecord,
    tau_align: float = 0.8,
) -> FaithfulGT:
    """Extract reference features, drop the unsupported ones, re-write."""
    if not record.ground_truth_text:
        raise EmptyText(f"record {record.record_id} has no ground truth text")
    features = extract_features(
        gateway, engine, record.ground_truth_text, FeatureOrigin.GROUND_TRUTH_TEXT
    )
    linear = linearize(record.structured)
    prompt = engine.render(
        TemplateId.GT_FAITHFUL_FEATURES,
        {
            "features": bracket_join(f.display for f in features),
            "structured": linear.text,
        },
    )
    answer = gateway.complete(
        gateway.request(ModelRole.VISIBILITY_VLM, prompt=prompt, images=record.images)
    )
    try:
        kept_keys = {f.key for f in parse_feature_list(answer)}
    except NoListFound:
        kept_keys = set()
    faithful = [
        f
        for f in features
        if f.key in kept_keys or matching.aligned_with_lines(f.key, linear.lines)
    ]

    para_prompt = engine.render(
        TemplateId.GT_PARAGRAPH, {"features": bracket_join(f.display for f in faithful)}
    )
    req = gateway.request(ModelRole.EDITOR_LLM, prompt=para_prompt)
    paragraph = gateway.complete(req)
    if not paragraph.strip():
        paragraph = gateway.complete(req, force_refresh=True)
        if not paragraph.strip():
            raise EmptyGeneration(f"empty faithful paragraph for {record.record_id}")
    return FaithfulGT(
        record_id=record.record_id,
        faithful_features=tuple(faithful),
        paragraph=paragraph,
    )


# ---------------------------------------------------------------------------
# Corpus scoring


def score_texts(
    pairs: Sequence[tuple[str, str]],
    records: Sequence[MixedModalRecord],
    gateway: Gateway,
    clip_weight: float = 1.0,
) -> dict[str, float]:
    """Metric map for one variant: (candidate, reference) pairs plus images.

    BLEU is corpus-level; METEOR, ROUGE-L, and BERTScore are averaged over
    records; CLIPScore embeds each candidate against its record's images.
    """
    candidates = [c for c, _ in pairs]
    references = [r for _, r in pairs]
    embed_text = gateway.embed_text_fn()

    def embed_image(img) -> np.ndarray:
        return gateway.embed_image(img).as_array()

    values = {
        metrics.MetricName.BLEU.value: metrics.bleu(candidates, references).value,
        metrics.MetricName.METEOR.value: _mean(
            metrics.meteor(c, r).value for c, r in pairs
        ),
        metrics.MetricName.ROUGE_L.value: _mean(
            metrics.rouge_l(c, r).value for c, r in pairs
        ),
        metrics.MetricName.BERTSCORE.value: _mean(
            metrics.bertscore(c, r, embed_text).value for c, r in pairs
        ),
        metrics.MetricName.CLIP_SCORE.value: _mean(
            metrics.clip_score(
                cand, record.images, embed_text, embed_image, clip_weight
            ).value
            for cand, record in zip(candidates, records)
        ),
    }
    return values


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


# ---------------------------------------------------------------------------
# Report


@dataclass(frozen=True, slots=True)
class EvalRow:
    variant: str
    metrics: dict[str, float | None]
    group: str | None = None

    @property
    def label(self) -> str:
        return f"{self.group}-{self.variant}" if self.group else self.variant


@dataclass
class EvalReport:
    rows: list[EvalRow]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        def order(row: EvalRow):
            try:
                variant_rank = VARIANT_ORDER.index(row.variant)
            except ValueError:
                variant_rank = len(VARIANT_ORDER)
            return (row.group or "", variant_rank, row.variant)

        self.rows = sorted(self.rows, key=order)
        names = self.metric_names()
        self.rows = [
            EvalRow(
                variant=row.variant,
                group=row.group,
                metrics={name: row.metrics.get(name) for name in names},
            )
            for row in self.rows
        ]

    def metric_names(self) -> list[str]:
        names: list[str] = []
        for row in self.rows:
            for name in row.metrics:
                if name not in names:
                    names.append(name)
        return names

    def bold_cells(self) -> set[tuple[str, str]]:
        """(row label, metric) pairs holding a per-group column maximum."""
        bold: set[tuple[str, str]] = set()
        groups: dict[str | None, list[EvalRow]] = {}
        for row in self.rows:
            groups.setdefault(row.group, []).append(row)
        for rows in groups.values():
            for name in self.metric_names():
                values = [r.metrics.get(name) for r in rows]
                present = [v for v in values if v is not None]
                if not present:
                    continue
                best = max(present)
                for row in rows:
                    if row.metrics.get(name) == best:
                        bold.add((row.label, name))
        return bold

    def render_table(self) -> str:
        names = self.metric_names()
        bold = self.bold_cells()
        header = ["model", *names]
        lines = [header]
        for row in self.rows:
            cells = [row.label]
            for name in names:
                value = row.metrics.get(name)
                text = "n/a" if value is None else f"{value:.2f}"
                if (row.label, name) in bold and value is not None:
                    text = f"**{text}**"
                cells.append(text)
            lines.append(cells)
        widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
        rendered = []
        for i, line in enumerate(lines):
            rendered.append("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip())
            if i == 0:
                rendered.append("  ".join("-" * w for w in widths))
        return "\n".join(rendered) + "\n"

    def row_json(self, row: EvalRow) -> str:
        return json.dumps(
            {
                "variant": row.variant,
                "group": row.group,
                "metrics": row.metrics,
                "metadata": self.metadata,
            },
            ensure_ascii=False,
            sort_keys=True,
        )

    def write(self, outdir: str | Path, corpus_id: str) -> list[str]:
        """Per-variant machine-readable rows plus one aligned text table."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        names = []
        for row in self.rows:
            name = f"{corpus_id}.{row.label}.report"
            (outdir / name).write_text(self.row_json(row) + "\n", encoding="utf-8")
            names.append(name)
        table_name = f"{corpus_id}.report.txt"
        (outdir / table_name).write_text(self.render_table(), encoding="utf-8")
        names.append(table_name)
        return names
