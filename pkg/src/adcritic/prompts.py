"""Prompt templates and the parsers for the model outputs they elicit.

Templates live as UTF-8 files named ``<id>.prompt`` (one per
:class:`TemplateId`), with placeholders written as ``{{name}}``. They are
loaded once and then treated as read-only; rendering and parsing are pure.

The output grammars enforced by template instructions and accepted here:

* feature lists: numbered lines (``1. x``) or bracketed items (``[x]; [y]``)
* verdicts: ``label: <L> | rationale: <R>``
* partitions: labeled sections such as ``VISIBLE:`` / ``NOT VISIBLE:``,
  each holding a feature list
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping

from .core import (
    HALLUCINATED_RATIONALE,
    Feature,
    FeatureLabel,
    FeatureOrigin,
    canonicalize_feature,
)
from .errors import (
    MissingBinding,
    NoListFound,
    OverlapError,
    UnknownTemplate,
    UnparsableVerdict,
)


class TemplateId(str, Enum):
    IMAGE_KEY_FEATURES = "image_key_features"
    DRAFT_GENERATION = "draft_generation"
    EXTRACT_FEATURES = "extract_features"
    VISIBILITY_CHECK = "visibility_check"
    HALLUCINATION_FILTER = "hallucination_filter"
    SALIENCY_COMPARE = "saliency_compare"
    RATIONALE_GEN = "rationale_gen"
    POST_EDIT = "post_edit"
    GT_FAITHFUL_FEATURES = "gt_faithful_features"
    GT_PARAGRAPH = "gt_paragraph"


_PLACEHOLDER = re.compile(r"\{\{\s*(\w+)\s*\}\}")


@dataclass(frozen=True)
class PromptText:
    """A fully rendered prompt.

    ``bindings_digest`` identifies the exact binding map; the raw bindings are
    kept as convenience metadata (the deterministic mock backend reads them)
    but the rendered ``text`` alone defines the prompt's identity on the wire.
    """

    text: str
    template: TemplateId
    bindings_digest: str
    bindings: Mapping[str, str]


def bindings_digest(template: TemplateId, bindings: Mapping[str, str]) -> str:
    payload = json.dumps(
        {"template": template.value, "bindings": dict(sorted(bindings.items()))},
        sort_keys=True,
        ensure_ascii=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class PromptEngine:
    """Loads the template directory once and renders prompts from it."""

    def __init__(self, template_dir: str | Path | None = None):
        self._templates: dict[TemplateId, str] = {}
        if template_dir is None:
            root = resources.files(__package__).joinpath("templates")
            for tid in TemplateId:
                ref = root.joinpath(f"{tid.value}.prompt")
                self._templates[tid] = ref.read_text(encoding="utf-8")
        else:
            base = Path(template_dir)
            for tid in TemplateId:
                path = base / f"{tid.value}.prompt"
                if path.exists():
                    self._templates[tid] = path.read_text(encoding="utf-8")

    def placeholders(self, template: TemplateId) -> set[str]:
        return set(_PLACEHOLDER.findall(self._source(template)))

    def _source(self, template: TemplateId) -> str:
        try:
            return self._templates[template]
        except KeyError:
            raise UnknownTemplate(f"no template file for {template.value!r}") from None

    def render(self, template: TemplateId, bindings: Mapping[str, str]) -> PromptText:
        """Substitute placeholders; every placeholder must be bound.

        Substitution is single-pass: binding values are inserted verbatim and
        never re-scanned for placeholders.
        """
        source = self._source(template)
        missing = sorted(set(_PLACEHOLDER.findall(source)) - set(bindings))
        if missing:
            raise MissingBinding(missing[0])
        text = _PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), source)
        return PromptText(
            text=text,
            template=template,
            bindings_digest=bindings_digest(template, bindings),
            bindings=dict(bindings),
        )


# ---------------------------------------------------------------------------
# Output parsers


_NUMBERED_ITEM = re.compile(r"^\s*\d+\s*[.)]\s*(.*\S)\s*$")
_BRACKET_ITEM = re.compile(r"\[([^\[\]]+)\]")


def list_items(output: str) -> list[str]:
    """Extract raw list items; empty when no grammar matches.

    Numbered lines take precedence; bracketed-semicolon items are the
    fallback. Whitespace-only items are dropped.
    """
    items = []
    for line in output.splitlines():
        m = _NUMBERED_ITEM.match(line)
        if m:
            items.append(m.group(1))
    if not items:
        items = [m.group(1) for m in _BRACKET_ITEM.finditer(output)]
    return [item for item in items if item.strip()]


def parse_feature_list(
    output: str, origin: FeatureOrigin = FeatureOrigin.CRITIC_LIST
) -> list[Feature]:
    """Parse a feature list, deduplicated by key (first occurrence wins)."""
    items = list_items(output)
    if not items:
        raise NoListFound(f"no feature list in {output[:120]!r}")
    seen: set[str] = set()
    features: list[Feature] = []
    for item in items:
        feature = canonicalize_feature(item, origin)
        if feature.key in seen:
            continue
        seen.add(feature.key)
        features.append(feature)
    return features


_LABEL_FORMS = {
    "salient": FeatureLabel.SALIENT,
    "nonsalient": FeatureLabel.NON_SALIENT,
    "hallucinated": FeatureLabel.HALLUCINATED,
}
_VERDICT = re.compile(
    r"label\s*:\s*(?P<label>[^|\n]+?)\s*\|\s*rationale\s*:\s*(?P<rationale>.*)",
    re.IGNORECASE | re.DOTALL,
)


def parse_classification(output: str) -> tuple[FeatureLabel, str]:
    """Parse ``label: <L> | rationale: <R>``.

    The label is matched case-insensitively, tolerating ``-``/``_``/space in
    "non-salient". An empty rationale is only allowed for hallucinated
    verdicts, where the fixed default explanation is substituted.
    """
    m = _VERDICT.search(output)
    if not m:
        raise UnparsableVerdict(f"no verdict in {output[:120]!r}")
    normalized = re.sub(r"[\s_\-]", "", m.group("label")).casefold()
    label = _LABEL_FORMS.get(normalized)
    if label is None:
        raise UnparsableVerdict(f"unknown label {m.group('label')!r}")
    rationale = m.group("rationale").strip()
    if not rationale:
        if label is not FeatureLabel.HALLUCINATED:
            raise UnparsableVerdict(f"empty rationale for {label.value} verdict")
        rationale = HALLUCINATED_RATIONALE
    return label, rationale


def parse_sections(
    output: str, headings: tuple[str, ...], origin: FeatureOrigin = FeatureOrigin.CRITIC_LIST
) -> dict[str, list[Feature]]:
    """Split output into labeled sections, each parsed as a feature list.

    Every heading must occur at least once (``UnparsableVerdict`` otherwise);
    sections may be empty; a key occurring under two different headings raises
    ``OverlapError``. Text before the first heading is ignored.
    """
    normalized = {h.casefold(): h for h in headings}
    # Longest heading first so "NOT VISIBLE" is not swallowed by "VISIBLE".
    ordered = sorted(headings, key=len, reverse=True)
    pattern = re.compile(
        r"^\s*(" + "|".join(re.escape(h) for h in ordered) + r")\s*:\s*$",
        re.IGNORECASE,
    )
    buckets: dict[str, list[str]] = {h: [] for h in headings}
    seen_headings: set[str] = set()
    current: str | None = None
    for line in output.splitlines():
        m = pattern.match(line)
        if m:
            current = normalized[m.group(1).casefold()]
            seen_headings.add(current)
            continue
        if current is not None:
            buckets[current].append(line)
    missing = [h for h in headings if h not in seen_headings]
    if missing:
        raise UnparsableVerdict(f"missing sections {missing} in {output[:120]!r}")

    result: dict[str, list[Feature]] = {}
    owner: dict[str, str] = {}
    for heading in headings:
        features: list[Feature] = []
        keys: set[str] = set()
        for item in list_items("\n".join(buckets[heading])):
            feature = canonicalize_feature(item, origin)
            if feature.key in keys:
                continue
            if feature.key in owner and owner[feature.key] != heading:
                raise OverlapError(
                    f"{feature.key!r} listed under both {owner[feature.key]!r} and {heading!r}"
                )
            owner[feature.key] = heading
            keys.add(feature.key)
            features.append(feature)
        result[heading] = features
    return result


def parse_visibility(
    output: str, origin: FeatureOrigin = FeatureOrigin.CRITIC_LIST
) -> tuple[list[Feature], list[Feature]]:
    """Parse the VISIBLE / NOT VISIBLE partition of a visibility answer."""
    sections = parse_sections(output, ("VISIBLE", "NOT VISIBLE"), origin)
    return sections["VISIBLE"], sections["NOT VISIBLE"]
