"""Feature extraction, visibility partitioning, and label assignment.

These are the shared steps behind training-set construction, critic
feedback, and ground-truth preprocessing: pull features out of text sentence
by sentence, split them into visible / not visible against the images, sort
the not-visible ones into structured-data-aligned vs hallucinated, and
reconcile generated-text features against reference features for saliency.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable, Sequence

from . import matching
from .core import Feature, FeatureOrigin, ImageRef, StructuredData
from .enums import ModelRole
from .errors import (
    AdcriticError,
    BackendError,
    EmptyText,
    ExtractionFailed,
    NoListFound,
    UnparsableVerdict,
)
from .gateway import Gateway
from .linearize import linearize
from .prompts import PromptEngine, TemplateId, parse_feature_list, parse_sections
from .textutil import split_sentences

log = logging.getLogger(__name__)

EmbedFn = Callable[[str], "object"]


def bracket_join(items: Iterable[str]) -> str:
    """Render items in the bracketed-semicolon list grammar."""
    return "; ".join(f"[{item}]" for item in items)


def extract_features(
    gateway: Gateway,
    engine: PromptEngine,
    text: str,
    origin: FeatureOrigin,
    allow_empty: bool = False,
) -> list[Feature]:
    """Extract image features from text, one extractor call per sentence.

    Per-sentence failures are collected; the operation fails only when every
    sentence fails. A sentence that mentions no image feature answers NONE,
    which surfaces here as a (collected) ``NoListFound``. With
    ``allow_empty``, a text whose sentences all come up empty yields ``[]``
    instead of failing, which is how degenerate drafts are tolerated.
    """
    if not text or not text.strip():
        raise EmptyText("cannot extract features from empty text")
    sentences = split_sentences(text)
    errors: list[Exception] = []
    seen: set[str] = set()
    features: list[Feature] = []
    for sentence in sentences:
        try:
            prompt = engine.render(TemplateId.EXTRACT_FEATURES, {"sentence": sentence})
            answer = gateway.complete(gateway.request(ModelRole.EXTRACTOR_LLM, prompt=prompt))
            for feature in parse_feature_list(answer, origin):
                if feature.key not in seen:
                    seen.add(feature.key)
                    features.append(feature)
        except AdcriticError as exc:
            errors.append(exc)
    if not features and len(errors) == len(sentences):
        if allow_empty and all(isinstance(e, NoListFound) for e in errors):
            return []
        raise ExtractionFailed(errors)
    return features


def partition_visibility(
    gateway: Gateway,
    engine: PromptEngine,
    features: Sequence[Feature],
    images: Sequence[ImageRef],
) -> tuple[list[Feature], list[Feature]]:
    """Split features into (visible, not visible) against the image set.

    One call carries all images; if the backend rejects that, the check falls
    back to one call per image and a feature counts as visible when any image
    shows it. The returned partition is validated to cover the input exactly.
    """
    if not features:
        raise EmptyText("partition_visibility needs at least one feature")
    if not images:
        raise EmptyText("partition_visibility needs at least one image")
    try:
        visible_keys = _visibility_call(gateway, engine, features, images)
    except BackendError:
        visible_keys = set()
        for img in images:
            visible_keys |= _visibility_call(gateway, engine, features, [img])
    visible = [f for f in features if f.key in visible_keys]
    hidden = [f for f in features if f.key not in visible_keys]
    return visible, hidden


def _visibility_call(
    gateway: Gateway,
    engine: PromptEngine,
    features: Sequence[Feature],
    images: Sequence[ImageRef],
) -> set[str]:
    prompt = engine.render(
        TemplateId.VISIBILITY_CHECK,
        {"features": bracket_join(f.display for f in features)},
    )
    answer = gateway.complete(
        gateway.request(ModelRole.VISIBILITY_VLM, prompt=prompt, images=images)
    )
    sections = parse_sections(answer, ("VISIBLE", "NOT VISIBLE"))
    answered = {f.key for group in sections.values() for f in group}
    wanted = {f.key for f in features}
    missing = wanted - answered
    if missing:
        raise UnparsableVerdict(f"visibility answer dropped features: {sorted(missing)}")
    return {f.key for f in sections["VISIBLE"]} & wanted


def visible_by_image(
    gateway: Gateway,
    engine: PromptEngine,
    features: Sequence[Feature],
    images: Sequence[ImageRef],
) -> dict[str, set[str]]:
    """Per-image visibility map (image id -> visible feature keys)."""
    result: dict[str, set[str]] = {}
    for img in images:
        result[img.id] = _visibility_call(gateway, engine, features, [img])
    return result


def filter_hallucinated(
    gateway: Gateway,
    engine: PromptEngine,
    not_visible: Sequence[Feature],
    structured: StructuredData,
    mode: str = "llm",
    embed: matching.EmbedFn | None = None,
    tau_align: float = 0.8,
) -> list[Feature]:
    """Not-visible features that the structured data cannot account for.

    ``llm`` mode asks the alignment prompt; ``fallback`` mode applies the
    deterministic matcher (key substring of a linearized line, token subset
    of a line, or embedding cosine >= tau_align).
    """
    if not not_visible:
        return []
    lines = linearize(structured).lines
    if mode == "fallback":
        return [
            f
            for f in not_visible
            if not matching.aligned_with_lines(f.key, lines, embed, tau_align)
        ]
    prompt = engine.render(
        TemplateId.HALLUCINATION_FILTER,
        {
            "structured": linearize(structured).text,
            "features": bracket_join(f.display for f in not_visible),
        },
    )
    answer = gateway.complete(gateway.request(ModelRole.EXTRACTOR_LLM, prompt=prompt))
    sections = parse_sections(answer, ("ALIGNED", "HALLUCINATED"))
    answered = {f.key for group in sections.values() for f in group}
    wanted = {f.key for f in not_visible}
    if wanted - answered:
        raise UnparsableVerdict(
            f"alignment answer dropped features: {sorted(wanted - answered)}"
        )
    hallucinated_keys = {f.key for f in sections["HALLUCINATED"]}
    return [f for f in not_visible if f.key in hallucinated_keys]


def reconcile_saliency(
    visible_gen: Iterable[str],
    visible_gt: Iterable[str],
    structured: StructuredData,
    embed: matching.EmbedFn | None = None,
    tau_sal: float = 0.8,
) -> tuple[set[str], set[str]]:
    """Assign saliency: reference-visible keys are salient; generated-visible
    keys are salient when they match a reference key or the structured data;
    the rest of the generated-visible keys are non-salient.
    """
    gen = set(visible_gen)
    gt = set(visible_gt)
    lines = linearize(structured).lines
    component_keys = matching.structured_component_keys(structured)
    salient = set(gt)
    for key in gen:
        if (
            matching.match_any(key, gt, embed, tau_sal)
            or key in component_keys
            or matching.aligned_with_lines(key, lines, embed, tau_sal)
        ):
            salient.add(key)
    return salient, gen - salient


def reconcile_saliency_llm(
    gateway: Gateway,
    engine: PromptEngine,
    visible_gen: Sequence[Feature],
    visible_gt: Sequence[Feature],
    structured: StructuredData,
) -> tuple[set[str], set[str]]:
    """Model-judged variant of :func:`reconcile_saliency`.

    The comparison prompt partitions the generated-visible features; the
    reference-visible keys are added to the salient side unconditionally.
    """
    gt_keys = {f.key for f in visible_gt}
    if not visible_gen:
        return set(gt_keys), set()
    prompt = engine.render(
        TemplateId.SALIENCY_COMPARE,
        {
            "generated_features": bracket_join(f.display for f in visible_gen),
            "ground_truth_features": bracket_join(f.display for f in visible_gt),
            "structured": linearize(structured).text,
        },
    )
    answer = gateway.complete(gateway.request(ModelRole.EXTRACTOR_LLM, prompt=prompt))
    sections = parse_sections(answer, ("SALIENT", "NOT SALIENT"))
    answered = {f.key for group in sections.values() for f in group}
    wanted = {f.key for f in visible_gen}
    if wanted - answered:
        raise UnparsableVerdict(
            f"saliency answer dropped features: {sorted(wanted - answered)}"
        )
    salient = gt_keys | {f.key for f in sections["SALIENT"] if f.key in wanted}
    return salient, wanted - salient
