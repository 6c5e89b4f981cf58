"""Model role taxonomy used for backend routing and cache keys."""

from __future__ import annotations

from enum import Enum


class ModelRole(str, Enum):
    GENERATOR_LMM = "generator_lmm"
    EXTRACTOR_LLM = "extractor_llm"
    EDITOR_LLM = "editor_llm"
    VISIBILITY_VLM = "visibility_vlm"
    CRITIC_CLASSIFIER = "critic_classifier"
    CRITIC_LISTER = "critic_lister"
    TEXT_EMBEDDER = "text_embedder"
    IMAGE_EMBEDDER = "image_embedder"


#: Roles whose requests carry a rendered prompt and answer with plain text.
TEXT_ROLES = frozenset(
    {
        ModelRole.GENERATOR_LMM,
        ModelRole.EXTRACTOR_LLM,
        ModelRole.EDITOR_LLM,
        ModelRole.VISIBILITY_VLM,
    }
)
