"""Draft generation, critic feedback, and the two-step prune/append edit.

The editing contract: feedback is computed once from the draft; ``pruned``
removes the erroneous (non-salient or hallucinated) features, ``appended``
adds the missing salient features to the raw draft, and ``combined`` applies
the append after the prune, in that order, reusing the same feedback.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

from . import matching
from .core import (
    HALLUCINATED_RATIONALE,
    Feature,
    FeatureLabel,
    FeatureOrigin,
    GeneratedText,
    LabeledFeature,
    MixedModalRecord,
    TextVariant,
    label_feature,
)
from .enums import ModelRole
from .errors import AdcriticError, EmptyGeneration, SchemaError
from .extraction import bracket_join, extract_features
from .gateway import Gateway
from .linearize import linearize
from .prompts import PromptEngine, TemplateId, parse_feature_list
from .protocol import CriticVerdict

log = logging.getLogger(__name__)


class EditVariant(str, Enum):
    PRUNED = "pruned"
    APPENDED = "appended"
    COMBINED = "combined"


@dataclass(frozen=True, slots=True)
class CriticFeedback:
    """What the critic wants changed about one draft."""

    record_id: str
    erroneous: tuple[LabeledFeature, ...]
    missing_salient: tuple[Feature, ...]
    per_feature_verdicts: Mapping[str, CriticVerdict]

    def __post_init__(self):
        for lf in self.erroneous:
            if lf.label is FeatureLabel.SALIENT:
                raise SchemaError("salient features cannot be erroneous")

    @property
    def empty(self) -> bool:
        return not self.erroneous and not self.missing_salient


class PostEditor:
    def __init__(
        self,
        gateway: Gateway,
        engine: PromptEngine,
        tau_sal: float = 0.8,
        hallucinated_rationale: str = HALLUCINATED_RATIONALE,
        use_embedding_match: bool = False,
    ):
        self.gateway = gateway
        self.engine = engine
        self.tau_sal = tau_sal
        self.hallucinated_rationale = hallucinated_rationale
        self._embed = gateway.embed_text_fn() if use_embedding_match else None
        self._local = threading.local()

    @property
    def last_feedback(self) -> CriticFeedback | None:
        """Feedback from this thread's most recent :meth:`run_all` call."""
        return getattr(self._local, "feedback", None)

    @last_feedback.setter
    def last_feedback(self, feedback: CriticFeedback | None):
        self._local.feedback = feedback

    # -- generation -----------------------------------------------------------

    def generate_key_features(self, record: MixedModalRecord) -> dict[str, list[Feature]]:
        """Ask the generator for the key features of each image in turn.

        An image whose answer stays unusable after a retry contributes an
        empty list (with a warning) rather than failing the record.
        """
        result: dict[str, list[Feature]] = {}
        prompt = self.engine.render(TemplateId.IMAGE_KEY_FEATURES, {})
        for img in record.images:
            req = self.gateway.request(ModelRole.GENERATOR_LMM, prompt=prompt, images=(img,))
            features: list[Feature] = []
            try:
                features = parse_feature_list(
                    self.gateway.complete(req), FeatureOrigin.GENERATED_TEXT
                )
            except AdcriticError:
                try:
                    features = parse_feature_list(
                        self.gateway.complete(req, force_refresh=True),
                        FeatureOrigin.GENERATED_TEXT,
                    )
                except AdcriticError as exc:
                    log.warning("key features failed for image %s: %s", img.id, exc)
            result[img.id] = features
        return result

    def generate_draft(
        self, record: MixedModalRecord, key_features: Mapping[str, list[Feature]]
    ) -> GeneratedText:
        """One generator call over the linearized data and all key features."""
        mark = self.gateway.journal_mark()
        lines = []
        for image_id, features in key_features.items():
            listed = bracket_join(f.display for f in features) if features else "none observed"
            lines.append(f"Image {image_id}: {listed}")
        prompt = self.engine.render(
            TemplateId.DRAFT_GENERATION,
            {
                "structured": linearize(record.structured).text,
                "key_features": "\n".join(lines) if lines else "none observed",
            },
        )
        req = self.gateway.request(ModelRole.GENERATOR_LMM, prompt=prompt)
        text = self.gateway.complete(req)
        if not text.strip():
            text = self.gateway.complete(req, force_refresh=True)
            if not text.strip():
                raise EmptyGeneration(f"empty draft for record {record.record_id}")
        return GeneratedText(
            record_id=record.record_id,
            variant=TextVariant.DRAFT,
            text=text,
            provenance=self.gateway.journal_since(mark),
        )

    # -- feedback ---------------------------------------------------------------

    def collect_feedback(
        self, draft: GeneratedText | str, record: MixedModalRecord
    ) -> CriticFeedback:
        """Extract the draft's image features, classify each one against the
        record's images, and diff the critic's salient lists against the
        draft to find what is missing.
        """
        text = draft.text if isinstance(draft, GeneratedText) else draft
        if not text.strip():
            raise SchemaError("cannot collect feedback on empty draft")
        features = extract_features(
            self.gateway,
            self.engine,
            text,
            FeatureOrigin.GENERATED_TEXT,
            allow_empty=True,
        )
        verdicts: dict[str, CriticVerdict] = {}
        erroneous: list[LabeledFeature] = []
        for feature in features:
            verdict = self.gateway.classify_feature(record.images, feature)
            verdicts[feature.key] = verdict
            if verdict.label is not FeatureLabel.SALIENT:
                erroneous.append(
                    label_feature(
                        feature, verdict.label, verdict.rationale, self.hallucinated_rationale
                    )
                )

        critic_salient: list[Feature] = []
        seen: set[str] = set()
        for img in record.images:
            for feature in self.gateway.list_salient(img):
                if feature.key not in seen:
                    seen.add(feature.key)
                    critic_salient.append(feature)
        draft_keys = [f.key for f in features]
        missing = [
            f
            for f in critic_salient
            if not matching.match_any(f.key, draft_keys, self._embed, self.tau_sal)
        ]
        return CriticFeedback(
            record_id=record.record_id,
            erroneous=tuple(erroneous),
            missing_salient=tuple(missing),
            per_feature_verdicts=verdicts,
        )

    # -- editing ------------------------------------------------------------------

    def _edit(self, text: str, remove: str, add: str) -> str:
        prompt = self.engine.render(
            TemplateId.POST_EDIT, {"text": text, "remove": remove, "add": add}
        )
        req = self.gateway.request(ModelRole.EDITOR_LLM, prompt=prompt)
        edited = self.gateway.complete(req)
        if not edited.strip():
            edited = self.gateway.complete(req, force_refresh=True)
            if not edited.strip():
                raise EmptyGeneration("editor returned empty text")
        return edited

    def prune(self, text: str, erroneous: tuple[LabeledFeature, ...]) -> str:
        """Remove erroneous features; no model call when there is nothing to do."""
        if not erroneous:
            return text
        return self._edit(text, bracket_join(lf.feature.display for lf in erroneous), "")

    def append(self, text: str, missing: tuple[Feature, ...]) -> str:
        """Append missing salient features; identity when there are none."""
        if not missing:
            return text
        return self._edit(text, "", bracket_join(f.display for f in missing))

    # -- variants ---------------------------------------------------------------

    def run(self, record: MixedModalRecord, variant: TextVariant | str) -> GeneratedText:
        variant = TextVariant(variant)
        return self.run_all(record, only=variant)[variant]

    def run_all(
        self, record: MixedModalRecord, only: TextVariant | None = None
    ) -> dict[TextVariant, GeneratedText]:
        """Produce the requested variant(s), computing feedback exactly once."""
        mark = self.gateway.journal_mark()
        draft = self.generate_draft(record, self.generate_key_features(record))
        out = {TextVariant.DRAFT: draft}
        if only is TextVariant.DRAFT:
            return out
        feedback = self.collect_feedback(draft, record)
        self.last_feedback = feedback

        def finish(variant: TextVariant, text: str) -> GeneratedText:
            return GeneratedText(
                record_id=record.record_id,
                variant=variant,
                text=text,
                provenance=self.gateway.journal_since(mark),
            )

        if only in (None, TextVariant.PRUNED, TextVariant.COMBINED):
            pruned = self.prune(draft.text, feedback.erroneous)
            out[TextVariant.PRUNED] = finish(TextVariant.PRUNED, pruned)
        if only in (None, TextVariant.APPENDED):
            appended = self.append(draft.text, feedback.missing_salient)
            out[TextVariant.APPENDED] = finish(TextVariant.APPENDED, appended)
        if only in (None, TextVariant.COMBINED):
            combined = self.append(out[TextVariant.PRUNED].text, feedback.missing_salient)
            out[TextVariant.COMBINED] = finish(TextVariant.COMBINED, combined)
        return out
