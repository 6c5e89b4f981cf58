"""adcritic: mixed-modal advertising text with critic-driven post-editing.

The pipeline generates draft advertisements from structured data plus
images, asks a vision critic which mentioned features are salient,
non-salient, or hallucinated, prunes and appends accordingly, builds the
critic's training corpora from raw records, and evaluates saliency and
faithfulness with standard text metrics.
"""

from .cache import CacheEntry, FileCache
from .core import (
    HALLUCINATED_RATIONALE,
    Feature,
    FeatureLabel,
    FeatureOrigin,
    GeneratedText,
    ImageRef,
    LabeledFeature,
    MixedModalRecord,
    MockManifest,
    StructKind,
    StructuredData,
    TextVariant,
    canonical_key,
    canonicalize_feature,
    label_feature,
    parse_record,
    read_records,
    record_to_dict,
    write_records,
)
from .editor import CriticFeedback, EditVariant, PostEditor
from .enums import ModelRole, TEXT_ROLES
from .evaluate import EvalReport, EvalRow, FaithfulGT, preprocess_ground_truth, score_texts
from .gateway import (
    EmbeddingVector,
    Gateway,
    ModelRequest,
    canonical_request_bytes,
    request_cache_key,
)
from .linearize import LinearizedText, delinearize, linearize
from .prompts import (
    PromptEngine,
    PromptText,
    TemplateId,
    parse_classification,
    parse_feature_list,
    parse_visibility,
)
from .protocol import CriticVerdict
from .trainset import (
    ClassificationExample,
    FeatureInventory,
    SalientListExample,
    TrainsetBuild,
    TrainsetBuilder,
)

__version__ = "0.1.0"

__all__ = [
    "CacheEntry",
    "CriticFeedback",
    "CriticVerdict",
    "ClassificationExample",
    "EditVariant",
    "EmbeddingVector",
    "EvalReport",
    "EvalRow",
    "FaithfulGT",
    "Feature",
    "FeatureInventory",
    "FeatureLabel",
    "FeatureOrigin",
    "FileCache",
    "Gateway",
    "GeneratedText",
    "HALLUCINATED_RATIONALE",
    "ImageRef",
    "LabeledFeature",
    "LinearizedText",
    "MixedModalRecord",
    "MockManifest",
    "ModelRequest",
    "ModelRole",
    "PostEditor",
    "PromptEngine",
    "PromptText",
    "SalientListExample",
    "StructKind",
    "StructuredData",
    "TEXT_ROLES",
    "TemplateId",
    "TextVariant",
    "TrainsetBuild",
    "TrainsetBuilder",
    "canonical_key",
    "canonical_request_bytes",
    "canonicalize_feature",
    "delinearize",
    "label_feature",
    "linearize",
    "parse_classification",
    "parse_feature_list",
    "parse_record",
    "parse_visibility",
    "preprocess_ground_truth",
    "read_records",
    "record_to_dict",
    "request_cache_key",
    "score_texts",
    "write_records",
]
