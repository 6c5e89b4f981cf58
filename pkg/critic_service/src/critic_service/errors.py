"""Typed failures for training and serving."""


class CriticServiceError(Exception):
    pass


class DatasetSchemaError(CriticServiceError):
    """A training file does not conform to the published JSONL schema."""


class NonFiniteLoss(CriticServiceError):
    """Training produced a NaN or infinite loss."""


class CheckpointError(CriticServiceError):
    """A checkpoint directory is missing or unloadable."""


class ModelUnavailable(CriticServiceError):
    """The configured base model cannot be constructed in this environment."""
