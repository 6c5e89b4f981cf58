"""Deterministic feature matching against structured data and key sets.

Model-free alignment used as the fallback judge (and by the mock world): a
feature aligns with a structured line when its key is a substring of the
line, when every token of the key occurs among the line's tokens (camelCase
relation names are split so ``hasBedrooms`` yields ``has`` and ``bedrooms``),
or when the embedding cosine clears the configured threshold.
"""

from __future__ import annotations

import re
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import StructuredData, canonical_key

EmbedFn = Callable[[str], "np.ndarray"]

_CAMEL_BOUNDARY = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")
_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def tokens(text: str) -> set[str]:
    spaced = _CAMEL_BOUNDARY.sub(" ", text)
    return {t.casefold() for t in _TOKEN.findall(spaced)}


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.dot(a, b) / denom)


def aligned_with_lines(
    key: str,
    lines: Sequence[str],
    embed: EmbedFn | None = None,
    tau: float = 0.8,
) -> bool:
    """True when the feature key matches any structured line."""
    key_tokens = tokens(key)
    for line in lines:
        if key and key in line.casefold():
            return True
        if key_tokens and key_tokens <= tokens(line):
            return True
    if embed is not None:
        key_vec = embed(key)
        for line in lines:
            if cosine(key_vec, embed(line)) >= tau:
                return True
    return False


def keys_match(
    a: str,
    b: str,
    embed: EmbedFn | None = None,
    tau: float = 0.8,
) -> bool:
    """Exact key equality, with an embedding-similarity escape hatch."""
    if a == b:
        return True
    if embed is not None:
        return cosine(embed(a), embed(b)) >= tau
    return False


def match_any(
    key: str,
    candidates: Iterable[str],
    embed: EmbedFn | None = None,
    tau: float = 0.8,
) -> bool:
    return any(keys_match(key, c, embed, tau) for c in candidates)


def structured_component_keys(structured: StructuredData) -> set[str]:
    """Canonical keys of every structured component string."""
    return {canonical_key(part) for row in structured.rows for part in row}
