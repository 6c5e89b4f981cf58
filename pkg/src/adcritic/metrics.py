"""Saliency and faithfulness metrics on a 0-100 scale.

Text metrics share one tokenizer: lowercase, punctuation split off into
separate tokens, then whitespace split. Pinned behaviors, chosen once so the
oracle tests can freeze expected values:

* BLEU is corpus-level BLEU-4 with uniform 1/4 weights and brevity penalty
  ``exp(1 - r/c)`` when the candidate is shorter; corpus-level precisions are
  unsmoothed. :func:`sentence_bleu` additionally applies +1 smoothing to the
  numerator and denominator for n >= 2.
* ROUGE-L is the LCS-based F1.
* METEOR uses exact then stemmed unigram alignment, ``F = 10PR / (R + 9P)``,
  and penalty ``0.5 * (chunks / matches)**3``; no synonym stage.
* BERTScore is greedy max-cosine token matching in both directions, F1,
  no idf weighting and no baseline rescaling.
* CLIPScore is ``w * max(cos, 0) * 100`` per image (default w = 1), averaged
  over images.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .core import FeatureLabel
from .errors import EmptyCorpus, EmptyInput
from .stemming import stem

EmbedFn = Callable[[str], np.ndarray]


class MetricName(str, Enum):
    BLEU = "bleu"
    METEOR = "meteor"
    ROUGE_L = "rouge_l"
    BERTSCORE = "bertscore"
    CLIP_SCORE = "clip_score"
    SBERT_SIM = "sbert_sim"
    ACCURACY = "accuracy"


@dataclass(frozen=True, slots=True)
class MetricScore:
    name: MetricName
    value: float
    scale: int = 100

    def __post_init__(self):
        if not 0.0 <= self.value <= 100.0:
            raise ValueError(f"{self.name.value} out of range: {self.value}")


_TOKEN = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.casefold())


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------------------
# BLEU


def _clipped_matches(cand: Sequence[str], ref: Sequence[str], n: int) -> tuple[int, int]:
    cand_counts = ngrams(cand, n)
    ref_counts = ngrams(ref, n)
    matched = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
    return matched, max(sum(cand_counts.values()), 0)


def bleu(candidates: Sequence[str], references: Sequence[str], max_n: int = 4) -> MetricScore:
    """Corpus-level BLEU over parallel candidate/reference lists."""
    if not candidates or len(candidates) != len(references):
        raise EmptyCorpus("bleu needs equal-length non-empty corpora")
    cand_tokens = [tokenize(c) for c in candidates]
    ref_tokens = [tokenize(r) for r in references]
    c_len = sum(len(t) for t in cand_tokens)
    r_len = sum(len(t) for t in ref_tokens)
    if c_len == 0:
        return MetricScore(MetricName.BLEU, 0.0)
    log_sum = 0.0
    for n in range(1, max_n + 1):
        matched = total = 0
        for cand, ref in zip(cand_tokens, ref_tokens):
            m, t = _clipped_matches(cand, ref, n)
            matched += m
            total += t
        if matched == 0 or total == 0:
            return MetricScore(MetricName.BLEU, 0.0)
        log_sum += math.log(matched / total) / max_n
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return MetricScore(MetricName.BLEU, min(100.0, bp * math.exp(log_sum) * 100.0))


def sentence_bleu(candidate: str, reference: str, max_n: int = 4) -> float:
    """Single-pair BLEU with +1 smoothing for n >= 2, on the raw 0-1 scale."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        matched, total = _clipped_matches(cand, ref, n)
        if n >= 2:
            matched, total = matched + 1, total + 1
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total) / max_n
    bp = 1.0 if len(cand) > len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return bp * math.exp(log_sum)


# ---------------------------------------------------------------------------
# ROUGE-L


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        row = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                row[j] = prev[j - 1] + 1
            else:
                row[j] = max(prev[j], row[j - 1])
        prev = row
    return prev[len(b)]


def rouge_l(candidate: str, reference: str) -> MetricScore:
    cand = tokenize(candidate)
    ref = tokenize(reference)
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return MetricScore(MetricName.ROUGE_L, 0.0)
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    f1 = 2 * precision * recall / (precision + recall)
    return MetricScore(MetricName.ROUGE_L, f1 * 100.0)


# ---------------------------------------------------------------------------
# METEOR


def _align(cand: list[str], ref: list[str]) -> list[tuple[int, int]]:
    """Exact then stemmed greedy alignment, left to right."""
    matches: list[tuple[int, int]] = []
    used_ref: set[int] = set()
    matched_cand: set[int] = set()
    for stage in (lambda t: t, stem):
        cand_forms = [stage(t) for t in cand]
        ref_forms = [stage(t) for t in ref]
        for i, form in enumerate(cand_forms):
            if i in matched_cand:
                continue
            for j, ref_form in enumerate(ref_forms):
                if j in used_ref or form != ref_form:
                    continue
                matches.append((i, j))
                used_ref.add(j)
                matched_cand.add(i)
                break
    return sorted(matches)


def _chunks(matches: list[tuple[int, int]]) -> int:
    count = 0
    prev: tuple[int, int] | None = None
    for i, j in matches:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            count += 1
        prev = (i, j)
    return count


def meteor(candidate: str, reference: str) -> MetricScore:
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return MetricScore(MetricName.METEOR, 0.0)
    matches = _align(cand, ref)
    m = len(matches)
    if m == 0:
        return MetricScore(MetricName.METEOR, 0.0)
    precision = m / len(cand)
    recall = m / len(ref)
    f_mean = 10 * precision * recall / (recall + 9 * precision)
    penalty = 0.5 * (_chunks(matches) / m) ** 3
    return MetricScore(MetricName.METEOR, f_mean * (1 - penalty) * 100.0)


# ---------------------------------------------------------------------------
# Embedding-based metrics


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.dot(a, b) / denom) if denom else 0.0


def bertscore(candidate: str, reference: str, embed: EmbedFn) -> MetricScore:
    """Greedy max-cosine token matching in both directions, reported as F1."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return MetricScore(MetricName.BERTSCORE, 0.0)
    vectors = {tok: np.asarray(embed(tok), dtype=np.float64) for tok in set(cand) | set(ref)}
    cand_mat = np.stack([vectors[t] for t in cand])
    ref_mat = np.stack([vectors[t] for t in ref])
    norms_c = np.linalg.norm(cand_mat, axis=1, keepdims=True)
    norms_r = np.linalg.norm(ref_mat, axis=1, keepdims=True)
    sim = (cand_mat / norms_c) @ (ref_mat / norms_r).T
    precision = float(np.mean(np.clip(sim.max(axis=1), 0.0, None)))
    recall = float(np.mean(np.clip(sim.max(axis=0), 0.0, None)))
    if precision + recall == 0.0:
        return MetricScore(MetricName.BERTSCORE, 0.0)
    f1 = 2 * precision * recall / (precision + recall)
    return MetricScore(MetricName.BERTSCORE, min(100.0, f1 * 100.0))


def clip_score(
    text: str,
    images: Sequence,
    embed_text: EmbedFn,
    embed_image: Callable[[object], np.ndarray],
    weight: float = 1.0,
) -> MetricScore:
    """Mean over images of ``weight * max(cos(image, text), 0) * 100``."""
    if not len(images):
        raise EmptyInput("clip_score needs at least one image")
    text_vector = np.asarray(embed_text(text), dtype=np.float64)
    scores = [
        weight * max(_cos(np.asarray(embed_image(img), dtype=np.float64), text_vector), 0.0) * 100.0
        for img in images
    ]
    return MetricScore(MetricName.CLIP_SCORE, min(100.0, sum(scores) / len(scores)))


def sbert_similarity(
    features_a: Sequence[str], features_b: Sequence[str], embed: EmbedFn
) -> MetricScore:
    """Cosine between the embeddings of the sorted, '; '-joined feature lists."""
    if not features_a or not features_b:
        raise EmptyInput("sbert_similarity needs two non-empty feature lists")
    joined_a = "; ".join(sorted(features_a))
    joined_b = "; ".join(sorted(features_b))
    value = max(_cos(np.asarray(embed(joined_a)), np.asarray(embed(joined_b))), 0.0)
    return MetricScore(MetricName.SBERT_SIM, min(100.0, value * 100.0))


def classification_accuracy(
    predictions: Sequence[tuple[FeatureLabel, FeatureLabel]],
) -> dict[FeatureLabel, float]:
    """Per gold class accuracy (percent, 2 decimals); absent classes omitted."""
    if not predictions:
        raise EmptyInput("no predictions to score")
    totals: Counter = Counter()
    correct: Counter = Counter()
    for gold, pred in predictions:
        totals[gold] += 1
        if gold == pred:
            correct[gold] += 1
    return {
        label: round(100.0 * correct[label] / totals[label], 2)
        for label in FeatureLabel
        if totals[label]
    }
