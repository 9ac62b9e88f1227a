"""
Corpus-level caption metrics: BLEU-4 (pooled counts), ROUGE-L and CIDEr-D.

Inputs are already tokenized; every video has one candidate and at least one
reference.
"""

import logging
import math
from collections import Counter, defaultdict
from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np
from nltk.translate.bleu_score import brevity_penalty, closest_ref_length
from nltk.util import ngrams

from .config import BLEU_MAX_N, CIDER_MAX_N, CIDER_SCALE, CIDER_SIGMA, ROUGE_BETA
from .errors import MetricError
from .models import MetricsReport, VideoDiagnostics

logger = logging.getLogger(__name__)

Tokens = Sequence[str]


class EvalItem(NamedTuple):
    video_id: str
    candidate: List[str]
    references: List[List[str]]


EvalSet = Sequence[EvalItem]


def _check(eval_set: EvalSet) -> None:
    if not eval_set:
        raise MetricError("evaluation set is empty")
    for item in eval_set:
        if not item.references:
            raise MetricError(f"video '{item.video_id}' has no reference caption")


def _ngram_counts(tokens: Tokens, n: int) -> Counter:
    return Counter(ngrams(list(tokens), n)) if len(tokens) >= n else Counter()


# -----------------------------------------------------------------------------
# BLEU-4
# -----------------------------------------------------------------------------
def _clipped_matches(candidate: Tokens, references: Sequence[Tokens], n: int) -> Tuple[int, int]:
    counts = _ngram_counts(candidate, n)
    max_ref: Counter = Counter()
    for reference in references:
        for gram, count in _ngram_counts(reference, n).items():
            max_ref[gram] = max(max_ref[gram], count)
    matches = sum(min(count, max_ref[gram]) for gram, count in counts.items())
    return matches, max(0, len(candidate) - n + 1)


def _bleu_from_counts(matches: Sequence[int], totals: Sequence[int], hyp_len: int, ref_len: int) -> float:
    # No smoothing: any order without matches zeroes the geometric mean
    if any(m == 0 for m in matches) or any(t == 0 for t in totals):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matches, totals)) / len(matches)
    return brevity_penalty(ref_len, hyp_len) * math.exp(log_precision)


def bleu4(eval_set: EvalSet) -> float:
    """Corpus BLEU: clipped n-gram counts pooled over videos, brevity penalty vs closest references."""
    _check(eval_set)
    matches = [0] * BLEU_MAX_N
    totals = [0] * BLEU_MAX_N
    hyp_len = ref_len = 0
    for item in eval_set:
        for n in range(1, BLEU_MAX_N + 1):
            m, t = _clipped_matches(item.candidate, item.references, n)
            matches[n - 1] += m
            totals[n - 1] += t
        hyp_len += len(item.candidate)
        ref_len += closest_ref_length(item.references, len(item.candidate))
    return _bleu_from_counts(matches, totals, hyp_len, ref_len)


def sentence_bleu4(candidate: Tokens, references: Sequence[Tokens]) -> float:
    counts = [_clipped_matches(candidate, references, n) for n in range(1, BLEU_MAX_N + 1)]
    return _bleu_from_counts(
        [m for m, _ in counts],
        [t for _, t in counts],
        len(candidate),
        closest_ref_length(references, len(candidate)),
    )


# -----------------------------------------------------------------------------
# ROUGE-L
# -----------------------------------------------------------------------------
def lcs_length(a: Tokens, b: Tokens) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0]
        for j, token_b in enumerate(b, 1):
            current.append(previous[j - 1] + 1 if token_a == token_b else max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l_sentence(candidate: Tokens, references: Sequence[Tokens], beta: float = ROUGE_BETA) -> float:
    """Best LCS-based F_beta over the references."""
    best = 0.0
    for reference in references:
        if not candidate or not reference:
            continue
        lcs = lcs_length(candidate, reference)
        if lcs == 0:
            continue
        precision = lcs / len(candidate)
        recall = lcs / len(reference)
        score = (1 + beta ** 2) * precision * recall / (recall + beta ** 2 * precision)
        best = max(best, score)
    return best


def rouge_l(eval_set: EvalSet) -> float:
    _check(eval_set)
    return float(np.mean([rouge_l_sentence(item.candidate, item.references) for item in eval_set]))


# -----------------------------------------------------------------------------
# CIDEr-D
# -----------------------------------------------------------------------------
class _TfIdf(NamedTuple):
    vectors: List[Dict[tuple, float]]  # one sparse vector per n-gram order
    norms: List[float]
    length: int


def _document_frequency(eval_set: EvalSet) -> Dict[tuple, float]:
    frequency: Dict[tuple, float] = defaultdict(float)
    for item in eval_set:
        grams = set()
        for reference in item.references:
            for n in range(1, CIDER_MAX_N + 1):
                grams.update(_ngram_counts(reference, n))
        for gram in grams:
            frequency[gram] += 1.0
    return frequency


def _tfidf(tokens: Tokens, frequency: Dict[tuple, float], log_corpus: float) -> _TfIdf:
    vectors = []
    norms = []
    for n in range(1, CIDER_MAX_N + 1):
        vector = {}
        for gram, count in _ngram_counts(tokens, n).items():
            # n-grams unseen in the references count as document frequency 1
            vector[gram] = float(count) * (log_corpus - math.log(max(1.0, frequency.get(gram, 0.0))))
        vectors.append(vector)
        norms.append(math.sqrt(sum(v * v for v in vector.values())))
    return _TfIdf(vectors=vectors, norms=norms, length=len(tokens))


def _cider_similarity(hyp: _TfIdf, ref: _TfIdf, sigma: float) -> np.ndarray:
    delta = float(hyp.length - ref.length)
    penalty = math.exp(-(delta ** 2) / (2 * sigma ** 2))
    values = np.zeros(CIDER_MAX_N)
    for n in range(CIDER_MAX_N):
        # Clipped dot product: hypothesis weights never exceed the reference's
        total = sum(min(w, ref.vectors[n].get(g, 0.0)) * ref.vectors[n].get(g, 0.0) for g, w in hyp.vectors[n].items())
        if hyp.norms[n] != 0 and ref.norms[n] != 0:
            total /= hyp.norms[n] * ref.norms[n]
        values[n] = total * penalty
    return values


def cider_scores(eval_set: EvalSet, sigma: float = CIDER_SIGMA) -> np.ndarray:
    """Per-video CIDEr-D (x10 scaled); idf comes from the references of ``eval_set``."""
    _check(eval_set)
    if len(eval_set) < 2:
        raise MetricError("CIDEr needs at least two videos to estimate document frequencies")
    frequency = _document_frequency(eval_set)
    log_corpus = math.log(float(len(eval_set)))

    scores = []
    for item in eval_set:
        hyp = _tfidf(item.candidate, frequency, log_corpus)
        total = np.zeros(CIDER_MAX_N)
        for reference in item.references:
            total += _cider_similarity(hyp, _tfidf(reference, frequency, log_corpus), sigma)
        scores.append(CIDER_SCALE * float(np.mean(total)) / len(item.references))
    return np.array(scores)


def cider(eval_set: EvalSet) -> float:
    return float(np.mean(cider_scores(eval_set)))


# -----------------------------------------------------------------------------
# Report
# -----------------------------------------------------------------------------
def evaluate(eval_set: EvalSet) -> MetricsReport:
    per_video_cider = cider_scores(eval_set)
    videos = [
        VideoDiagnostics(
            video_id=item.video_id,
            candidate=" ".join(item.candidate),
            bleu4=sentence_bleu4(item.candidate, item.references),
            rouge_l=rouge_l_sentence(item.candidate, item.references),
            cider=float(score),
        )
        for item, score in zip(eval_set, per_video_cider)
    ]
    report = MetricsReport(
        bleu4=bleu4(eval_set),
        rouge_l=rouge_l(eval_set),
        cider=float(np.mean(per_video_cider)),
        videos=videos,
    )
    logger.debug("scored %d videos: %s", len(eval_set), report.presentation)
    return report
