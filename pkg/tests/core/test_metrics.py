# tests/core/test_metrics.py

import json
import math
from pathlib import Path

import numpy as np
import pytest

from core.errors import MetricError
from core.metrics import (
    EvalItem,
    bleu4,
    cider,
    cider_scores,
    evaluate,
    lcs_length,
    rouge_l,
    rouge_l_sentence,
    sentence_bleu4,
)

TOY_SET = Path(__file__).resolve().parents[2] / "data" / "toy_eval_set.json"


def _item(video_id, candidate, *references):
    return EvalItem(video_id=video_id, candidate=candidate.split(), references=[r.split() for r in references])


@pytest.fixture
def toy_set():
    with open(TOY_SET, encoding="utf-8") as handle:
        raw = json.load(handle)
    return [_item(entry["video_id"], entry["candidate"], *entry["references"]) for entry in raw]


# -----------------------------------------------------------------------------
# Golden values on the toy set
# -----------------------------------------------------------------------------
def test_toy_set_bleu4(toy_set):
    expected = math.exp(-1 / 6) * (16 / 18 * 9 / 13 * 6 / 8 * 3 / 4) ** 0.25
    assert bleu4(toy_set) == pytest.approx(expected, rel=1e-12)


def test_toy_set_rouge_l(toy_set):
    expected = (1 + 1.83 / 2.19 + 1 + 0.75 + 0) / 5
    assert rouge_l(toy_set) == pytest.approx(expected, rel=1e-12)


def test_toy_set_cider(toy_set):
    v2 = 10 * (math.sqrt(3) / 2 + 2 / math.sqrt(6) + 1 / math.sqrt(2) + 0) / 4 * math.exp(-1 / 72)
    expected = [10.0, v2, 5.0, 2.5, 0.0]
    np.testing.assert_allclose(cider_scores(toy_set), expected, rtol=1e-12, atol=1e-12)
    assert cider(toy_set) == pytest.approx(sum(expected) / 5, rel=1e-12)


def test_report_carries_per_video_diagnostics(toy_set):
    report = evaluate(toy_set)
    assert [v.video_id for v in report.videos] == ["v1", "v2", "v3", "v4", "v5"]
    assert report.videos[0].candidate == "a b c d"
    assert report.videos[0].rouge_l == 1.0
    assert report.videos[4].cider == 0.0
    assert report.cider == pytest.approx(cider(toy_set))
    assert report.presentation["bleu4"] == round(report.bleu4 * 100, 1)


# -----------------------------------------------------------------------------
# Properties
# -----------------------------------------------------------------------------
def test_perfect_captions_score_maximally():
    eval_set = [
        _item("v1", "a man is playing guitar", "a man is playing guitar"),
        _item("v2", "the dog runs across the field", "the dog runs across the field"),
        _item("v3", "two kids swim in a pool", "two kids swim in a pool"),
    ]
    assert bleu4(eval_set) == pytest.approx(1.0)
    assert rouge_l(eval_set) == pytest.approx(1.0)
    assert cider(eval_set) == pytest.approx(10.0)


def test_short_candidates_pay_the_brevity_penalty():
    eval_set = [
        _item("v1", "a b c d e", "a b c d e"),
        _item("v2", "f g h", "f g h i"),
    ]
    assert bleu4(eval_set) == pytest.approx(math.exp(1 - 9 / 8), rel=1e-12)


def test_missing_four_gram_matches_zero_the_bleu():
    eval_set = [_item("v1", "a b c", "a b c"), _item("v2", "d e f", "d e f")]
    assert bleu4(eval_set) == 0.0
    assert sentence_bleu4("a b c d".split(), ["a b c d".split()]) == pytest.approx(1.0)


def test_rouge_l_uses_beta_weighted_f_measure():
    expected = 2.44 * (2 / 3) / (1 + 1.44 * 2 / 3)
    assert rouge_l_sentence("a b c".split(), ["a c".split()]) == pytest.approx(expected, rel=1e-12)
    assert rouge_l_sentence("a b c".split(), ["x y".split(), "a c".split()]) == pytest.approx(expected, rel=1e-12)
    assert rouge_l_sentence([], ["a".split()]) == 0.0


def test_lcs_length():
    assert lcs_length("a b c d".split(), "a c d".split()) == 3
    assert lcs_length("q r s t".split(), "q s r t".split()) == 3
    assert lcs_length([], ["a"]) == 0


def test_corpus_scores_do_not_depend_on_video_order(toy_set):
    shuffled = [toy_set[i] for i in (3, 0, 4, 2, 1)]
    assert bleu4(shuffled) == pytest.approx(bleu4(toy_set), rel=1e-12)
    assert rouge_l(shuffled) == pytest.approx(rouge_l(toy_set), rel=1e-12)
    assert cider(shuffled) == pytest.approx(cider(toy_set), rel=1e-12)


def test_scores_are_bounded(toy_set):
    report = evaluate(toy_set)
    assert 0.0 <= report.bleu4 <= 1.0
    assert 0.0 <= report.rouge_l <= 1.0
    assert report.cider >= 0.0


# -----------------------------------------------------------------------------
# Errors
# -----------------------------------------------------------------------------
def test_cider_needs_two_videos():
    with pytest.raises(MetricError):
        cider_scores([_item("v1", "a b", "a b")])
    with pytest.raises(MetricError):
        evaluate([_item("v1", "a b", "a b")])


def test_empty_inputs_are_rejected():
    with pytest.raises(MetricError):
        bleu4([])
    with pytest.raises(MetricError, match="v2"):
        rouge_l([_item("v1", "a", "a"), EvalItem(video_id="v2", candidate=["a"], references=[])])
