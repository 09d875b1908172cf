"""roc_auc against the pairwise definition plus its symmetry properties."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aligned_xai.errors import MetricError
from aligned_xai.metrics import roc_auc, roc_auc_per_label

from _oracles import pairwise_auc


def _random_instance(rng, n_max=60):
    n = int(rng.integers(4, n_max))
    scores = rng.normal(size=n)
    if rng.random() < 0.5:
        # Quantize to force ties, the part rank averaging has to get right.
        scores = np.round(scores * 2.0) / 2.0
    truths = rng.random(n) < rng.uniform(0.2, 0.8)
    if truths.all():
        truths[0] = False
    if not truths.any():
        truths[0] = True
    return scores, truths


def test_matches_pairwise_definition(rng):
    for _ in range(300):
        scores, truths = _random_instance(rng)
        assert roc_auc(scores, truths) == pairwise_auc(scores, truths)


def test_perfect_separation():
    scores = np.array([0.1, 0.2, 0.8, 0.9])
    truths = np.array([False, False, True, True])
    assert roc_auc(scores, truths) == 1.0
    assert roc_auc(-scores, truths) == 0.0


def test_constant_scores_give_half():
    scores = np.zeros(10)
    truths = np.array([True] * 4 + [False] * 6)
    assert roc_auc(scores, truths) == 0.5


def test_single_class_raises():
    with pytest.raises(MetricError):
        roc_auc(np.arange(5.0), np.ones(5, dtype=bool))
    with pytest.raises(MetricError):
        roc_auc(np.arange(5.0), np.zeros(5, dtype=bool))


def test_shape_mismatch_raises():
    with pytest.raises(MetricError):
        roc_auc(np.zeros(4), np.zeros(5, dtype=bool))
    with pytest.raises(MetricError):
        roc_auc_per_label(np.zeros((4, 2)), np.zeros((4, 3), dtype=bool))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=4, max_size=40), st.data())
def test_score_negation_flips_auc(raw, data):
    scores = np.array(raw, dtype=np.float64)
    truths = np.array(data.draw(st.lists(st.booleans(), min_size=len(raw), max_size=len(raw))))
    if truths.all() or not truths.any():
        truths[0] = not truths[0]
    assert roc_auc(-scores, truths) == pytest.approx(1.0 - roc_auc(scores, truths), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=40), st.data())
def test_monotone_transform_invariance(raw, data):
    scores = np.array(raw, dtype=np.float64)
    truths = np.array(data.draw(st.lists(st.booleans(), min_size=len(raw), max_size=len(raw))))
    if truths.all() or not truths.any():
        truths[0] = not truths[0]
    # Strictly increasing map: ranks unchanged, AUC identical.
    transformed = 3.0 * scores + np.sign(scores) * scores**2
    assert roc_auc(transformed, truths) == roc_auc(scores, truths)


def test_per_label_columns_and_naming(rng):
    scores = rng.random((30, 3))
    truths = rng.random((30, 3)) < 0.5
    truths[0] = [True, True, True]
    truths[1] = [False, False, False]
    per = roc_auc_per_label(scores, truths, ["a", "b", "c"])
    for j in range(3):
        assert per[j] == roc_auc(scores[:, j], truths[:, j])
    bad = truths.copy()
    bad[:, 1] = True
    with pytest.raises(MetricError, match="label 'b'"):
        roc_auc_per_label(scores, bad, ["a", "b", "c"])
