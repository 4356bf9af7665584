"""Precision/recall/F1 conventions and properties."""

import numpy as np
import pytest

from precede.metrics import evaluate
from precede.spline import InputError


def test_perfect_predictions():
    rep = evaluate([0.9, 0.1, 0.8, 0.2], [1, 0, 1, 0], 0.5)
    assert rep.precision == rep.recall == rep.f1 == 1.0
    assert (rep.tp, rep.fp, rep.tn, rep.fn) == (2, 0, 2, 0)


def test_hand_counted_case():
    # tp=3, fp=1, fn=1, tn=1
    probs = [0.9, 0.8, 0.7, 0.6, 0.2, 0.3]
    labels = [1, 1, 1, 0, 1, 0]
    rep = evaluate(probs, labels, 0.5)
    assert (rep.tp, rep.fp, rep.fn, rep.tn) == (3, 1, 1, 1)
    assert rep.precision == 0.75 and rep.recall == 0.75 and rep.f1 == 0.75


def test_vacuous_case_is_perfect_by_convention():
    rep = evaluate([0.1, 0.2], [0, 0], 0.5)
    assert rep.precision == rep.recall == rep.f1 == 1.0


def test_zero_denominator_with_misses_is_zero():
    # nothing predicted positive but positives exist
    rep = evaluate([0.1, 0.2], [1, 0], 0.5)
    assert rep.precision == 0.0 and rep.recall == 0.0 and rep.f1 == 0.0
    # everything predicted positive but no positives exist
    rep = evaluate([0.9, 0.8], [0, 0], 0.5)
    assert rep.precision == 0.0 and rep.recall == 0.0


def test_f1_harmonic_identity():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 40))
        rep = evaluate(rng.random(n), (rng.random(n) < 0.4).astype(int), 0.5)
        p, r = rep.precision, rep.recall
        expected = 0.0 if p + r == 0 else 2 * p * r / (p + r)
        assert abs(rep.f1 - expected) <= 1e-12


def test_threshold_monotonicity_of_recall():
    # holds whenever positives exist (without them, recall is governed by
    # the vacuous-case convention instead)
    rng = np.random.default_rng(1)
    trials = 0
    while trials < 50:
        n = int(rng.integers(2, 60))
        probs = rng.random(n)
        labels = (rng.random(n) < 0.3).astype(int)
        if labels.sum() == 0:
            continue
        trials += 1
        recalls = [evaluate(probs, labels, th).recall for th in np.linspace(0.0, 1.0, 11)]
        assert all(b <= a + 1e-15 for a, b in zip(recalls[:-1], recalls[1:]))


def test_prediction_rule_is_geq_threshold():
    rep = evaluate([0.5], [1], 0.5)
    assert rep.predictions == (1,)
    assert rep.recall == 1.0


def test_report_dict_carries_probabilities_for_plots():
    rep = evaluate([0.9, 0.1], [1, 0], 0.5, task="anomaly")
    d = rep.to_dict()
    assert d["task"] == "anomaly"
    assert d["probabilities"] == [0.9, 0.1]
    assert d["counts"] == {"tp": 1, "fp": 0, "tn": 1, "fn": 0}


def test_length_mismatch_rejected():
    with pytest.raises(InputError):
        evaluate([0.5, 0.5], [1], 0.5)
    with pytest.raises(InputError):
        evaluate([], [], 0.5)
