import numpy as np
import pytest

from nodcast.errors import InsufficientDataError, ShapeError
from nodcast.evaluation import (
    BootstrapResult,
    PrfScores,
    bootstrap_f1_test,
    build_report,
    frame_prf,
    macro_average,
    per_class_prf,
    random_baseline,
    random_baseline_closed_form,
)

from oracles import prf_by_counting


def test_perfect_predictions_score_100():
    true = np.array([0, 1, 2, 3, 1, 0, 2])
    for c in (1, 2, 3):
        scores = frame_prf(true, true, {c})
        assert scores.f1 == 100.0
        assert scores.precision == 100.0
        assert scores.recall == 100.0


def test_always_positive_reproduces_reported_random_row():
    true = np.zeros(2000, dtype=int)
    true[:457] = 1  # positive ratio 0.2285
    scores = random_baseline(true, {1})
    assert round(scores.f1, 2) == 37.20
    assert round(scores.precision, 2) == 22.85
    assert round(scores.recall, 2) == 100.00


def test_hand_built_ten_frame_case_matches_counting():
    pred = [0, 1, 1, 0, 2, 1, 0, 0, 1, 2]
    true = [0, 1, 0, 1, 2, 2, 0, 1, 1, 0]
    for positive in ({1}, {2}, {1, 2}):
        f1, precision, recall = prf_by_counting(pred, true, positive)
        scores = frame_prf(pred, true, positive)
        assert scores.f1 == pytest.approx(f1)
        assert scores.precision == pytest.approx(precision)
        assert scores.recall == pytest.approx(recall)


def test_random_cases_match_counting_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 40))
        pred = rng.integers(0, 4, n)
        true = rng.integers(0, 4, n)
        positive = {int(c) for c in rng.choice(4, rng.integers(1, 3), replace=False)}
        f1, precision, recall = prf_by_counting(pred, true, positive)
        scores = frame_prf(pred, true, positive)
        assert scores.f1 == pytest.approx(f1)
        assert scores.precision == pytest.approx(precision)
        assert scores.recall == pytest.approx(recall)


def test_length_mismatch_rejected():
    with pytest.raises(ShapeError):
        frame_prf([0, 1], [0, 1, 1], {1})


# --- macro average -------------------------------------------------------

def test_macro_identical_scores_unchanged():
    s = PrfScores(42.0, 41.0, 43.0)
    assert macro_average([s, s, s]) == s


def test_macro_simple_mean():
    scores = [PrfScores(30.0, 0, 0), PrfScores(40.0, 0, 0), PrfScores(20.0, 0, 0)]
    assert macro_average(scores).f1 == pytest.approx(30.0)


def test_macro_matches_reported_average_row():
    scores = [PrfScores(14.34, 0, 0), PrfScores(21.71, 0, 0), PrfScores(5.64, 0, 0)]
    assert abs(macro_average(scores).f1 - 13.89) < 0.01


def test_macro_permutation_invariant():
    rng = np.random.default_rng(1)
    vals = [PrfScores(*rng.uniform(0, 100, 3)) for _ in range(3)]
    base = macro_average(vals)
    for perm in ((0, 2, 1), (2, 1, 0), (1, 0, 2)):
        assert macro_average([vals[i] for i in perm]) == base


# --- random baseline -------------------------------------------------

def test_random_baseline_matches_closed_form():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(1, 500))
        true = (rng.random(n) < rng.random()).astype(int)
        p = true.mean()
        scores = random_baseline(true, {1})
        closed = random_baseline_closed_form(p)
        assert scores.f1 == pytest.approx(closed.f1, abs=1e-9)
        assert scores.precision == pytest.approx(closed.precision, abs=1e-9)
        assert scores.recall == pytest.approx(closed.recall, abs=1e-9)


def test_random_baseline_extremes():
    assert random_baseline(np.zeros(10, int), {1}).f1 == 0.0
    assert random_baseline(np.ones(10, int), {1}).f1 == 100.0


# --- bootstrap --------------------------------------------------------

def synthetic_groups(seed, dialogues=8, frames=300, flip=0.0):
    rng = np.random.default_rng(seed)
    labels, preds = {}, {}
    for i in range(dialogues):
        name = f"dlg_{i}"
        true = (rng.random(frames) < 0.25).astype(int)
        pred = true.copy()
        flips = rng.random(frames) < flip
        pred[flips] = 1 - pred[flips]
        labels[name] = true
        preds[name] = pred
    return labels, preds


def test_identical_models_give_p_one():
    labels, preds = synthetic_groups(3)
    result = bootstrap_f1_test(preds, preds, labels, {1}, iterations=200, seed=0)
    assert result.p_value == 1.0
    assert np.all(result.differences == 0)


def test_truth_beats_corrupted():
    labels, truth_preds = synthetic_groups(4, flip=0.0)
    _, corrupted = synthetic_groups(4, flip=0.3)
    result = bootstrap_f1_test(truth_preds, corrupted, labels, {1},
                               iterations=1000, seed=1)
    assert result.p_value < 0.01


def test_swapping_models_flips_p_value():
    labels, truth_preds = synthetic_groups(5, flip=0.0)
    _, corrupted = synthetic_groups(5, flip=0.2)
    fwd = bootstrap_f1_test(truth_preds, corrupted, labels, {1},
                            iterations=500, seed=2)
    rev = bootstrap_f1_test(corrupted, truth_preds, labels, {1},
                            iterations=500, seed=2)
    assert fwd.p_value + rev.p_value == pytest.approx(1.0, abs=1e-9)


def test_bootstrap_reproducible_under_seed():
    labels, truth_preds = synthetic_groups(6, flip=0.0)
    _, corrupted = synthetic_groups(6, flip=0.1)
    a = bootstrap_f1_test(truth_preds, corrupted, labels, {1}, iterations=300, seed=9)
    b = bootstrap_f1_test(truth_preds, corrupted, labels, {1}, iterations=300, seed=9)
    assert a.p_value == b.p_value
    np.testing.assert_array_equal(a.f1_a, b.f1_a)


def test_bootstrap_needs_two_dialogues():
    labels = {"only": np.array([0, 1, 1])}
    with pytest.raises(InsufficientDataError):
        bootstrap_f1_test(labels, labels, labels, {1}, iterations=100)


def test_bootstrap_needs_matching_dialogues():
    labels, preds = synthetic_groups(7)
    missing = dict(list(preds.items())[1:])
    with pytest.raises(ShapeError):
        bootstrap_f1_test(missing, preds, labels, {1}, iterations=100)


# --- report ------------------------------------------------------------

def test_report_structure_type_task():
    rng = np.random.default_rng(8)
    labels = {"a": rng.integers(0, 4, 200), "b": rng.integers(0, 4, 200)}
    preds = {k: rng.integers(0, 4, 200) for k in labels}
    report = build_report(preds, labels, "type")
    assert set(report) == {"task", "frames", "short", "long", "long_p",
                           "macro", "random"}
    assert report["frames"] == 400
    macro = report["macro"]["f1"]
    mean_f1 = np.mean([report[c]["f1"] for c in ("short", "long", "long_p")])
    assert macro == pytest.approx(mean_f1)


def test_report_structure_timing_task():
    rng = np.random.default_rng(9)
    labels = {"a": rng.integers(0, 4, 100)}
    preds = {"a": rng.integers(0, 2, 100)}
    report = build_report(preds, labels, "timing")
    assert set(report) == {"task", "frames", "nodding", "random"}
    ratio = float((labels["a"] > 0).mean())
    assert report["random"]["f1"] == pytest.approx(
        random_baseline_closed_form(ratio).f1)
