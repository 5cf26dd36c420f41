"""Frame-level metrics, baselines, and bootstrap significance testing.

Scores are precision/recall/F1 in percent, computed over frames. The
always-positive baseline has the closed form F1 = 2p/(1+p) for positive
frame ratio p. Model comparisons use bootstrap resampling over dialogues
followed by a one-tailed paired t-test on the per-iteration F1 differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as scipy_stats

from nodcast.errors import InsufficientDataError, ShapeError

TYPE_CLASS_NAMES = {1: "short", 2: "long", 3: "long_p"}


@dataclass(frozen=True)
class PrfScores:
    """Precision/recall/F1 in percent."""

    f1: float
    precision: float
    recall: float

    def as_dict(self):
        return {"f1": self.f1, "precision": self.precision, "recall": self.recall}


def _scores_from_counts(tp: int, fp: int, fn: int) -> PrfScores:
    precision = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    recall = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PrfScores(f1, precision, recall)


def confusion_counts(predicted, true, positive) -> tuple[int, int, int]:
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if predicted.shape != true.shape:
        raise ShapeError("predicted and true label sequences differ in length")
    p_pos = np.isin(predicted, list(positive))
    t_pos = np.isin(true, list(positive))
    tp = int(np.sum(p_pos & t_pos))
    fp = int(np.sum(p_pos & ~t_pos))
    fn = int(np.sum(~p_pos & t_pos))
    return tp, fp, fn


def frame_prf(predicted, true, positive) -> PrfScores:
    """Frame-level scores for the class set ``positive``.

    For the timing task the positive set is every nod class; for the type
    task call once per class with a singleton set.
    """
    return _scores_from_counts(*confusion_counts(predicted, true, positive))


def per_class_prf(predicted, true, classes=(1, 2, 3)) -> dict[int, PrfScores]:
    return {c: frame_prf(predicted, true, {c}) for c in classes}


def macro_average(scores) -> PrfScores:
    """Unweighted arithmetic mean over classes."""
    scores = list(scores)
    return PrfScores(
        f1=float(np.mean([s.f1 for s in scores])),
        precision=float(np.mean([s.precision for s in scores])),
        recall=float(np.mean([s.recall for s in scores])),
    )


def random_baseline(true, positive) -> PrfScores:
    """Scores of the predictor that marks every frame positive."""
    true = np.asarray(true)
    always = np.full(true.shape, min(positive))
    return frame_prf(always, true, positive)


def random_baseline_closed_form(positive_ratio: float) -> PrfScores:
    """F1 = 2p/(1+p); precision = p; recall = 1 (percentages)."""
    p = positive_ratio
    f1 = 200.0 * p / (1.0 + p) if p > 0 else 0.0
    return PrfScores(f1, 100.0 * p, 100.0 if p > 0 else 0.0)


@dataclass
class BootstrapResult:
    iterations: int
    f1_a: np.ndarray
    f1_b: np.ndarray
    p_value: float

    @property
    def differences(self) -> np.ndarray:
        return self.f1_a - self.f1_b


def bootstrap_f1_test(pred_a: dict, pred_b: dict, labels: dict, positive,
                      iterations: int = 1000, seed: int = 0) -> BootstrapResult:
    """One-tailed paired bootstrap test of "model A's F1 exceeds model B's".

    Inputs are dicts keyed by dialogue id holding per-frame class arrays.
    Each iteration resamples dialogues with replacement and scores both
    models on the pooled frames; the p-value comes from a one-tailed
    paired t-test over the F1 differences. Identical predictions give
    p = 1.0 by convention (no evidence of a difference).
    """
    if iterations < 100:
        raise InsufficientDataError("need at least 100 iterations")
    keys = sorted(labels)
    if len(keys) < 2:
        raise InsufficientDataError("need at least 2 dialogues to resample")
    if sorted(pred_a) != keys or sorted(pred_b) != keys:
        raise ShapeError("prediction sets must cover the same dialogues as labels")

    counts_a = np.array([confusion_counts(pred_a[k], labels[k], positive) for k in keys])
    counts_b = np.array([confusion_counts(pred_b[k], labels[k], positive) for k in keys])

    rng = np.random.default_rng(seed)
    n = len(keys)
    f1_a = np.empty(iterations)
    f1_b = np.empty(iterations)
    for it in range(iterations):
        sample = rng.integers(0, n, n)
        f1_a[it] = _scores_from_counts(*counts_a[sample].sum(axis=0)).f1
        f1_b[it] = _scores_from_counts(*counts_b[sample].sum(axis=0)).f1

    diffs = f1_a - f1_b
    if np.allclose(diffs, 0.0):
        p_value = 1.0
    else:
        result = scipy_stats.ttest_1samp(diffs, 0.0, alternative="greater")
        p_value = float(result.pvalue)
    return BootstrapResult(iterations, f1_a, f1_b, p_value)


def build_report(pred_by_dlg: dict, labels_by_dlg: dict, task: str) -> dict:
    """Evaluation report mirroring per-class plus macro table rows."""
    keys = sorted(labels_by_dlg)
    if sorted(pred_by_dlg) != keys:
        raise ShapeError("predictions and labels cover different dialogues")
    pred = np.concatenate([np.asarray(pred_by_dlg[k]) for k in keys])
    true = np.concatenate([np.asarray(labels_by_dlg[k]) for k in keys])

    if task == "timing":
        pred_bin = (pred > 0).astype(int)
        true_bin = (true > 0).astype(int)
        return {
            "task": task,
            "frames": int(len(true)),
            "nodding": frame_prf(pred_bin, true_bin, {1}).as_dict(),
            "random": random_baseline(true_bin, {1}).as_dict(),
        }
    if task != "type":
        raise ShapeError(f"unknown task {task!r}")
    per_class = per_class_prf(pred, true)
    report = {"task": task, "frames": int(len(true))}
    for c, name in TYPE_CLASS_NAMES.items():
        report[name] = per_class[c].as_dict()
    report["macro"] = macro_average(per_class.values()).as_dict()
    report["random"] = {
        name: random_baseline(true, {c}).as_dict()
        for c, name in TYPE_CLASS_NAMES.items()
    }
    report["random"]["macro"] = macro_average(
        random_baseline(true, {c}) for c in TYPE_CLASS_NAMES).as_dict()
    return report
