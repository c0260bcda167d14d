"""Closed-set, calibration, ranking and rejection metrics.

These are deliberately self-contained little implementations with pinned
tie and edge-case behaviour:

* per-class F1 with zero-denominator conventions spelled out,
* expected / maximum calibration error over ten left-open bins,
* ROC curves where tied scores contribute half a pair (Mann-Whitney),
* accuracy-rejection curves over a fixed rejection grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .numerics import check_prob_vectors
from .validation import check_labels

#: rejection fractions evaluated by accuracy_rejection (i/20 for i in 0..19)
REJECTION_GRID = tuple(i / 20 for i in range(20))


class ClassificationMetrics(NamedTuple):
    accuracy: float
    f1_macro: float
    f1_weighted: float


def classification_metrics(
    predicted, truth, n_classes: int | None = None
) -> ClassificationMetrics:
    """Accuracy plus macro- and support-weighted F1.

    Per-class precision/recall/F1 use the convention that an empty
    denominator yields 0.  The macro average runs over classes that appear
    in the truth or the predictions; a class absent from both would have
    F1 = 0 and weight 0, so it is excluded rather than diluting the mean.
    The weighted average weights each class by its truth support.
    """
    truth = np.asarray(truth, dtype=np.int64)
    predicted = check_labels(predicted, truth.shape[0], n_classes)
    if truth.size == 0:
        raise ValueError("cannot score an empty label set")
    k = n_classes if n_classes is not None else int(max(truth.max(), predicted.max())) + 1
    support = np.bincount(truth, minlength=k).astype(np.float64)
    predicted_count = np.bincount(predicted, minlength=k).astype(np.float64)
    tp = np.bincount(truth[predicted == truth], minlength=k).astype(np.float64)

    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted_count > 0, tp / predicted_count, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / np.where(pr > 0, pr, 1.0), 0.0)

    present = (support > 0) | (predicted_count > 0)
    accuracy = float((predicted == truth).mean())
    f1_macro = float(f1[present].mean()) if present.any() else 0.0
    f1_weighted = (
        float((f1 * support).sum() / support.sum()) if support.sum() > 0 else 0.0
    )
    return ClassificationMetrics(accuracy, f1_macro, f1_weighted)


@dataclass
class CalibrationReport:
    """ECE/MCE plus the per-bin table they are computed from.

    Bins partition (0, 1] into ``n_bins`` left-open intervals
    ``((i-1)/M, i/M]``; a confidence of exactly 0 joins the first bin.
    ``bin_confidence`` / ``bin_accuracy`` are 0 for empty bins, which
    contribute nothing to ECE and are skipped by MCE.
    """

    n_bins: int
    bin_count: np.ndarray
    bin_confidence: np.ndarray
    bin_accuracy: np.ndarray
    ece: float
    mce: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin", "lower", "upper", "count", "confidence", "accuracy"])
            for i in range(self.n_bins):
                writer.writerow(
                    [
                        i + 1,
                        i / self.n_bins,
                        (i + 1) / self.n_bins,
                        int(self.bin_count[i]),
                        self.bin_confidence[i],
                        self.bin_accuracy[i],
                    ]
                )


def calibration(probs, truth, n_bins: int = 10) -> CalibrationReport:
    """Bin predictions by confidence and compare confidence to accuracy.

    Confidence is the maximum class probability; the prediction is its
    argmax (lowest index on ties).  ECE is the support-weighted mean of the
    per-bin |accuracy - confidence| gaps, MCE the largest gap over
    non-empty bins.  Perfectly confident and correct predictions give
    ECE = MCE = 0.
    """
    probs = check_prob_vectors(probs, name="probs")
    if probs.ndim != 2:
        raise ValueError("probs must have shape (n, K)")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    truth = check_labels(truth, probs.shape[0])
    confidence = probs.max(axis=1)
    predicted = probs.argmax(axis=1)
    correct = (predicted == truth).astype(np.float64)

    # left-open bins: bin i covers ((i-1)/M, i/M]; ceil maps each confidence
    # there, and exact zeros are pushed into bin 1
    bins = np.ceil(confidence * n_bins).astype(np.int64)
    bins = np.clip(bins, 1, n_bins) - 1

    count = np.bincount(bins, minlength=n_bins).astype(np.float64)
    conf_sum = np.bincount(bins, weights=confidence, minlength=n_bins)
    acc_sum = np.bincount(bins, weights=correct, minlength=n_bins)
    nonempty = count > 0
    bin_confidence = np.where(nonempty, conf_sum / np.where(nonempty, count, 1), 0.0)
    bin_accuracy = np.where(nonempty, acc_sum / np.where(nonempty, count, 1), 0.0)

    gaps = np.abs(bin_accuracy - bin_confidence)
    ece = float(np.sum((count / probs.shape[0]) * gaps))
    mce = float(gaps[nonempty].max()) if nonempty.any() else 0.0
    return CalibrationReport(
        n_bins=n_bins,
        bin_count=count.astype(np.int64),
        bin_confidence=bin_confidence,
        bin_accuracy=bin_accuracy,
        ece=ece,
        mce=mce,
    )


@dataclass
class RocCurve:
    """ROC vertices plus the areas under them.

    ``fpr``/``tpr`` trace the curve from (0, 0) to (1, 1) as the threshold
    sweeps from above the largest score downwards; a batch of tied scores
    appears as one diagonal segment, so the trapezoid area equals the
    Mann-Whitney pair count with ties at half weight.  ``auroc20`` is the
    area over the false-positive range [0, 0.2] (interpolated at 0.2),
    normalized by 0.2 so an uninformative scorer gives 0.1 and a perfect
    one gives 1.0.
    """

    fpr: np.ndarray
    tpr: np.ndarray
    auroc: float
    auroc20: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fpr", "tpr"])
            for x, y in zip(self.fpr, self.tpr):
                writer.writerow([x, y])


def roc(scores_id, scores_ood) -> RocCurve:
    """ROC of a novelty score: higher score should mean out-of-distribution.

    ``scores_id`` are the negatives (data the score should keep), and
    ``scores_ood`` the positives (data the score should flag).
    """
    neg = np.asarray(scores_id, dtype=np.float64).reshape(-1)
    pos = np.asarray(scores_ood, dtype=np.float64).reshape(-1)
    if neg.size == 0 or pos.size == 0:
        raise ValueError("both score sets must be non-empty")
    if not (np.all(np.isfinite(neg)) and np.all(np.isfinite(pos))):
        raise ValueError("scores must be finite")

    # one curve vertex per distinct score value, descending: everything
    # with score >= that value is flagged
    values = np.unique(np.concatenate([neg, pos]))[::-1]
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    tpr_tail = pos.size - np.searchsorted(pos_sorted, values, side="left")
    fpr_tail = neg.size - np.searchsorted(neg_sorted, values, side="left")
    fpr = np.concatenate([[0.0], fpr_tail / neg.size])
    tpr = np.concatenate([[0.0], tpr_tail / pos.size])

    auroc = float(np.trapezoid(tpr, fpr))
    auroc20 = _normalized_partial_area(fpr, tpr, 0.2)
    return RocCurve(fpr=fpr, tpr=tpr, auroc=auroc, auroc20=auroc20)


def _normalized_partial_area(fpr: np.ndarray, tpr: np.ndarray, cut: float) -> float:
    """Area under the curve for fpr in [0, cut], divided by cut.

    Integrates with the fpr axis rescaled to band units (so the band spans
    [0, 1]); this folds the division into the axis and lets the
    uninformative diagonal come out at exactly cut/2.
    """
    inside = fpr <= cut
    fx = fpr[inside]
    fy = tpr[inside]
    if fx[-1] < cut:
        # linearly interpolate the curve at fpr = cut
        j = int(np.searchsorted(fpr, cut))
        x0, x1 = fpr[j - 1], fpr[j]
        y0, y1 = tpr[j - 1], tpr[j]
        y_cut = y0 + (y1 - y0) * (cut - x0) / (x1 - x0)
        fx = np.concatenate([fx, [cut]])
        fy = np.concatenate([fy, [y_cut]])
    return float(np.trapezoid(fy, fx * (1.0 / cut)))


@dataclass
class RejectionCurve:
    """Accuracy on retained samples as a function of rejection fraction."""

    rejection: np.ndarray
    accuracy: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rejection", "accuracy"])
            for p, a in zip(self.rejection, self.accuracy):
                writer.writerow([p, a])

    def accuracy_at(self, fraction: float) -> float:
        idx = int(np.argmin(np.abs(self.rejection - fraction)))
        return float(self.accuracy[idx])


def accuracy_rejection(uncertainty, predicted, truth) -> RejectionCurve:
    """Accuracy after dropping the most-uncertain fraction of samples.

    For each fraction p in the grid {0, 0.05, ..., 0.95}, the
    ``ceil(p * n)`` samples with the highest uncertainty are discarded
    (ties broken by original index, lower index dropped first) and accuracy
    is computed on the rest.  With an oracle uncertainty that ranks every
    error above every correct prediction, the curve is non-decreasing.
    """
    u = np.asarray(uncertainty, dtype=np.float64).reshape(-1)
    n = u.size
    if n == 0:
        raise ValueError("need at least one sample")
    if not np.all(np.isfinite(u)):
        raise ValueError("uncertainties must be finite")
    truth = np.asarray(truth, dtype=np.int64)
    predicted = check_labels(predicted, n)
    if truth.shape != (n,):
        raise ValueError("truth must align with uncertainty")
    correct = (predicted == truth).astype(np.float64)

    # stable sort of -u puts equal uncertainties in original-index order
    drop_order = np.argsort(-u, kind="stable")
    correct_by_drop = correct[drop_order]
    fractions, accuracies = [], []
    for i, p in enumerate(REJECTION_GRID):
        n_drop = (i * n + 19) // 20  # ceil(p * n) in exact integer arithmetic
        if n_drop >= n:
            continue
        fractions.append(p)
        accuracies.append(correct_by_drop[n_drop:].mean())
    return RejectionCurve(
        rejection=np.array(fractions), accuracy=np.array(accuracies)
    )
