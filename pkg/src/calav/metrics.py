"""Verification metrics and calibration measurement.

The PAN-style report carries AUC, c@1, F0.5u, F1, and the complement Brier
score (all higher-is-better, averaged into an overall score), plus the mean
confidence and the expected/maximum calibration errors over equal-width
confidence bins on [0.5, 1].

Confidence is the posterior mass on the predicted label: s if the pair is
called same-author, 1 - s otherwise. A non-response hook exists for API
completeness but nothing in this artifact emits non-responses.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    """A metric is undefined for the given result set."""


@dataclass(frozen=True)
class TrialResult:
    pair_id: str
    tag: str          # subset tag SA_SF / SA_DF / DA_SF / DA_DF
    s: float          # posterior for the same-author hypothesis
    a_true: int
    a_hat: int
    confidence: float
    tie: bool = False  # s was exactly 0.5; predicted 0 by convention

    @classmethod
    def from_score(cls, pair_id: str, tag: str, s: float, a_true: int
                   ) -> "TrialResult":
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"posterior out of range: {s}")
        a_hat = 1 if s > 0.5 else 0
        return cls(pair_id=pair_id, tag=tag, s=float(s), a_true=int(a_true),
                   a_hat=a_hat, confidence=max(s, 1.0 - s), tie=(s == 0.5))


@dataclass
class CalibrationBins:
    edges: np.ndarray       # (n_bins + 1,) strictly increasing over [0.5, 1]
    counts: np.ndarray      # (n_bins,)
    mean_confidence: np.ndarray  # (n_bins,) nan for empty bins
    accuracy: np.ndarray    # (n_bins,) nan for empty bins

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


@dataclass
class MetricsReport:
    auc: float
    c_at_1: float
    f_05_u: float
    f1: float
    brier: float
    overall: float = field(init=False)
    conf_mean: float = 0.0
    ece: float = 0.0
    mce: float = 0.0

    def __post_init__(self):
        self.overall = float(np.mean([self.auc, self.c_at_1, self.f_05_u,
                                      self.f1, self.brier]))

    def to_json(self) -> str:
        order = ("auc", "c_at_1", "f_05_u", "f1", "brier", "overall",
                 "conf_mean", "ece", "mce")
        return json.dumps({k: getattr(self, k) for k in order}, indent=2)


def _require_results(results: list[TrialResult]) -> None:
    if not results:
        raise MetricError("no trial results")


def auc(results: list[TrialResult]) -> float:
    """Probability that a random positive outscores a random negative, ties
    counting one half (rank formulation of the Mann-Whitney statistic)."""
    _require_results(results)
    labels = np.array([r.a_true for r in results])
    scores = np.array([r.s for r in results])
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")
    ranks = rankdata(scores)  # average ranks on ties
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0)
                 / (n_pos * n_neg))


def c_at_1(results: list[TrialResult], n_non_responses: int = 0) -> float:
    """(1/n) * (n_correct + n_nonresp * n_correct / n); equal to plain
    accuracy whenever no non-responses are returned."""
    _require_results(results)
    n = len(results) + n_non_responses
    n_correct = sum(r.a_hat == r.a_true for r in results)
    return (n_correct + n_non_responses * n_correct / n) / n


def f1_and_f05u(results: list[TrialResult], n_non_responses: int = 0
                ) -> tuple[float, float]:
    """F1 on the same-author class, and F0.5u which counts non-responses as
    false negatives: 1.25 TP / (1.25 TP + 0.25 (FN + U) + FP)."""
    _require_results(results)
    tp = sum(r.a_hat == 1 and r.a_true == 1 for r in results)
    fp = sum(r.a_hat == 1 and r.a_true == 0 for r in results)
    fn = sum(r.a_hat == 0 and r.a_true == 1 for r in results)

    denom_f1 = 2 * tp + fp + fn
    if denom_f1 == 0:
        warnings.warn("F1 undefined (no positives anywhere); reporting 0")
        f1 = 0.0
    else:
        f1 = 2 * tp / denom_f1

    denom_f05 = 1.25 * tp + 0.25 * (fn + n_non_responses) + fp
    if denom_f05 == 0:
        warnings.warn("F0.5u undefined (no positives anywhere); reporting 0")
        f05u = 0.0
    else:
        f05u = 1.25 * tp / denom_f05
    return float(f1), float(f05u)


def brier_complement(results: list[TrialResult]) -> float:
    """1 - mean squared error of the posterior against the label."""
    _require_results(results)
    err = np.mean([(r.s - r.a_true) ** 2 for r in results])
    return float(1.0 - err)


def calibration(results: list[TrialResult], n_bins: int = 10
                ) -> tuple[CalibrationBins, float, float]:
    """Equal-width confidence binning on [0.5, 1]: bins are right-open except
    the last. ECE is the count-weighted mean absolute accuracy-confidence
    gap; MCE the maximum gap over non-empty bins."""
    _require_results(results)
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    edges = 0.5 + 0.5 * np.arange(n_bins + 1) / n_bins
    counts = np.zeros(n_bins, dtype=int)
    conf_sum = np.zeros(n_bins)
    correct = np.zeros(n_bins)
    width = 0.5 / n_bins
    for r in results:
        idx = min(int((r.confidence - 0.5) / width), n_bins - 1)
        counts[idx] += 1
        conf_sum[idx] += r.confidence
        correct[idx] += int(r.a_hat == r.a_true)

    with np.errstate(invalid="ignore"):
        mean_conf = np.where(counts > 0, conf_sum / np.maximum(counts, 1), np.nan)
        accuracy = np.where(counts > 0, correct / np.maximum(counts, 1), np.nan)
    gaps = np.abs(accuracy - mean_conf)
    nonempty = counts > 0
    ece = float(np.sum(counts[nonempty] / len(results) * gaps[nonempty]))
    mce = float(np.max(gaps[nonempty]))
    bins = CalibrationBins(edges=edges, counts=counts,
                           mean_confidence=mean_conf, accuracy=accuracy)
    return bins, ece, mce


def compute_report(results: list[TrialResult], n_bins: int = 10) -> MetricsReport:
    f1, f05u = f1_and_f05u(results)
    _, ece, mce = calibration(results, n_bins=n_bins)
    report = MetricsReport(auc=auc(results), c_at_1=c_at_1(results),
                           f_05_u=f05u, f1=f1,
                           brier=brier_complement(results))
    report.conf_mean = float(np.mean([r.confidence for r in results]))
    report.ece = ece
    report.mce = mce
    return report


# exports ------------------------------------------------------------------------

RELIABILITY_HEADER = ("bin_center", "confidence", "accuracy", "count")


def export_reliability(bins: CalibrationBins) -> str:
    """Plot-ready reliability table as CSV; empty bins keep their row with a
    zero count and blank confidence/accuracy."""
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(RELIABILITY_HEADER)
    for center, conf, acc, count in zip(bins.centers, bins.mean_confidence,
                                        bins.accuracy, bins.counts):
        if count == 0:
            writer.writerow([f"{center:.6f}", "", "", 0])
        else:
            writer.writerow([f"{center:.6f}", f"{conf:.12f}", f"{acc:.12f}",
                             int(count)])
    return out.getvalue()


def filter_subset(results: list[TrialResult], tag: str) -> list[TrialResult]:
    return [r for r in results if r.tag == tag]


def export_histogram(results: list[TrialResult], tag: str | None = None,
                     n_bins: int = 10) -> str:
    """Per-subset confidence histogram as CSV, annotated with the subset's
    accuracy and mean confidence on every row."""
    subset = filter_subset(results, tag) if tag else list(results)
    _require_results(subset)
    edges = 0.5 + 0.5 * np.arange(n_bins + 1) / n_bins
    width = 0.5 / n_bins
    counts = np.zeros(n_bins, dtype=int)
    for r in subset:
        counts[min(int((r.confidence - 0.5) / width), n_bins - 1)] += 1
    acc = sum(r.a_hat == r.a_true for r in subset) / len(subset)
    conf = float(np.mean([r.confidence for r in subset]))

    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(("subset", "bin_center", "count", "subset_accuracy",
                     "subset_mean_confidence"))
    centers = 0.5 * (edges[:-1] + edges[1:])
    for center, count in zip(centers, counts):
        writer.writerow([tag or "ALL", f"{center:.6f}", int(count),
                         f"{acc:.12f}", f"{conf:.12f}"])
    return out.getvalue()
