"""Multi-label ranking metrics: per-class AP, AUC-ROC/PR, d-prime, and
class-level model comparison.

AP is the non-interpolated step sum over descending score thresholds with
tied scores grouped; AUC-ROC is the Mann-Whitney rank statistic with midrank
tie handling. Classes without a positive (or, for ROC, without both a positive
and a negative) are undefined and skipped from macro means.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError


class UndefinedMetricError(DomainError):
    """The metric has no defined value for this class (degenerate labels)."""


def _validate_pair(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DimensionError(
            f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    return scores, labels.astype(np.float64)


def average_precision(scores, labels) -> float:
    """Step-wise area under the precision-recall curve."""
    scores, labels = _validate_pair(scores, labels)
    n_pos = labels.sum()
    if n_pos == 0:
        raise UndefinedMetricError("average precision undefined without positives")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = labels[order]
    tp = np.cumsum(t)
    fp = np.cumsum(1.0 - t)
    # group ties: keep only the last index of each run of equal scores
    last = np.r_[s[1:] != s[:-1], True]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    prev = np.r_[0.0, recall[:-1]]
    return float(((recall - prev) * precision).sum())


def auc_pr(scores, labels) -> float:
    """Area under the precision-recall curve (same step sum as AP)."""
    return average_precision(scores, labels)


def auc_roc(scores, labels) -> float:
    """Mann-Whitney rank statistic with midrank ties."""
    scores, labels = _validate_pair(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC-ROC needs a positive and a negative")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    s = scores[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s[j + 1] == s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# Acklam's rational approximation of the standard normal quantile, refined by
# one Newton step against erf; verified to 1e-9 by an integration oracle.
_ACKLAM_A = (-3.969683028665376e+01, 2.209460984245205e+02,
             -2.759285104469687e+02, 1.383577518672690e+02,
             -3.066479806614716e+01, 2.506628277459239e+00)
_ACKLAM_B = (-5.447609879822406e+01, 1.615858368580409e+02,
             -1.556989798598866e+02, 6.680131188771972e+01,
             -1.328068155288572e+01)
_ACKLAM_C = (-7.784894002430293e-03, -3.223964580411365e-01,
             -2.400758277161838e+00, -2.549732539343734e+00,
             4.374664141464968e+00, 2.938163982698783e+00)
_ACKLAM_D = (7.784695709041462e-03, 3.224671290700398e-01,
             2.445134137142996e+00, 3.754408661907416e+00)


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"quantile requires p in (0, 1), got {p}")
    a, b, c, d = _ACKLAM_A, _ACKLAM_B, _ACKLAM_C, _ACKLAM_D
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
             / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0))
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        x = ((((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
             / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
              / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0))
    # one Newton step: Phi via erf, pdf in closed form
    err = 0.5 * (1.0 + math.erf(x / math.sqrt(2.0))) - p
    pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    if pdf > 0.0:
        x -= err / pdf
    return x


def d_prime(auc: float) -> float:
    """Sensitivity index sqrt(2) * quantile(AUC)."""
    if not 0.0 < auc < 1.0:
        raise DomainError(f"d-prime requires AUC strictly inside (0, 1), got {auc}")
    return math.sqrt(2.0) * normal_quantile(auc)


@dataclass
class MetricsReport:
    class_ap: list            # per-class AP, None where undefined
    class_auc_roc: list       # per-class AUC-ROC, None where undefined
    mean_ap: float | None
    mean_auc_roc: float | None
    mean_auc_pr: float | None
    dprime: float | None
    skipped_ap: int           # classes with no positive
    skipped_roc: int          # classes missing a positive or a negative
    num_clips: int = 0

    @property
    def no_defined_classes(self) -> bool:
        return self.mean_ap is None


def evaluate(scores: np.ndarray, labels: np.ndarray) -> MetricsReport:
    """Macro metrics over an N x C score/label pair."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise DimensionError(
            f"score matrix {scores.shape} and label matrix {labels.shape} must match")
    n, c = scores.shape
    class_ap, class_roc = [], []
    for k in range(c):
        try:
            class_ap.append(average_precision(scores[:, k], labels[:, k]))
        except UndefinedMetricError:
            class_ap.append(None)
        try:
            class_roc.append(auc_roc(scores[:, k], labels[:, k]))
        except UndefinedMetricError:
            class_roc.append(None)
    ap_vals = [v for v in class_ap if v is not None]
    roc_vals = [v for v in class_roc if v is not None]
    mean_ap = float(np.mean(ap_vals)) if ap_vals else None
    mean_roc = float(np.mean(roc_vals)) if roc_vals else None
    dp = None
    if mean_roc is not None and 0.0 < mean_roc < 1.0:
        dp = d_prime(mean_roc)
    return MetricsReport(
        class_ap=class_ap,
        class_auc_roc=class_roc,
        mean_ap=mean_ap,
        mean_auc_roc=mean_roc,
        mean_auc_pr=mean_ap,  # PR area uses the same step sum as AP
        dprime=dp,
        skipped_ap=sum(v is None for v in class_ap),
        skipped_roc=sum(v is None for v in class_roc),
        num_clips=n,
    )


@dataclass
class ClasswiseComparison:
    """Counts of classes where the reference model beats the base model."""

    overall: int
    by_threshold: dict        # relative-improvement threshold -> count
    compared: int


def classwise_compare(base: MetricsReport, ref: MetricsReport,
                      thresholds=(0.05, 0.10, 0.20)) -> ClasswiseComparison:
    if len(base.class_ap) != len(ref.class_ap):
        raise DimensionError(
            f"class sets differ: {len(base.class_ap)} vs {len(ref.class_ap)}")
    overall = 0
    by_threshold = {t: 0 for t in thresholds}
    compared = 0
    for b, r in zip(base.class_ap, ref.class_ap):
        if b is None or r is None:
            continue
        compared += 1
        if r > b:
            overall += 1
            for t in thresholds:
                # a zero-AP base counts as improved at every threshold
                if b == 0.0 or (r - b) / b > t:
                    by_threshold[t] += 1
    return ClasswiseComparison(overall, by_threshold, compared)


def report_to_json(report: MetricsReport) -> str:
    payload = {
        "schema": "lean-metrics-v1",
        "num_clips": report.num_clips,
        "mean_ap": report.mean_ap,
        "mean_auc_roc": report.mean_auc_roc,
        "mean_auc_pr": report.mean_auc_pr,
        "d_prime": report.dprime,
        "skipped_ap": report.skipped_ap,
        "skipped_roc": report.skipped_roc,
        "no_defined_classes": report.no_defined_classes,
        "class_ap": report.class_ap,
        "class_auc_roc": report.class_auc_roc,
    }
    return json.dumps(payload, indent=2)


def write_class_ap_csv(path, report: MetricsReport, class_names) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("class_index,class_name,ap\n")
        for i, (name, ap) in enumerate(zip(class_names, report.class_ap)):
            fh.write(f"{i},{name},{'' if ap is None else repr(float(ap))}\n")
