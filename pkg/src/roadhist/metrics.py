"""Evaluation metrics for histogram regression and node classification.

Histogram metrics compare a predicted distribution against the observed
one per node. All four are exposed both as scalar functions over a
single pair and as row-vectorised variants over matrices (one node per
row), which is what the experiment harness uses.

Conventions, pinned here and relied on by the tests:

* intersection(S, T) = sum_j min(S_j, T_j); 1 means identical support.
* correlation is Pearson's r over bucket values; if either histogram
  has zero variance the value is 1.0 when the two are (numerically)
  identical and 0.0 otherwise.
* bhattacharyya(S, T) = sqrt(max(0, 1 - sum_j sqrt(S_j T_j))); the
  inner clamp absorbs fp rounding above 1.
* kl_divergence(predicted, actual) = sum over buckets where the actual
  (true) histogram is positive of actual * ln(actual / (predicted + eps)),
  eps = 1e-10. Epsilon only smooths the prediction in the denominator;
  empty true buckets contribute nothing. Natural log.
"""

from __future__ import annotations

import csv
import json

import numpy as np

KL_EPS = 1e-10
_VAR_TOL = 1e-12


def intersection(predicted, actual) -> float:
    p, a = _pair(predicted, actual)
    return float(np.minimum(p, a).sum())


def correlation(predicted, actual) -> float:
    p, a = _pair(predicted, actual)
    return float(correlation_rows(p[None, :], a[None, :])[0])


def bhattacharyya(predicted, actual) -> float:
    p, a = _pair(predicted, actual)
    return float(np.sqrt(max(0.0, 1.0 - np.sqrt(p * a).sum())))


def kl_divergence(predicted, actual) -> float:
    p, a = _pair(predicted, actual)
    return float(kl_divergence_rows(p[None, :], a[None, :])[0])


def _pair(predicted, actual):
    p = np.asarray(predicted, dtype=np.float64).ravel()
    a = np.asarray(actual, dtype=np.float64).ravel()
    if p.shape != a.shape:
        raise ValueError("histograms must have the same length")
    return p, a


def intersection_rows(P, A) -> np.ndarray:
    return np.minimum(P, A).sum(axis=1)


def correlation_rows(P, A) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    pc = P - P.mean(axis=1, keepdims=True)
    ac = A - A.mean(axis=1, keepdims=True)
    num = (pc * ac).sum(axis=1)
    den = np.sqrt((pc * pc).sum(axis=1) * (ac * ac).sum(axis=1))
    out = np.zeros(P.shape[0])
    ok = den > _VAR_TOL
    # rounding can push |r| a couple of ulp past 1
    out[ok] = np.clip(num[ok] / den[ok], -1.0, 1.0)
    if not ok.all():
        same = np.isclose(P, A, rtol=0.0, atol=_VAR_TOL).all(axis=1)
        out[~ok] = np.where(same[~ok], 1.0, 0.0)
    return out


def bhattacharyya_rows(P, A) -> np.ndarray:
    inner = 1.0 - np.sqrt(np.asarray(P) * np.asarray(A)).sum(axis=1)
    return np.sqrt(np.maximum(inner, 0.0))


def kl_divergence_rows(P, A) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(A > 0.0, A * np.log(A / (P + KL_EPS)), 0.0)
    return terms.sum(axis=1)


HISTOGRAM_METRICS = ("intersection", "correlation", "bhattacharyya", "kl_divergence")

_ROW_FNS = {
    "intersection": intersection_rows,
    "correlation": correlation_rows,
    "bhattacharyya": bhattacharyya_rows,
    "kl_divergence": kl_divergence_rows,
}


def histogram_metrics(predicted, actual) -> dict:
    """All four metrics for one predicted/actual pair."""
    return {
        "intersection": intersection(predicted, actual),
        "correlation": correlation(predicted, actual),
        "bhattacharyya": bhattacharyya(predicted, actual),
        "kl_divergence": kl_divergence(predicted, actual),
    }


def histogram_metrics_rows(P, A) -> dict:
    """All four metrics per row; returns {name: ndarray of shape (n,)}."""
    P = np.asarray(P, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if P.shape != A.shape:
        raise ValueError("prediction and label matrices must have the same shape")
    return {name: fn(P, A) for name, fn in _ROW_FNS.items()}


# ---------------------------------------------------------------------------
# Classification


def accuracy(probabilities, labels) -> float:
    pred = np.asarray(probabilities).argmax(axis=1)
    labels = np.asarray(labels)
    return float((pred == labels).mean())


def macro_f1(probabilities, labels, n_classes=None) -> float:
    """Unweighted mean of per-class F1; a class with no true and no
    predicted members scores 0 (it still counts toward the mean)."""
    probs = np.asarray(probabilities)
    labels = np.asarray(labels)
    if n_classes is None:
        n_classes = probs.shape[1]
    pred = probs.argmax(axis=1)
    scores = np.zeros(n_classes)
    for c in range(n_classes):
        tp = np.sum((pred == c) & (labels == c))
        fp = np.sum((pred == c) & (labels != c))
        fn = np.sum((pred != c) & (labels == c))
        denom = 2 * tp + fp + fn
        scores[c] = (2 * tp / denom) if denom > 0 else 0.0
    return float(scores.mean())


def _binary_auc(scores, positive) -> float:
    """Trapezoidal area under the ROC curve for one class."""
    order = np.argsort(-scores, kind="stable")
    y = positive[order].astype(np.float64)
    s = scores[order]
    # evaluate only at distinct thresholds so ties are handled correctly
    distinct = np.r_[np.flatnonzero(np.diff(s)), y.size - 1]
    tps = np.cumsum(y)[distinct]
    fps = (distinct + 1) - tps
    tps = np.r_[0.0, tps]
    fps = np.r_[0.0, fps]
    n_pos, n_neg = tps[-1], fps[-1]
    tpr = tps / n_pos
    fpr = fps / n_neg
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) * 0.5))


def macro_roc_auc(probabilities, labels, n_classes=None) -> float:
    """One-vs-rest ROC AUC averaged over classes present in ``labels``.

    Classes with no positive (or no negative) examples have no defined
    curve and are left out of the average.
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels)
    if n_classes is None:
        n_classes = probs.shape[1]
    aucs = []
    for c in range(n_classes):
        pos = labels == c
        if pos.any() and (~pos).any():
            aucs.append(_binary_auc(probs[:, c], pos))
    if not aucs:
        raise ValueError("no class has both positive and negative examples")
    return float(np.mean(aucs))


def classification_metrics(probabilities, labels, n_classes=None) -> dict:
    return {
        "accuracy": accuracy(probabilities, labels),
        "macro_f1": macro_f1(probabilities, labels, n_classes),
        "roc_auc": macro_roc_auc(probabilities, labels, n_classes),
    }


# ---------------------------------------------------------------------------
# Aggregation across repeated runs


def aggregate(records, sem: bool = True) -> dict:
    """Aggregate per-run metric dicts into mean/median(/sem) per metric.

    ``records`` is a non-empty sequence of {metric: value} dicts, all
    with the same keys. Median uses the midpoint convention for even
    counts; sem is the sample standard deviation (ddof=1) divided by
    sqrt(n), reported as 0.0 for a single record.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    keys = list(records[0])
    for r in records:
        if list(r) != keys:
            raise ValueError("records disagree on metric names")
    out = {}
    for k in keys:
        vals = np.array([float(r[k]) for r in records])
        entry = {"mean": float(vals.mean()), "median": float(np.median(vals))}
        if sem:
            entry["sem"] = (
                float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
            )
        out[k] = entry
    return out


def write_report_csv(aggregated: dict, path):
    """metric,mean,median,sem rows (sem blank when absent)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "mean", "median", "sem"])
        for name, entry in aggregated.items():
            w.writerow(
                [name, repr(entry["mean"]), repr(entry["median"]),
                 repr(entry["sem"]) if "sem" in entry else ""]
            )


def write_report_json(report: dict, path):
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
