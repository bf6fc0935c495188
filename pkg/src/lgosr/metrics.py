"""External evaluation metrics and run self-checks.

These routines are the reporting-side counterpart of the loss the search
engine computes internally; self_check compares the two code paths on the same
predictions and raises findings rather than silently disagreeing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gates

# A model fitted this badly on held-out data indicates a broken run, not a
# mediocre one; aggregation excludes flagged seeds and reports the exclusion.
R2_ANOMALY_FLOOR = -1.0

INTERNAL_EXTERNAL_RTOL = 1e-9


@dataclass
class MetricReport:
    task: str
    n: int
    rmse: float = float("nan")
    mae: float = float("nan")
    r2: float | None = None
    auroc: float | None = None
    auprc: float | None = None
    brier: float | None = None
    flags: tuple[str, ...] = ()

    def values(self) -> dict[str, float]:
        """Headline metrics for export, keyed by metric name."""
        if self.task == "binary":
            return {"auroc": self.auroc, "auprc": self.auprc, "brier": self.brier,
                    "rmse": self.rmse, "mae": self.mae}
        return {"r2": self.r2, "rmse": self.rmse, "mae": self.mae}


def _check_lengths(y, yhat):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValueError("y and predictions must be equal-length vectors")
    if y.shape[0] < 2:
        raise ValueError("metrics need at least 2 samples, got %d" % (y.shape[0],))
    return y, yhat


def regression_metrics(y, yhat) -> MetricReport:
    """RMSE, MAE, and R^2; R^2 is NaN (with a flag) when y has zero variance."""
    y, yhat = _check_lengths(y, yhat)
    err = yhat - y
    rmse = float(np.sqrt(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    flags = []
    if ss_tot == 0.0:
        r2 = float("nan")
        flags.append("r2_undefined_zero_variance")
    else:
        r2 = 1.0 - float(np.sum(err * err)) / ss_tot
    return MetricReport(task="regression", n=y.shape[0], rmse=rmse, mae=mae, r2=r2,
                        flags=tuple(flags))


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the group midrank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(x.shape[0], dtype=float)
    i = 0
    n = x.shape[0]
    while i < n:
        j = i
        while j < n and xs[j] == xs[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0
        i = j
    return ranks


def auroc_score(y, scores) -> float:
    """AUROC via the midrank statistic; ties contribute 1/2, so the value
    matches pairwise counting with half-credit for tied score pairs."""
    y = np.asarray(y, dtype=float)
    scores = np.asarray(scores, dtype=float)
    pos = y == 1
    n1 = int(pos.sum())
    n0 = y.shape[0] - n1
    if n1 == 0 or n0 == 0:
        return float("nan")
    ranks = _midranks(scores)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def auprc_score(y, scores) -> float:
    """Average precision by step integration over distinct score thresholds."""
    y = np.asarray(y, dtype=float)
    scores = np.asarray(scores, dtype=float)
    n_pos = int((y == 1).sum())
    if n_pos == 0 or n_pos == y.shape[0]:
        return float("nan")
    order = np.argsort(-scores, kind="mergesort")
    ys = y[order]
    ss = scores[order]
    ap = 0.0
    tp = 0
    fp = 0
    prev_recall = 0.0
    i = 0
    n = y.shape[0]
    while i < n:
        j = i
        while j < n and ss[j] == ss[i]:
            j += 1
        tp += int((ys[i:j] == 1).sum())
        fp += (j - i) - int((ys[i:j] == 1).sum())
        recall = tp / n_pos
        precision = tp / (tp + fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j
    return float(ap)


def binary_metrics(y, scores) -> MetricReport:
    """AUROC, AUPRC, Brier, plus RMSE/MAE of the raw scores.

    Brier needs probabilities; raw scores outside [0, 1] are squashed through
    the logistic before scoring. Rank metrics use the raw scores. A single
    observed class yields NaN rank metrics with a flag.
    """
    y, scores = _check_lengths(y, scores)
    bad = set(np.unique(y)) - {0.0, 1.0}
    if bad:
        raise ValueError("binary labels must be 0/1, found %s" % (sorted(bad),))
    flags = []
    auroc = auroc_score(y, scores)
    auprc = auprc_score(y, scores)
    if math.isnan(auroc):
        flags.append("single_class")
    probs = scores
    if scores.min() < 0.0 or scores.max() > 1.0:
        probs = gates.sigmoid(scores)
    brier = float(np.mean((probs - y) ** 2))
    err = scores - y
    rmse = float(np.sqrt(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    return MetricReport(task="binary", n=y.shape[0], rmse=rmse, mae=mae,
                        auroc=auroc, auprc=auprc, brier=brier, flags=tuple(flags))


def self_check(report: MetricReport, internal_loss: float) -> list[str]:
    """Cross-checks between the engine's loss path and this module.

    Returns a list of findings (empty means all checks passed):
    - RMSE must be >= MAE (power-mean inequality);
    - the engine's internal RMSE must match the external one to 1e-9 relative;
    - a held-out R^2 below -1 is flagged as an implausible run.
    """
    findings = []
    if report.rmse < report.mae:
        findings.append("rmse_lt_mae: rmse=%r mae=%r" % (report.rmse, report.mae))
    tol = INTERNAL_EXTERNAL_RTOL * (1.0 + abs(report.rmse))
    if not math.isfinite(internal_loss) or abs(internal_loss - report.rmse) > tol:
        findings.append(
            "internal_external_mismatch: internal=%r external=%r" % (internal_loss, report.rmse)
        )
    if report.r2 is not None and math.isfinite(report.r2) and report.r2 < R2_ANOMALY_FLOOR:
        findings.append("implausible_r2: r2=%r" % (report.r2,))
    return findings
