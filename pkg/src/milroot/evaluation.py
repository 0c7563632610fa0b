"""Pixel-level ROC curves, operating-point readouts and multi-run
aggregation.

Curves are exact: one point per distinct confidence value with ties
grouped, trapezoidal AUC, and a step rule (no interpolation) for
TPR-at-FPR lookups.  Aggregation reports the mean and unbiased variance
of TPR across repeated runs on the standard 0.01..0.06 FPR grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FPR_GRID = (0.01, 0.02, 0.03, 0.04, 0.05, 0.06)


@dataclass
class RocCurve:
    thresholds: np.ndarray  # descending; +inf first
    fpr: np.ndarray         # non-decreasing, starts 0 ends 1
    tpr: np.ndarray
    auc: float


def roc_curve(confidences: np.ndarray, gt: np.ndarray) -> RocCurve:
    """Exact ROC curve over pixels; gt is binary (1 = root)."""
    conf = np.asarray(confidences, dtype=np.float64).ravel()
    y = np.asarray(gt).ravel().astype(bool)
    if conf.shape != y.shape:
        raise ValueError("confidences and ground truth differ in size")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ground truth must contain both classes")

    order = np.argsort(-conf, kind="stable")
    sorted_conf = conf[order]
    sorted_pos = y[order].astype(np.int64)
    # group ties: take cumulative counts at the last index of each value run
    last = np.flatnonzero(np.diff(sorted_conf) != 0)
    last = np.append(last, conf.size - 1)
    tp = np.cumsum(sorted_pos)[last]
    fp = (last + 1) - tp
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    thresholds = np.concatenate([[np.inf], sorted_conf[last]])
    auc = float(np.trapz(tpr, fpr))
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=auc)


def tpr_at_fpr(curve: RocCurve, fpr: float) -> float:
    """TPR at the largest achieved FPR <= the requested one (step rule)."""
    if not 0.0 <= fpr <= 1.0:
        raise ValueError("fpr must be in [0, 1]")
    ok = curve.fpr <= fpr
    best_fpr = curve.fpr[ok].max()
    return float(curve.tpr[ok][curve.fpr[ok] == best_fpr].max())


def f_score(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    """Pixel F1 = 2TP / (2TP + FP + FN); 0 when the denominator is 0."""
    pred = np.asarray(pred_mask, dtype=bool)
    gt = np.asarray(gt_mask, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError("masks differ in shape")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


@dataclass
class RunAggregate:
    fpr_grid: tuple
    algorithms: list[str]
    mean: dict[str, np.ndarray]      # per algorithm, TPR mean over runs
    variance: dict[str, np.ndarray]  # unbiased variance over runs


def aggregate_runs(curves_by_algorithm: dict[str, list[RocCurve]],
                   fpr_grid=FPR_GRID) -> RunAggregate:
    """Mean and unbiased variance of TPR across runs per grid FPR."""
    mean, variance = {}, {}
    for algo, curves in curves_by_algorithm.items():
        if len(curves) < 2:
            raise ValueError(f"{algo}: need at least two runs to aggregate")
        tprs = np.array([[tpr_at_fpr(c, q) for q in fpr_grid] for c in curves])
        mean[algo] = tprs.mean(axis=0)
        variance[algo] = tprs.var(axis=0, ddof=1)
    return RunAggregate(fpr_grid=tuple(fpr_grid),
                        algorithms=sorted(curves_by_algorithm),
                        mean=mean, variance=variance)


def roc_to_csv(curve: RocCurve, path) -> None:
    with open(path, "w") as fh:
        fh.write("threshold,fpr,tpr\n")
        for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr):
            fh.write(f"{t!r},{f!r},{p!r}\n")


def roc_from_csv(path) -> RocCurve:
    rows = np.genfromtxt(path, delimiter=",", skip_header=1)
    tpr = rows[:, 2]
    fpr = rows[:, 1]
    return RocCurve(thresholds=rows[:, 0], fpr=fpr, tpr=tpr,
                    auc=float(np.trapz(tpr, fpr)))


def aggregate_to_csv(agg: RunAggregate, path) -> None:
    """Table-style CSV: one row per grid FPR, mean/var columns per algorithm."""
    with open(path, "w") as fh:
        cols = []
        for algo in agg.algorithms:
            cols += [f"{algo}_tpr_mean", f"{algo}_tpr_var"]
        fh.write("fpr," + ",".join(cols) + "\n")
        for gi, q in enumerate(agg.fpr_grid):
            vals = []
            for algo in agg.algorithms:
                vals += [repr(float(agg.mean[algo][gi])),
                         repr(float(agg.variance[algo][gi]))]
            fh.write(f"{q!r}," + ",".join(vals) + "\n")
