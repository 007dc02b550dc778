"""Classification metrics for toxicity predictions.

A trade is predicted toxic at cutoff ``c`` when ``p > c`` (strict). AUC is
the Mann-Whitney statistic with half credit for ties, which equals the
trapezoidal area under the ROC curve traced over every cutoff.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

EWMA_DECAY = 1.0 / 3.0
EWMA_WINDOW = 5
FPR_GRID = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class ScoredTrade:
    p: float
    y: int
    ts: int = 0
    day_id: int = 0
    censored: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.y not in (0, 1):
            raise ValueError("y must be 0 or 1")


def _arrays(scored_or_p, y=None):
    if y is None:
        p = np.array([s.p for s in scored_or_p], float)
        y = np.array([s.y for s in scored_or_p], int)
    else:
        p = np.asarray(scored_or_p, float)
        y = np.asarray(y, int)
    return p, y


def tpr_fpr(p, y, cutoff: float) -> tuple[float | None, float | None]:
    """True and false positive rates at ``cutoff``; None when undefined."""
    p, y = np.asarray(p, float), np.asarray(y, int)
    yhat = p > cutoff
    pos, neg = y == 1, y == 0
    tpr = float(np.sum(yhat & pos) / pos.sum()) if pos.any() else None
    fpr = float(np.sum(yhat & neg) / neg.sum()) if neg.any() else None
    return tpr, fpr


def auc(p, y) -> float:
    """P(p+ > p-) + P(p+ = p-)/2 over all positive/negative pairs."""
    p, y = np.asarray(p, float), np.asarray(y, int)
    n1 = int(np.sum(y == 1))
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(p)  # average ranks give ties half credit
    u = ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def roc(p, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """ROC vertices ``(fpr, tpr, cutoffs)`` from (0,0) to (1,1).

    Vertex k uses the cutoff just below the k-th largest distinct score; the
    first vertex corresponds to cutoff +inf (report 1.0 for probabilities).
    """
    p, y = np.asarray(p, float), np.asarray(y, int)
    n1 = int(np.sum(y == 1))
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("ROC needs at least one positive and one negative")
    order = np.argsort(-p, kind="mergesort")
    ps, ys = p[order], y[order]
    last = np.r_[np.nonzero(np.diff(ps))[0], len(ps) - 1]
    tp = np.cumsum(ys)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / n1]
    fpr = np.r_[0.0, fp / n0]
    cutoffs = np.r_[np.inf, ps[last]]
    return fpr, tpr, cutoffs


def trapezoid_auc(fpr: np.ndarray, tpr: np.ndarray) -> float:
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) * 0.5))


def daily_auc(p, y, day_id, censored=None, include_censored: bool = False) -> dict[int, float]:
    """AUC per day; days with a single class are skipped."""
    p, y, day_id = np.asarray(p, float), np.asarray(y, int), np.asarray(day_id)
    keep = np.ones(len(y), bool)
    if censored is not None and not include_censored:
        keep &= ~np.asarray(censored, bool)
    out = {}
    for d in np.unique(day_id):
        m = keep & (day_id == d)
        if 0 < y[m].sum() < m.sum():
            out[int(d)] = auc(p[m], y[m])
    return out


def ewma_weights(n: int, decay: float = EWMA_DECAY, window: int = EWMA_WINDOW) -> np.ndarray:
    """Normalized weights for the last ``min(n, window)`` values, oldest first."""
    k = min(n, window)
    w = decay ** np.arange(k - 1, -1, -1, dtype=float)
    return w / w.sum()


def ewma_auc(values, decay: float = EWMA_DECAY, window: int = EWMA_WINDOW) -> np.ndarray:
    """Per-day weighted mean of up to ``window`` most recent values.

    The most recent day has weight 1, the one before ``decay``, and so on.
    """
    v = np.asarray(values, float)
    if len(v) == 0:
        raise ValueError("need at least one day")
    out = np.empty(len(v))
    for i in range(len(v)):
        seg = v[max(0, i + 1 - window):i + 1]
        out[i] = ewma_weights(len(seg), decay, window) @ seg
    return out


def interp_roc(fpr: np.ndarray, tpr: np.ndarray, grid: np.ndarray = FPR_GRID) -> np.ndarray:
    """TPR on an FPR grid; vertical ROC segments take their upper value."""
    # np.interp on the upper envelope: for repeated fpr keep the last (largest) tpr
    ufpr, idx = np.unique(fpr[::-1], return_index=True)
    utpr = tpr[::-1][idx]
    return np.interp(grid, ufpr, utpr)


def average_daily_roc(p, y, day_id, grid: np.ndarray = FPR_GRID,
                      censored=None, include_censored: bool = False) -> np.ndarray:
    """Mean over days of each day's ROC sampled at ``grid``."""
    p, y, day_id = np.asarray(p, float), np.asarray(y, int), np.asarray(day_id)
    keep = np.ones(len(y), bool)
    if censored is not None and not include_censored:
        keep &= ~np.asarray(censored, bool)
    curves = []
    for d in np.unique(day_id):
        m = keep & (day_id == d)
        if 0 < y[m].sum() < m.sum():
            fpr, tpr, _ = roc(p[m], y[m])
            curves.append(interp_roc(fpr, tpr, grid))
    if not curves:
        raise ValueError("no day has both classes")
    return np.mean(curves, axis=0)


METRICS_HEADER = ["day_id", "model", "horizon_us", "auc", "n_trades"]
ROC_HEADER = ["model", "horizon_us", "cutoff", "fpr", "tpr"]


def write_metrics(path, rows) -> None:
    """Rows are ``(day_id, model, horizon_us, auc, n_trades)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for d, m, h, a, n in rows:
            w.writerow([d, m, h, repr(float(a)), n])


def write_roc(path, rows) -> None:
    """Rows are ``(model, horizon_us, cutoff, fpr, tpr)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROC_HEADER)
        for m, h, c, f, t in rows:
            w.writerow([m, h, repr(float(c)), repr(float(f)), repr(float(t))])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
