"""Accuracy, ROC AUC, precision-recall curves and relative feature cost."""
from __future__ import annotations

import csv
import json
import time

import numpy as np
from scipy.stats import rankdata

from .errors import DomainError

EXACT_AUC_LIMIT = 10_000


def _pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    if s.size == 0:
        raise ValueError("empty input")
    return s, y


def _need_both(y: np.ndarray) -> None:
    if not (np.any(y == 1) and np.any(y == 0)):
        raise DomainError("both classes must be present")


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    s, y = _pair(scores, labels)
    return float(np.mean((s >= threshold).astype(np.int64) == y))


def roc_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie).

    Up to ``EXACT_AUC_LIMIT`` samples this counts all pairs; above that it
    uses the equivalent midrank (Mann-Whitney U) formula.
    """
    s, y = _pair(scores, labels)
    _need_both(y)
    pos, neg = s[y == 1], s[y == 0]
    if s.size <= EXACT_AUC_LIMIT:
        neg_sorted = np.sort(neg)
        lt = np.searchsorted(neg_sorted, pos, side="left")
        le = np.searchsorted(neg_sorted, pos, side="right")
        wins = lt.sum() + 0.5 * (le - lt).sum()
        return float(wins / (pos.size * neg.size))
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def roc_curve(scores, labels) -> np.ndarray:
    """(fpr, tpr) rows, one per distinct threshold in descending order, starting at (0, 0)."""
    s, y = _pair(scores, labels)
    _need_both(y)
    tp, fp, thr = _cumulative(s, y)
    return np.column_stack([np.r_[0.0, fp / fp[-1]], np.r_[0.0, tp / tp[-1]]])


def _cumulative(s, y):
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1]
    tp = np.cumsum(y)[last].astype(np.float64)
    fp = np.cumsum(1 - y)[last].astype(np.float64)
    return tp, fp, s[last]


def pr_curve(scores, labels) -> np.ndarray:
    """(recall, precision, threshold) rows, thresholds descending over distinct scores.

    A point predicts positive for every score >= its threshold.
    """
    s, y = _pair(scores, labels)
    _need_both(y)
    tp, fp, thr = _cumulative(s, y)
    return np.column_stack([tp / y.sum(), tp / (tp + fp), thr])


def write_pr_csv(curve: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["recall", "precision"])
        for r, p in curve[:, :2]:
            w.writerow([repr(float(r)), repr(float(p))])


def metrics_report(scores, labels, threshold: float = 0.5) -> dict:
    """ACC in percent, AUC as a fraction, plus class counts."""
    s, y = _pair(scores, labels)
    return {
        "n": int(s.size), "n_pos": int(y.sum()), "n_neg": int((1 - y).sum()),
        "acc": 100.0 * accuracy(s, y, threshold), "auc": roc_auc(s, y),
    }


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cost_benchmark(features, edges, repeats: int = 1, clock=time.perf_counter) -> list[tuple[str, float]]:
    """Median wall time per edge of each ``(name, fn)`` feature, normalised to the cheapest.

    ``fn`` is called as ``fn(edge)``.  The result keeps the input order.
    """
    features = list(features)
    edges = list(edges)
    if not features:
        raise ValueError("need at least one feature")
    medians = []
    for _, fn in features:
        times = []
        for e in edges:
            t0 = clock()
            for _ in range(repeats):
                fn(e)
            times.append((clock() - t0) / repeats)
        medians.append(float(np.median(times)) if times else 0.0)
    base = min(medians)
    base = base if base > 0 else 1.0
    return [(name, m / base) for (name, _), m in zip(features, medians)]
