import itertools
import time

import numpy as np
import pytest

from voxmerge.errors import DomainError
from voxmerge.evaluation import accuracy, cost_benchmark, metrics_report, pr_curve, roc_auc, write_pr_csv


def test_accuracy(rng):
    y = rng.integers(0, 2, 100)
    assert accuracy(y.astype(float), y) == 1.0
    s = rng.random(100)
    assert accuracy(s, y) == sum((a >= 0.5) == b for a, b in zip(s, y)) / 100
    assert accuracy(1.0 - y, y) == 0.0
    with pytest.raises(ValueError):
        accuracy([], [])


def test_auc_cases_and_oracle(rng):
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.3] * 6, [0, 1] * 3) == 0.5
    for _ in range(10):
        s = np.round(rng.random(200), 2)  # coarse scores force ties
        y = rng.integers(0, 2, 200)
        pos, neg = s[y == 1], s[y == 0]
        pairs = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in itertools.product(pos, neg))
        assert roc_auc(s, y) == pytest.approx(pairs / (len(pos) * len(neg)), abs=1e-12)
        assert roc_auc(np.exp(3 * s), y) == roc_auc(s, y)
    with pytest.raises(DomainError):
        roc_auc([0.1, 0.2], [1, 1])


def test_auc_large_path_agrees(rng):
    s = np.round(rng.random(12000), 3)
    y = rng.integers(0, 2, 12000)
    small = roc_auc(s[:9000], y[:9000])
    from voxmerge import evaluation

    old = evaluation.EXACT_AUC_LIMIT
    evaluation.EXACT_AUC_LIMIT = 10
    try:
        assert roc_auc(s[:9000], y[:9000]) == pytest.approx(small, abs=1e-12)
    finally:
        evaluation.EXACT_AUC_LIMIT = old


def brute_pr(s, y):
    out = []
    for t in sorted(set(s), reverse=True):
        pred = s >= t
        tp = int(np.sum(pred & (y == 1)))
        out.append((tp / y.sum(), tp / pred.sum()))
    return np.array(out)


def test_pr_curve(rng, tmp_path):
    c = pr_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    # precision 1 is reached at every recall level
    assert all(c[c[:, 0] == r][:, 1].max() == 1.0 for r in np.unique(c[:, 0]))
    c = pr_curve([0.9, 0.5, 0.4, 0.3], [1, 0, 0, 0])
    assert tuple(c[0, :2]) == (1.0, 1.0)
    for _ in range(5):
        s = np.round(rng.random(80), 1)
        y = rng.integers(0, 2, 80)
        c = pr_curve(s, y)
        assert np.allclose(c[:, :2], brute_pr(s, y))
        assert np.all(np.diff(c[:, 0]) >= 0)
        # the best accuracy over all thresholds is attained at a reported threshold
        best = max(accuracy(s, y, t) for t in np.r_[s, 2.0])
        assert max(max(accuracy(s, y, t) for t in c[:, 2]), accuracy(s, y, 2.0)) == best
    write_pr_csv(c, tmp_path / "pr.csv")
    lines = (tmp_path / "pr.csv").read_text().splitlines()
    assert lines[0] == "recall,precision" and len(lines) == len(c) + 1


def test_metrics_report_units():
    r = metrics_report([0.0, 1.0, 1.0], [0, 1, 1])
    assert r["acc"] == 100.0 and r["auc"] == 1.0 and (r["n_pos"], r["n_neg"]) == (2, 1)


def test_cost_benchmark_ratio_and_order():
    edges = list(range(10))
    out = cost_benchmark([("slow", lambda e: time.sleep(0.003)), ("fast", lambda e: time.sleep(0.001))], edges)
    assert [n for n, _ in out] == ["slow", "fast"]
    assert out[1][1] == 1.0 and out[0][1] == pytest.approx(3.0, rel=0.2)
    assert cost_benchmark([("only", lambda e: None)], edges) == [("only", 1.0)]


def test_cost_benchmark_fake_clock():
    ticks = iter(range(0, 1000, 1))
    clock = lambda: next(ticks)  # each call advances by one
    out = cost_benchmark([("a", lambda e: None), ("b", lambda e: (next(ticks), next(ticks)))], range(10), clock=clock)
    assert out == [("a", 1.0), ("b", 3.0)]
