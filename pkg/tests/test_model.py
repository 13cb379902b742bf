import numpy as np
import pytest

from voxmerge.model import (
    MLPConfig, MLPModel, boost_margin, forward_backward, init_mlp, load_model, predict, predict_mlp, train_boost,
    train_mlp,
)


def test_gradient_check(rng):
    ws, bs = init_mlp([5, 7, 6, 1], seed=1, dtype=np.float64)
    x = rng.normal(size=(9, 5))
    y = rng.integers(0, 2, 9)
    _, gw, gb = forward_backward(ws, bs, x, y)
    params = [(ws, gw, i) for i in range(3)] + [(bs, gb, i) for i in range(3)]
    h = 1e-6
    for k in range(10):
        arrs, grads, i = params[k % len(params)]
        idx = tuple(int(rng.integers(0, s)) for s in arrs[i].shape)
        old = arrs[i][idx]
        arrs[i][idx] = old + h
        up = forward_backward(ws, bs, x, y)[0]
        arrs[i][idx] = old - h
        down = forward_backward(ws, bs, x, y)[0]
        arrs[i][idx] = old
        num = (up - down) / (2 * h)
        ana = grads[i][idx]
        assert abs(num - ana) <= 1e-4 * max(abs(num), abs(ana), 1e-6)


def test_xor():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], float)
    y = np.array([0, 1, 1, 0])
    m = train_mlp(X, y, MLPConfig(hidden=(16,), dropout=0.0, updates=20000, lr=0.05, batch=4, seed=0))
    assert np.array_equal((predict_mlp(m, X) >= 0.5).astype(int), y)
    assert m.train_accuracy == 1.0


def test_bias_only_model():
    m = MLPModel([np.zeros((3, 1))], [np.array([0.7])], np.zeros(3), np.ones(3))
    assert np.allclose(predict_mlp(m, np.zeros((2, 3))), 1 / (1 + np.exp(-0.7)))


def test_predict_properties(rng, tmp_path):
    X = rng.normal(size=(200, 6))
    y = (X[:, 0] + 0.3 * rng.normal(size=200) > 0).astype(int)
    cfg = MLPConfig(hidden=(8,), updates=2000, seed=5)
    m = train_mlp(X, y, cfg)
    p = predict_mlp(m, np.vstack([X[:1], X[:1]]))
    assert p[0] == p[1]
    assert np.all((predict_mlp(m, X) > 0) & (predict_mlp(m, X) < 1))
    m.save(tmp_path / "m.model")
    back = load_model(tmp_path / "m.model")
    assert np.mean((predict(back, X) >= 0.5) == y) == pytest.approx(m.train_accuracy)
    with pytest.raises(ValueError):
        predict_mlp(m, X[:, :5])
    # same seed and data: bit-identical parameters
    m2 = train_mlp(X, y, cfg)
    assert all(np.array_equal(a, b) for a, b in zip(m.weights, m2.weights))


def test_loss_trace_decreases(rng):
    X = rng.normal(size=(500, 4))
    y = (X @ [1, -1, 0.5, 0] > 0).astype(int)
    m = train_mlp(X, y, MLPConfig(hidden=(16,), updates=5000, seed=2))
    trace = np.asarray(m.loss_trace)
    assert np.all(np.isfinite(trace))
    w = len(trace) // 5
    means = [trace[i * w:(i + 1) * w].mean() for i in range(5)]
    assert all(b <= a + 1e-3 for a, b in zip(means, means[1:]))


def test_clip_bounds_first_step(rng):
    X = rng.normal(size=(64, 3000))
    y = (X[:, 0] > 0).astype(int)
    cfg = MLPConfig(hidden=(32,), updates=1, lr=1.0, dropout=0.0, batch=64, seed=1, dtype="float64", clip=0.5)
    w0, b0 = init_mlp([3000, 32, 1], 1, np.float64)
    m = train_mlp(X, y, cfg)
    step = np.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(m.weights + m.biases, w0 + b0)))
    assert step <= 0.5 + 1e-9


def test_standardization_affine_invariance(rng):
    X = rng.normal(size=(300, 3))
    y = (X[:, 1] > 0).astype(int)
    cfg = MLPConfig(hidden=(8,), updates=1000, seed=4, dtype="float64")
    a = train_mlp(X, y, cfg)
    b = train_mlp(X * 7.0 + 3.0, y, cfg)
    assert np.allclose(predict_mlp(a, X), predict_mlp(b, X * 7.0 + 3.0), atol=1e-9)


def test_single_class_rejected():
    with pytest.raises(ValueError):
        train_mlp(np.zeros((4, 2)), np.ones(4, int), MLPConfig(updates=10))
    with pytest.raises(ValueError):
        train_boost(np.zeros((4, 2)), np.zeros(4, int))


def test_boost_separable_one_round():
    X = np.array([[0.1], [0.2], [0.7], [0.9]])
    m = train_boost(X, np.array([0, 0, 1, 1]), rounds=50)
    assert m.rounds == 1 and m.errors[0] == 0
    assert m.thresholds[0] == pytest.approx(0.45)


def reference_adaboost(X, y, rounds):
    """Straightforward AdaBoost over every (feature, midpoint threshold, polarity)."""
    ypm = np.where(y == 1, 1.0, -1.0)
    w = np.full(len(y), 1 / len(y))
    margin = np.zeros(len(y))
    for _ in range(rounds):
        best = None
        for j in range(X.shape[1]):
            v = np.unique(X[:, j])
            thrs = np.r_[v[0] - 1, (v[1:] + v[:-1]) / 2]
            for t in thrs:
                for pol in (1, -1):
                    h = np.where(X[:, j] > t, pol, -pol)
                    err = w[h != ypm].sum()
                    if best is None or err < best[0] - 1e-15:
                        best = (err, h)
        err, h = best
        if err >= 0.5:
            break
        a = 0.5 * np.log((1 - max(err, 1e-10)) / max(err, 1e-10))
        margin += a * h
        if err == 0:
            break
        w = w * np.exp(-a * ypm * h)
        w /= w.sum()
    return margin


def test_boost_matches_reference(rng):
    X = np.round(rng.normal(size=(40, 3)), 2)
    y = (X[:, 0] + X[:, 1] ** 2 + 0.3 * rng.normal(size=40) > 0.5).astype(int)
    m = train_boost(X, y, rounds=15)
    assert all(e < 0.5 for e in m.errors)
    assert np.allclose(boost_margin(m, X), reference_adaboost(X, y, 15), atol=1e-9)


def test_boost_roundtrip(tmp_path, rng):
    X = rng.normal(size=(50, 2))
    y = (X[:, 0] > 0).astype(int)
    m = train_boost(X, y, 5)
    m.meta = {"blocks": [["x", 2]]}
    m.save(tmp_path / "b.model")
    back = load_model(tmp_path / "b.model")
    assert np.array_equal(predict(back, X), predict(m, X)) and back.meta == m.meta
