"""Dropout MLP trained by momentum SGD, and AdaBoost over decision stumps."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import FormatError, StateError
from .learn._io import expect_size, read_blob, write_blob

MAGIC = "MODEL1"
log = logging.getLogger(__name__)

_P_LO = np.finfo(np.float64).tiny
_P_HI = 1.0 - np.finfo(np.float64).epsneg


# -- row sources --------------------------------------------------------------

class ArrayRows:
    """Row source over an in-memory matrix."""

    def __init__(self, X, y):
        self.X = np.asarray(X)
        self.y = np.asarray(y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"X has shape {self.X.shape} but y has {self.y.shape[0]} entries")

    def __len__(self):
        return self.X.shape[0]

    @property
    def dims(self) -> int:
        return self.X.shape[1]

    def rows(self, idx) -> np.ndarray:
        return self.X[idx]


def _as_source(X, y):
    return X if hasattr(X, "rows") else ArrayRows(X, y)


def _check_labels(y: np.ndarray) -> None:
    vals = np.unique(y)
    if not np.all(np.isin(vals, (0, 1))):
        raise ValueError(f"labels must be 0/1, got {vals.tolist()}")
    if vals.size < 2:
        raise ValueError("training labels contain a single class")


def standardizer(src, max_rows: int = 20000) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and std over (an evenly strided subset of) the rows."""
    n = len(src)
    idx = np.arange(n) if n <= max_rows else np.linspace(0, n - 1, max_rows).astype(np.int64)
    rows = np.asarray(src.rows(idx), dtype=np.float64)
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std[std < 1e-12] = 1.0
    return mean, std


# -- MLP ----------------------------------------------------------------------

@dataclass
class MLPConfig:
    hidden: tuple = (200,)
    dropout: float = 0.5
    updates: int = 500_000
    lr: float = 0.01
    momentum: float = 0.9
    decay_at: tuple = (0.6, 0.85)
    batch: int = 32
    seed: int = 0
    dtype: str = "float32"
    # global gradient-norm cap (None disables); without it lr 0.01 diverges on thousand-column inputs
    clip: float | None = 1.0


@dataclass
class MLPModel:
    weights: list
    biases: list
    mean: np.ndarray
    std: np.ndarray
    dropout: float = 0.5
    seed: int = 0
    loss_trace: list = field(default_factory=list)
    train_accuracy: float | None = None
    meta: dict = field(default_factory=dict)  # provenance, e.g. the feature layout trained on

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def save(self, path) -> None:
        header = {
            "magic": MAGIC, "kind": "mlp", "sizes": self.sizes, "dropout": self.dropout, "seed": self.seed,
            "mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std],
            "train_accuracy": self.train_accuracy, "meta": self.meta,
        }
        arrays = [a for w, b in zip(self.weights, self.biases) for a in (w.ravel(), b.ravel())]
        write_blob(path, header, arrays)


def init_mlp(sizes, seed: int = 0, dtype=np.float32):
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        ws.append((rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)).astype(dtype))
        bs.append(np.zeros(fan_out, dtype=dtype))
    return ws, bs


def forward_backward(ws, bs, x, y, masks=None):
    """Mean cross-entropy and its gradients for standardized inputs ``x``.

    ``masks`` are inverted-dropout multipliers per hidden layer (None disables dropout).
    """
    acts, pre = [x], []
    h = x
    for i, (w, b) in enumerate(zip(ws, bs)):
        z = h @ w + b
        pre.append(z)
        if i < len(ws) - 1:
            h = np.maximum(z, 0)
            if masks is not None:
                h = h * masks[i]
            acts.append(h)
    z = pre[-1][:, 0]
    yf = y.astype(z.dtype)
    loss = float(np.mean(np.logaddexp(0.0, z) - yf * z))
    delta = ((expit(z) - yf) / z.shape[0])[:, None].astype(z.dtype)
    gw, gb = [None] * len(ws), [None] * len(ws)
    for i in range(len(ws) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = delta @ ws[i].T
            if masks is not None:
                delta = delta * masks[i - 1]
            delta = delta * (pre[i - 1] > 0)
    return loss, gw, gb


def _logits(model: MLPModel, X) -> np.ndarray:
    dt = model.weights[0].dtype
    h = ((np.asarray(X, dtype=np.float64) - model.mean) / model.std).astype(dt)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if i < len(model.weights) - 1:
            h = np.maximum(h, 0)
    return h[:, 0].astype(np.float64)


def train_mlp(X, y=None, cfg: MLPConfig | None = None, log_every: int = 0) -> MLPModel:
    """Minibatch SGD with momentum and inverted dropout on cross-entropy.

    ``X`` is a matrix or a row source (``len``, ``rows(idx)``, ``y``), the
    latter letting augmented rows be produced on demand.  Batches walk
    seeded permutations epoch by epoch.
    """
    cfg = cfg or MLPConfig()
    src = _as_source(X, y)
    labels = np.asarray(src.y, dtype=np.int64)
    _check_labels(labels)
    dtype = np.dtype(cfg.dtype)
    mean, std = standardizer(src)
    sizes = [src.dims, *cfg.hidden, 1]
    ws, bs = init_mlp(sizes, cfg.seed, dtype)
    vw = [np.zeros_like(w) for w in ws]
    vb = [np.zeros_like(b) for b in bs]
    rng = np.random.default_rng(cfg.seed + 1)
    keep = 1.0 - cfg.dropout
    n = len(src)
    batch = min(cfg.batch, n)
    order, pos = rng.permutation(n), 0
    trace = []
    for step in range(cfg.updates):
        lr = cfg.lr * 0.1 ** sum(step >= f * cfg.updates for f in cfg.decay_at)
        if pos + batch > n:
            order, pos = rng.permutation(n), 0
        idx = np.sort(order[pos:pos + batch])
        pos += batch
        xb = ((np.asarray(src.rows(idx), dtype=np.float64) - mean) / std).astype(dtype)
        masks = None
        if cfg.dropout > 0:
            masks = [((rng.random((batch, h)) < keep) / keep).astype(dtype) for h in cfg.hidden]
        loss, gw, gb = forward_backward(ws, bs, xb, labels[idx], masks)
        trace.append(loss)
        if cfg.clip is not None:
            norm = np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in (*gw, *gb)))
            if norm > cfg.clip:
                scale = dtype.type(cfg.clip / norm)
                gw = [g * scale for g in gw]
                gb = [g * scale for g in gb]
        for i in range(len(ws)):
            vw[i] = (cfg.momentum * vw[i] - lr * gw[i]).astype(dtype)
            vb[i] = (cfg.momentum * vb[i] - lr * gb[i]).astype(dtype)
            ws[i] += vw[i]
            bs[i] += vb[i]
        if log_every and (step + 1) % log_every == 0:
            log.info("update %d/%d loss %.4f", step + 1, cfg.updates, float(np.mean(trace[-log_every:])))
    model = MLPModel(ws, bs, mean, std, cfg.dropout, cfg.seed, trace)
    if isinstance(src, ArrayRows):
        model.train_accuracy = float(np.mean((predict_mlp(model, src.X) >= 0.5) == labels))
    return model


def predict_mlp(model: MLPModel, X) -> np.ndarray:
    """Probabilities in (0, 1); dropout is off (weights are already inverted-scaled)."""
    X = np.atleast_2d(np.asarray(X))
    if X.shape[1] != model.sizes[0]:
        raise ValueError(f"model expects {model.sizes[0]} columns, got {X.shape[1]}")
    return np.clip(expit(_logits(model, X)), _P_LO, _P_HI)


# -- boosting -----------------------------------------------------------------

@dataclass
class BoostModel:
    features: list = field(default_factory=list)
    thresholds: list = field(default_factory=list)
    polarities: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    dims: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def rounds(self) -> int:
        return len(self.alphas)

    def save(self, path) -> None:
        header = {
            "magic": MAGIC, "kind": "boost", "dims": self.dims, "rounds": self.rounds,
            "features": [int(f) for f in self.features], "thresholds": [float(t) for t in self.thresholds],
            "polarities": [int(p) for p in self.polarities], "errors": [float(e) for e in self.errors],
            "alphas": [float(a) for a in self.alphas], "meta": self.meta,
        }
        write_blob(path, header, [np.asarray(self.alphas, dtype=np.float64)])


def _best_stump(X: np.ndarray, ypm: np.ndarray, w: np.ndarray):
    """Minimum weighted-error stump; ties go to the lowest feature, then lowest threshold."""
    best = (np.inf, 0, 0.0, 1)
    pos_w = np.where(ypm > 0, w, 0.0)
    neg_w = np.where(ypm < 0, w, 0.0)
    total = w.sum()
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        v = X[order, j]
        # error of "predict +1 above threshold" when the split is before index i
        cp = np.concatenate([[0.0], np.cumsum(pos_w[order])])
        cn = np.concatenate([[0.0], np.cumsum(neg_w[order])])
        err_plus = cp + (cn[-1] - cn)
        cut = np.concatenate([[True], v[1:] > v[:-1], [True]])
        cut[-1] = False  # threshold above the maximum duplicates the one below the minimum
        ii = np.flatnonzero(cut)
        thr = np.where(ii == 0, v[0] - 1.0, (v[np.maximum(ii - 1, 0)] + v[np.minimum(ii, len(v) - 1)]) / 2.0)
        e_plus = err_plus[ii]
        e_minus = total - e_plus
        for errs, pol in ((e_plus, 1), (e_minus, -1)):
            k = int(np.argmin(errs))
            # among equal errors pick the lowest threshold (ii increasing means thresholds increasing)
            if errs[k] < best[0] or (errs[k] == best[0] and j == best[1] and thr[k] < best[2]):
                best = (float(errs[k]), j, float(thr[k]), pol)
    return best


def stump_predict(X: np.ndarray, feature: int, threshold: float, polarity: int) -> np.ndarray:
    return np.where(X[:, feature] > threshold, polarity, -polarity)


def train_boost(X, y, rounds: int = 200) -> BoostModel:
    """Discrete AdaBoost; stops early on a perfect stump or one no better than chance."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_labels(y)
    ypm = np.where(y == 1, 1, -1)
    w = np.full(X.shape[0], 1.0 / X.shape[0])
    model = BoostModel(dims=X.shape[1])
    for _ in range(rounds):
        err, j, thr, pol = _best_stump(X, ypm, w)
        err = max(err, 0.0)
        if err >= 0.5:
            break
        e = max(err, 1e-10)
        alpha = 0.5 * np.log((1.0 - e) / e)
        h = stump_predict(X, j, thr, pol)
        model.features.append(j)
        model.thresholds.append(thr)
        model.polarities.append(pol)
        model.alphas.append(float(alpha))
        model.errors.append(err)
        if err == 0.0:
            break
        w = w * np.exp(-alpha * ypm * h)
        w /= w.sum()
    return model


def boost_margin(model: BoostModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.dims:
        raise ValueError(f"model expects {model.dims} columns, got {X.shape[1]}")
    score = np.zeros(X.shape[0])
    for j, t, p, a in zip(model.features, model.thresholds, model.polarities, model.alphas):
        score += a * stump_predict(X, j, t, p)
    return score


def predict_boost(model: BoostModel, X) -> np.ndarray:
    """Logistic transform of the weighted stump vote (monotone in the margin)."""
    return np.clip(expit(2.0 * boost_margin(model, X)), _P_LO, _P_HI)


# -- persistence --------------------------------------------------------------

def load_model(path):
    header, values = read_blob(path, MAGIC)
    kind = header.get("kind")
    if kind == "mlp":
        sizes = [int(s) for s in header["sizes"]]
        n = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
        expect_size(values, n, "model payload")
        ws, bs, pos = [], [], 0
        for a, b in zip(sizes[:-1], sizes[1:]):
            ws.append(values[pos:pos + a * b].reshape(a, b).copy())
            pos += a * b
            bs.append(values[pos:pos + b].copy())
            pos += b
        return MLPModel(ws, bs, np.asarray(header["mean"]), np.asarray(header["std"]),
                        float(header["dropout"]), int(header["seed"]), train_accuracy=header.get("train_accuracy"),
                        meta=header.get("meta") or {})
    if kind == "boost":
        expect_size(values, int(header["rounds"]), "model payload")
        return BoostModel(list(header["features"]), list(header["thresholds"]), list(header["polarities"]),
                          [float(v) for v in header.get("alphas", values)], list(header["errors"]), int(header["dims"]),
                          header.get("meta") or {})
    raise FormatError(f"unknown model kind {kind!r}")


def predict(model, X) -> np.ndarray:
    if isinstance(model, MLPModel):
        return predict_mlp(model, X)
    if isinstance(model, BoostModel):
        return predict_boost(model, X)
    raise StateError(f"not a trained model: {type(model).__name__}")
