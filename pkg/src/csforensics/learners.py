"""Feature preprocessing and the two classifiers: one-vs-one linear SVM and a small CNN.

Both models serialize to versioned JSON (:func:`save_model`, :func:`load_model`).
Labels are handled internally as indices into :data:`~csforensics.core.LABEL_ORDER`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import LABEL_ORDER, ClassLabel, DimensionError, make_rng

__all__ = [
    "normalize_kernel",
    "NormalizationStats",
    "fit_normalization",
    "standardize",
    "SvmModel",
    "svm_train",
    "svm_predict",
    "svm_decision",
    "CnnConfig",
    "CnnModel",
    "cnn_init",
    "cnn_train",
    "cnn_predict",
    "cnn_forward",
    "cnn_loss_and_grads",
    "cnn_grad_check",
    "softmax",
    "save_model",
    "load_model",
    "MODEL_FORMAT_VERSION",
]

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
N_CLASSES = len(LABEL_ORDER)


def _label_indices(labels) -> np.ndarray:
    out = []
    for lab in labels:
        if isinstance(lab, ClassLabel):
            out.append(lab.index)
        elif isinstance(lab, str):
            out.append(ClassLabel(lab).index)
        else:
            idx = int(lab)
            if not 0 <= idx < N_CLASSES:
                raise ValueError(f"label index {idx} out of range")
            out.append(idx)
    return np.asarray(out, dtype=np.int64)


# -- preprocessing ----------------------------------------------------------


def normalize_kernel(kernel) -> np.ndarray:
    """Min-max map a kernel to ``[0, 1]`` and quantize to ``uint8``.

    A constant kernel maps to all zeros.

    Examples
    --------
    >>> normalize_kernel([[0, 5], [10, 15]])
    array([[  0,  85],
           [170, 255]], dtype=uint8)
    """
    k = np.asarray(kernel, dtype=np.float64)
    lo, hi = k.min(), k.max()
    if hi <= lo:
        return np.zeros(k.shape, dtype=np.uint8)
    scaled = (k - lo) / (hi - lo)
    return np.floor(scaled * 255.0 + 0.5).astype(np.uint8)


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise DimensionError("mean and std must be vectors of equal length")
        if np.any(self.std < 0):
            raise ValueError("standard deviations must be non-negative")

    @property
    def dim(self) -> int:
        return self.mean.size


def fit_normalization(features) -> NormalizationStats:
    """Per-feature sample mean and sample standard deviation (``ddof=1``)."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    std = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.zeros(X.shape[1])
    return NormalizationStats(X.mean(axis=0), std)


def standardize(features, stats: NormalizationStats) -> np.ndarray:
    """``(h - mean) / std`` per entry; zero deviations divide by 1 instead."""
    X = np.asarray(features, dtype=np.float64)
    if X.shape[-1] != stats.dim:
        raise DimensionError(f"feature length {X.shape[-1]} != {stats.dim}")
    divisor = np.where(stats.std > 0, stats.std, 1.0)
    return (X - stats.mean) / divisor


# -- linear SVM -------------------------------------------------------------


@dataclass
class _BinarySvm:
    pos: int
    neg: int
    w: np.ndarray | None
    b: float
    constant_vote: int | None = None  # set when only one class was present

    def decision(self, X):
        if self.constant_vote is not None:
            sign = 1.0 if self.constant_vote == self.pos else -1.0
            return np.full(X.shape[0], sign)
        return X @ self.w + self.b


@dataclass
class SvmModel:
    pairs: list
    c_reg: float
    stats: NormalizationStats | None = None
    tie_break: str = "summed-margin"

    @property
    def dim(self) -> int:
        for clf in self.pairs:
            if clf.w is not None:
                return clf.w.size
        return self.stats.dim if self.stats is not None else 0


def _optimal_bias(scores, y, c_reg):
    """Bias minimizing the hinge loss for fixed ``w`` (scores are ``w.x``)."""
    candidates = np.unique(y - scores)
    best_b, best = 0.0, np.inf
    for chunk in np.array_split(candidates, max(1, candidates.size // 256)):
        margins = y[None, :] * (scores[None, :] + chunk[:, None])
        loss = np.maximum(0.0, 1.0 - margins).sum(axis=1)
        k = int(np.argmin(loss))
        if loss[k] < best:
            best, best_b = loss[k], float(chunk[k])
    return best_b, c_reg * best


def _smo(X, y, c_reg, tol=1e-6, max_iter=None):
    """Dual soft-margin SVM by SMO with second-order working-set selection.

    Stops when the relative duality gap (primal evaluated with the optimal
    bias) falls below ``tol``.  Returns ``(w, b, gap, iterations)``.
    """
    n = y.size
    K = X @ X.T
    Q = (y[:, None] * y[None, :]) * K
    alpha = np.zeros(n)
    grad = -np.ones(n)
    diag = np.diag(K)
    # the cap is a safety net; at the 1e-6 gap hard pairs with large c_reg need ~5e5 steps
    max_iter = max_iter or max(2_000_000, 2000 * n)
    tau = 1e-12
    gap = np.inf
    it = 0

    def duality_gap():
        w = (alpha * y) @ X
        b, hinge = _optimal_bias(X @ w, y, c_reg)
        primal = 0.5 * w @ w + hinge
        dual = alpha.sum() - 0.5 * alpha @ (Q @ alpha)
        return w, b, (primal - dual) / max(abs(primal), 1e-12)

    for it in range(1, max_iter + 1):
        yg = -y * grad
        up = ((alpha < c_reg) & (y > 0)) | ((alpha > 0) & (y < 0))
        low = ((alpha < c_reg) & (y < 0)) | ((alpha > 0) & (y > 0))
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(yg[up])])
        m_up = yg[i]
        cand = low & (yg < m_up)
        if not cand.any() or m_up - yg[low].min() < 1e-12:
            break
        b_it = m_up - yg[cand]
        a_it = diag[i] + diag[cand] - 2 * K[i, cand]
        a_it = np.where(a_it > 0, a_it, tau)
        j = int(np.flatnonzero(cand)[np.argmax(b_it**2 / a_it)])

        # two-variable subproblem, as in LIBSVM
        yi, yj = y[i], y[j]
        quad = max(diag[i] + diag[j] - 2 * K[i, j], tau)
        ai_old, aj_old = alpha[i], alpha[j]
        if yi != yj:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > c_reg:
                    ai, aj = c_reg, c_reg - diff
            elif aj > c_reg:
                aj, ai = c_reg, c_reg + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > c_reg:
                if ai > c_reg:
                    ai, aj = c_reg, total - c_reg
            elif aj < 0:
                aj, ai = 0.0, total
            if total > c_reg:
                if aj > c_reg:
                    aj, ai = c_reg, total - c_reg
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        grad += Q[:, i] * (ai - ai_old) + Q[:, j] * (aj - aj_old)

        if it % 50 == 0:
            w, b, gap = duality_gap()
            if gap <= tol:
                return w, b, gap, it
    w, b, gap = duality_gap()
    if gap > tol:
        log.warning("SMO stopped with relative duality gap %.3g after %d iterations", gap, it)
    return w, b, gap, it


def svm_train(features, labels, c_reg: float = 1.0, tol: float = 1e-6,
              stats: NormalizationStats | None = None) -> SvmModel:
    """Train the three pairwise linear soft-margin SVMs (C vs J, C vs R, J vs R).

    ``features`` are expected to be standardized already; ``stats`` is only
    stored in the model for later use.
    """
    if c_reg <= 0:
        raise ValueError("c_reg must be positive")
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y_all = _label_indices(labels)
    if X.shape[0] != y_all.size:
        raise DimensionError("features and labels differ in length")
    pairs = []
    for pos, neg in combinations(range(N_CLASSES), 2):
        sel = (y_all == pos) | (y_all == neg)
        present = set(np.unique(y_all[sel]).tolist())
        if len(present) < 2:
            vote = present.pop() if present else pos
            log.warning("pair %s/%s has a single class; recording a constant vote",
                        LABEL_ORDER[pos].value, LABEL_ORDER[neg].value)
            pairs.append(_BinarySvm(pos, neg, None, 0.0, constant_vote=vote))
            continue
        y = np.where(y_all[sel] == pos, 1.0, -1.0)
        w, b, gap, its = _smo(X[sel], y, c_reg, tol)
        log.debug("pair %d/%d: gap %.2g after %d SMO steps", pos, neg, gap, its)
        pairs.append(_BinarySvm(pos, neg, w, b))
    return SvmModel(pairs, float(c_reg), stats)


def svm_decision(model: SvmModel, features):
    """Vote counts and summed signed margins per class, shape ``(n, 3)`` each."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if model.dim and X.shape[1] != model.dim:
        raise DimensionError(f"feature length {X.shape[1]} != {model.dim}")
    votes = np.zeros((X.shape[0], N_CLASSES))
    margins = np.zeros((X.shape[0], N_CLASSES))
    for clf in model.pairs:
        d = clf.decision(X)
        votes[:, clf.pos] += d > 0
        votes[:, clf.neg] += d <= 0
        margins[:, clf.pos] += d
        margins[:, clf.neg] -= d
    return votes, margins


def svm_predict(model: SvmModel, features):
    """Majority vote; ties go to the largest summed signed margin.

    Returns ``(labels, votes)`` for a batch, or ``(label, votes)`` for a single vector.
    """
    single = np.ndim(features) == 1
    votes, margins = svm_decision(model, features)
    top = votes == votes.max(axis=1, keepdims=True)
    # lexsort-free tie break: margins only matter among the top-voted classes
    masked = np.where(top, margins, -np.inf)
    idx = np.argmax(masked, axis=1)
    labels = [LABEL_ORDER[i] for i in idx]
    if single:
        return labels[0], votes[0]
    return labels, votes


# -- CNN --------------------------------------------------------------------

CNN_MODES = {
    "kernel": {"filters": 20, "size": 5, "lr": 3e-4},
    "pixel": {"filters": 30, "size": 3, "lr": 1e-4},
}


@dataclass
class CnnConfig:
    mode: str = "kernel"
    learning_rate: float | None = None
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.mode not in CNN_MODES:
            raise ValueError(f"mode must be one of {sorted(CNN_MODES)}")
        if self.learning_rate is None:
            self.learning_rate = CNN_MODES[self.mode]["lr"]


@dataclass
class CnnModel:
    """Single conv block: conv (valid) -> ReLU -> 2x2 max-pool -> dense -> softmax."""

    mode: str
    input_shape: tuple
    conv_w: np.ndarray  # (filters, size, size)
    conv_b: np.ndarray  # (filters,)
    fc_w: np.ndarray  # (features, 3)
    fc_b: np.ndarray  # (3,)
    config: CnnConfig = field(default_factory=CnnConfig)
    loss_history: list = field(default_factory=list)

    @property
    def params(self) -> dict:
        return {"conv_w": self.conv_w, "conv_b": self.conv_b, "fc_w": self.fc_w, "fc_b": self.fc_b}

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def _pooled_shape(input_shape, size):
    h, w = input_shape
    return (h - size + 1) // 2, (w - size + 1) // 2


def cnn_init(input_shape, mode: str = "kernel", seed: int = 0, config: CnnConfig | None = None) -> CnnModel:
    """He-normal conv filters, Glorot-normal dense weights, zero biases."""
    cfg = config or CnnConfig(mode=mode, seed=seed)
    spec = CNN_MODES[cfg.mode]
    nf, fs = spec["filters"], spec["size"]
    input_shape = tuple(int(s) for s in input_shape)
    ph, pw = _pooled_shape(input_shape, fs)
    if ph < 1 or pw < 1:
        raise DimensionError(f"input {input_shape} too small for {fs}x{fs} conv and 2x2 pooling")
    rng = make_rng(cfg.seed)
    n_feat = nf * ph * pw
    conv_w = rng.normal(0.0, np.sqrt(2.0 / (fs * fs)), (nf, fs, fs))
    fc_w = rng.normal(0.0, np.sqrt(2.0 / (n_feat + N_CLASSES)), (n_feat, N_CLASSES))
    return CnnModel(cfg.mode, input_shape, conv_w, np.zeros(nf), fc_w, np.zeros(N_CLASSES), cfg)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_inputs(model: CnnModel, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.shape[1:] != tuple(model.input_shape):
        raise DimensionError(f"input shape {X.shape[1:]} != model input {tuple(model.input_shape)}")
    return X


def _forward(model: CnnModel, X):
    fs = model.conv_w.shape[1]
    windows = sliding_window_view(X, (fs, fs), axis=(1, 2))  # (n, oh, ow, fs, fs)
    pre = np.einsum("nijuv,fuv->nfij", windows, model.conv_w, optimize=True)
    pre += model.conv_b[None, :, None, None]
    act = np.maximum(pre, 0.0)
    n, nf, oh, ow = act.shape
    ph, pw = oh // 2, ow // 2
    blocks = act[:, :, : 2 * ph, : 2 * pw].reshape(n, nf, ph, 2, pw, 2)
    pooled = blocks.max(axis=(3, 5))
    feats = pooled.reshape(n, -1)
    logits = feats @ model.fc_w + model.fc_b
    cache = (windows, pre, blocks, pooled, feats)
    return logits, cache


def cnn_forward(model: CnnModel, X) -> np.ndarray:
    """Softmax class probabilities, shape ``(n, 3)``."""
    logits, _ = _forward(model, _check_inputs(model, X))
    return softmax(logits)


def cnn_loss_and_grads(model: CnnModel, X, labels):
    """Mean cross-entropy and its gradient for every parameter group."""
    X = _check_inputs(model, X)
    y = _label_indices(np.atleast_1d(labels))
    n = X.shape[0]
    logits, (windows, pre, blocks, pooled, feats) = _forward(model, X)
    probs = softmax(logits)
    loss = -np.mean(np.log(np.maximum(probs[np.arange(n), y], 1e-300)))

    d_logits = probs.copy()
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    g_fc_w = feats.T @ d_logits
    g_fc_b = d_logits.sum(axis=0)
    d_pooled = (d_logits @ model.fc_w.T).reshape(pooled.shape)

    # route pooled gradients to the first maximum of each 2x2 block
    nb, nf, ph, _, pw, _ = blocks.shape
    flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(nb, nf, ph, pw, 4)
    first = flat.argmax(axis=-1)
    d_flat = np.zeros_like(flat)
    np.put_along_axis(d_flat, first[..., None], d_pooled[..., None], axis=-1)
    d_blocks = d_flat.reshape(nb, nf, ph, pw, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    d_act = np.zeros_like(pre)
    d_act[:, :, : 2 * ph, : 2 * pw] = d_blocks.reshape(nb, nf, 2 * ph, 2 * pw)
    d_pre = d_act * (pre > 0)

    g_conv_w = np.einsum("nfij,nijuv->fuv", d_pre, windows, optimize=True)
    g_conv_b = d_pre.sum(axis=(0, 2, 3))
    grads = {"conv_w": g_conv_w, "conv_b": g_conv_b, "fc_w": g_fc_w, "fc_b": g_fc_b}
    return loss, grads


def cnn_train(inputs, labels, config: CnnConfig | None = None, model: CnnModel | None = None) -> CnnModel:
    """Mini-batch SGD with momentum on the softmax cross-entropy.

    The sample order is reshuffled every epoch from ``config.seed``; the
    mean training loss of each epoch is appended to ``model.loss_history``.
    """
    cfg = config or CnnConfig()
    X = np.asarray(inputs, dtype=np.float64)
    y = _label_indices(labels)
    if X.ndim != 3 or X.shape[0] != y.size:
        raise DimensionError("inputs must be (n, h, w) with one label per input")
    missing = sorted(set(range(N_CLASSES)) - set(y.tolist()))
    if missing:
        raise ValueError(f"no training samples for class(es) {[LABEL_ORDER[i].value for i in missing]}")
    if model is None:
        model = cnn_init(X.shape[1:], config=cfg)
    model.config = cfg
    rng = make_rng(cfg.seed + 1)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    for epoch in range(cfg.epochs):
        order = rng.permutation(y.size)
        total = 0.0
        for start in range(0, y.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = cnn_loss_and_grads(model, X[idx], y[idx])
            total += loss * idx.size
            for name, param in model.params.items():
                velocity[name] *= cfg.momentum
                velocity[name] -= cfg.learning_rate * grads[name]
                param += velocity[name]
        model.loss_history.append(total / y.size)
        log.debug("cnn epoch %d: loss %.5f", epoch + 1, model.loss_history[-1])
    return model


def cnn_predict(model: CnnModel, inputs):
    """Argmax labels and softmax probabilities (batch or single input)."""
    single = np.ndim(inputs) == 2
    probs = cnn_forward(model, inputs)
    labels = [LABEL_ORDER[i] for i in np.argmax(probs, axis=1)]
    if single:
        return labels[0], probs[0]
    return labels, probs


def cnn_grad_check(model: CnnModel, inputs, labels, step: float = 1e-5) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The error of a parameter group is ``||g_a - g_n|| / max(||g_a|| + ||g_n||, 1e-12)``.
    """
    _, grads = cnn_loss_and_grads(model, inputs, labels)
    worst = 0.0
    for name, param in model.params.items():
        numeric = np.zeros_like(param)
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = param[i]
            param[i] = orig + step
            up, _ = cnn_loss_and_grads(model, inputs, labels)
            param[i] = orig - step
            down, _ = cnn_loss_and_grads(model, inputs, labels)
            param[i] = orig
            numeric[i] = (up - down) / (2 * step)
        err = np.linalg.norm(grads[name] - numeric) / max(
            np.linalg.norm(grads[name]) + np.linalg.norm(numeric), 1e-12
        )
        worst = max(worst, float(err))
    return worst


# -- serialization ----------------------------------------------------------


def _stats_to_json(stats):
    if stats is None:
        return None
    return {"mean": stats.mean.tolist(), "std": stats.std.tolist()}


def _stats_from_json(obj):
    return None if obj is None else NormalizationStats(obj["mean"], obj["std"])


def model_to_dict(model) -> dict:
    if isinstance(model, SvmModel):
        return {
            "format": "csforensics-model",
            "version": MODEL_FORMAT_VERSION,
            "type": "svm",
            "labels": [lab.value for lab in LABEL_ORDER],
            "c_reg": model.c_reg,
            "tie_break": model.tie_break,
            "normalization": _stats_to_json(model.stats),
            "pairs": [
                {
                    "pos": clf.pos,
                    "neg": clf.neg,
                    "w": None if clf.w is None else clf.w.tolist(),
                    "b": clf.b,
                    "constant_vote": clf.constant_vote,
                }
                for clf in model.pairs
            ],
        }
    if isinstance(model, CnnModel):
        cfg = model.config
        return {
            "format": "csforensics-model",
            "version": MODEL_FORMAT_VERSION,
            "type": "cnn",
            "labels": [lab.value for lab in LABEL_ORDER],
            "architecture": {
                "mode": model.mode,
                "input_shape": list(model.input_shape),
                "filters": int(model.conv_w.shape[0]),
                "filter_size": int(model.conv_w.shape[1]),
                "pool": 2,
                "outputs": N_CLASSES,
            },
            "trainer": {
                "learning_rate": cfg.learning_rate,
                "momentum": cfg.momentum,
                "batch_size": cfg.batch_size,
                "epochs": cfg.epochs,
                "seed": cfg.seed,
            },
            "loss_history": list(model.loss_history),
            "params": {k: v.tolist() for k, v in model.params.items()},
        }
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_dict(obj: dict):
    if obj.get("format") != "csforensics-model":
        raise ValueError("not a csforensics model file")
    if obj.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model version {obj.get('version')}")
    if obj["type"] == "svm":
        pairs = [
            _BinarySvm(p["pos"], p["neg"], None if p["w"] is None else np.asarray(p["w"], float),
                       float(p["b"]), p["constant_vote"])
            for p in obj["pairs"]
        ]
        return SvmModel(pairs, obj["c_reg"], _stats_from_json(obj["normalization"]), obj["tie_break"])
    if obj["type"] == "cnn":
        arch, tr = obj["architecture"], obj["trainer"]
        cfg = CnnConfig(mode=arch["mode"], learning_rate=tr["learning_rate"], momentum=tr["momentum"],
                        batch_size=tr["batch_size"], epochs=tr["epochs"], seed=tr["seed"])
        p = {k: np.asarray(v, dtype=np.float64) for k, v in obj["params"].items()}
        return CnnModel(arch["mode"], tuple(arch["input_shape"]), p["conv_w"], p["conv_b"],
                        p["fc_w"], p["fc_b"], cfg, list(obj.get("loss_history", [])))
    raise ValueError(f"unknown model type {obj['type']!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
