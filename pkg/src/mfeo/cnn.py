"""Compact CNN: 5x5 sigmoid convolution, 2x2 mean subsampling, softmax layer.

Selected feature vectors are laid row-major onto a square input map
(32x32 by default), so no learned feature map precedes the convolution.
All arithmetic is float64.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KERNEL = 5
POOL = 2
MAGIC = b"MFEOCNNMODEL"
FORMAT_VERSION = 1
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 60
    batch_size: int = 8
    seed: int = 0
    weight_init_scale: float = 1.0

    def validate(self):
        # 0 is accepted so a run can be replayed without updates
        if not 0.0 <= self.learning_rate <= 1.0:
            raise ValueError(f"learning_rate must lie in [0, 1], got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.weight_init_scale < 0:
            raise ValueError("weight_init_scale must be >= 0")


@dataclass
class CnnModel:
    kernels: np.ndarray       # (K, 5, 5)
    conv_bias: np.ndarray     # (K,)
    dense_w: np.ndarray       # (C, K * p * p), p = (side - 4) // 2
    dense_b: np.ndarray       # (C,)
    side: int = 32

    @property
    def n_maps(self) -> int:
        return self.kernels.shape[0]

    @property
    def n_classes(self) -> int:
        return self.dense_b.shape[0]

    @property
    def pooled_side(self) -> int:
        return (self.side - KERNEL + 1) // POOL

    def params(self) -> dict[str, np.ndarray]:
        return {"kernels": self.kernels, "conv_bias": self.conv_bias,
                "dense_w": self.dense_w, "dense_b": self.dense_b}

    def copy(self) -> CnnModel:
        return CnnModel(self.kernels.copy(), self.conv_bias.copy(),
                        self.dense_w.copy(), self.dense_b.copy(), self.side)

    def validate(self):
        conv_side = self.side - KERNEL + 1
        if conv_side < POOL or conv_side % POOL:
            raise ValueError(f"input side {self.side} gives an odd or empty conv output")
        K = self.n_maps
        if self.kernels.shape != (K, KERNEL, KERNEL) or self.conv_bias.shape != (K,):
            raise ValueError("kernel / bias shapes are inconsistent")
        if self.dense_w.shape != (self.n_classes, K * self.pooled_side ** 2):
            raise ValueError(f"dense weights must be {(self.n_classes, K * self.pooled_side ** 2)}")
        for name, p in self.params().items():
            if not np.all(np.isfinite(p)):
                raise ValueError(f"{name} contains non-finite values")


def init_model(n_classes: int, n_maps: int = 6, side: int = 32, seed: int = 0, scale: float = 1.0) -> CnnModel:
    """Glorot-uniform weights, zero biases."""
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    p = (side - KERNEL + 1) // POOL
    feat = n_maps * p * p
    s_conv = scale * math.sqrt(6.0 / (KERNEL * KERNEL + n_maps * KERNEL * KERNEL))
    s_dense = scale * math.sqrt(6.0 / (feat + n_classes))
    model = CnnModel(
        rng.uniform(-s_conv, s_conv, (n_maps, KERNEL, KERNEL)),
        np.zeros(n_maps),
        rng.uniform(-s_dense, s_dense, (n_classes, feat)),
        np.zeros(n_classes),
        side,
    )
    model.validate()
    return model


def reshape_to_map(features, side: int = 32) -> np.ndarray:
    """Standardise a feature vector and lay it row-major on a ``side`` x ``side`` map.

    Cells past the end of the vector stay exactly 0.
    """
    v = np.asarray(features, dtype=np.float64).ravel()
    if v.size > side * side:
        raise ValueError(
            f"{v.size} features do not fit a {side}x{side} input map; "
            f"select at most {side * side} features"
        )
    if v.size == 0:
        raise ValueError("empty feature vector")
    sd = v.std()
    v = (v - v.mean()) / sd if sd > 0 else v - v.mean()
    out = np.zeros(side * side)
    out[:v.size] = v
    return out.reshape(side, side)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _windows(maps):
    return sliding_window_view(maps, (KERNEL, KERNEL), axis=(-2, -1))


def conv_forward(maps, model: CnnModel) -> np.ndarray:
    """Valid correlation + bias + sigmoid: ``(B, S, S) -> (B, K, S-4, S-4)``.

    A single 2-D map is accepted and gives ``(K, S-4, S-4)``.
    """
    maps = np.asarray(maps, dtype=np.float64)
    single = maps.ndim == 2
    if single:
        maps = maps[None]
    z = np.einsum("bijuv,kuv->bkij", _windows(maps), model.kernels)
    out = sigmoid(z + model.conv_bias[None, :, None, None])
    return out[0] if single else out


def subsample_forward(maps) -> np.ndarray:
    """Non-overlapping 2x2 block means over the last two axes."""
    maps = np.asarray(maps, dtype=np.float64)
    h, w = maps.shape[-2:]
    if h % POOL or w % POOL:
        raise ValueError(f"subsampling needs even sides, got {h}x{w}")
    blocks = maps.reshape(maps.shape[:-2] + (h // POOL, POOL, w // POOL, POOL))
    return blocks.mean(axis=(-3, -1))


def _forward(model: CnnModel, maps):
    win = _windows(maps)
    act = sigmoid(np.einsum("bijuv,kuv->bkij", win, model.kernels)
                  + model.conv_bias[None, :, None, None])
    flat = subsample_forward(act).reshape(len(maps), -1)
    logits = flat @ model.dense_w.T + model.dense_b
    return win, act, flat, softmax(logits)


def forward_maps(model: CnnModel, maps) -> np.ndarray:
    """Class probabilities for a batch of input maps ``(B, S, S)``."""
    return _forward(model, np.asarray(maps, dtype=np.float64))[-1]


def forward(model: CnnModel, features) -> np.ndarray:
    return forward_maps(model, reshape_to_map(features, model.side)[None])[0]


def loss(probs, label: int) -> float:
    """Cross-entropy ``-log p[label]`` with the probability floored at 1e-12."""
    return -math.log(max(float(probs[label]), PROB_FLOOR))


def loss_and_grads(model: CnnModel, maps, labels):
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    maps = np.asarray(maps, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    B = len(maps)
    win, act, flat, probs = _forward(model, maps)
    picked = np.maximum(probs[np.arange(B), labels], PROB_FLOOR)
    value = float(-np.log(picked).mean())

    d_logits = probs.copy()
    d_logits[np.arange(B), labels] -= 1.0
    d_logits /= B
    g_dense_w = d_logits.T @ flat
    g_dense_b = d_logits.sum(axis=0)

    p = model.pooled_side
    d_pool = (d_logits @ model.dense_w).reshape(B, model.n_maps, p, p)
    d_act = np.repeat(np.repeat(d_pool, POOL, axis=2), POOL, axis=3) / (POOL * POOL)
    d_z = d_act * act * (1.0 - act)
    g_kernels = np.einsum("bijuv,bkij->kuv", win, d_z)
    g_conv_bias = d_z.sum(axis=(0, 2, 3))
    grads = {"kernels": g_kernels, "conv_bias": g_conv_bias,
             "dense_w": g_dense_w, "dense_b": g_dense_b}
    return value, grads


def predict_proba(model: CnnModel, features_batch) -> np.ndarray:
    maps = np.stack([reshape_to_map(f, model.side) for f in features_batch])
    return forward_maps(model, maps)


def predict(model: CnnModel, features) -> int:
    """Most probable class; ties go to the lower class id."""
    return int(np.argmax(forward(model, features)))


def train(model: CnnModel, features_batch, labels, cfg: TrainConfig = TrainConfig()):
    """Mini-batch SGD on mean cross-entropy.

    Returns ``(trained_model, losses)`` where ``losses[e]`` is the mean
    per-sample loss seen during epoch ``e``. The input model is not
    modified.
    """
    cfg.validate()
    model = model.copy()
    model.validate()
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("training set is empty")
    if labels.min() < 0 or labels.max() >= model.n_classes:
        raise ValueError(f"labels must lie in [0, {model.n_classes})")
    maps = np.stack([reshape_to_map(f, model.side) for f in features_batch])
    if len(maps) != len(labels):
        raise ValueError("one label per sample is required")

    rng = np.random.default_rng(cfg.seed)
    params = model.params()
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(labels))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            value, grads = loss_and_grads(model, maps[idx], labels[idx])
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            total += value * len(idx)
            if cfg.learning_rate:
                for name, g in grads.items():
                    params[name] -= cfg.learning_rate * g
        losses.append(total / len(labels))
    return model, losses


# -- persistence -----------------------------------------------------------

def save_model(model: CnnModel, path) -> None:
    """Binary layout (all little-endian)::

        12 bytes  magic b"MFEOCNNMODEL"
        uint32    format version
        uint32 x4 n_maps, kernel side, input side, n_classes
        float64   kernels (K, 5, 5), conv biases (K),
                  dense weights (C, F) row-major, dense biases (C)
    """
    model.validate()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<4I", model.n_maps, KERNEL, model.side, model.n_classes))
        for arr in (model.kernels, model.conv_bias, model.dense_w, model.dense_b):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> CnnModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 32 or raw[:12] != MAGIC:
        raise ValueError(f"{path}: not a model file")
    (version,) = struct.unpack_from("<I", raw, 12)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format version {version}")
    K, ks, side, C = struct.unpack_from("<4I", raw, 16)
    if ks != KERNEL:
        raise ValueError(f"{path}: kernel side {ks} unsupported")
    p = (side - KERNEL + 1) // POOL
    shapes = [(K, ks, ks), (K,), (C, K * p * p), (C,)]
    n = sum(int(np.prod(s)) for s in shapes)
    if len(raw) != 32 + 8 * n:
        raise ValueError(f"{path}: truncated or oversized model file")
    flat = np.frombuffer(raw, dtype="<f8", offset=32).astype(np.float64)
    arrays, at = [], 0
    for s in shapes:
        size = int(np.prod(s))
        arrays.append(flat[at:at + size].reshape(s).copy())
        at += size
    model = CnnModel(*arrays, side=side)
    model.validate()
    return model
