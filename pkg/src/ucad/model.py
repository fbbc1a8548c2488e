"""Per-pixel two-layer network, SGD with momentum, and the EMA teacher update.

The network sees six fixed features per pixel (intensity, 3x3 and 7x7 box
means, gradient magnitude, normalized row and column) and shares its weights
across pixels, so it behaves like a 1x1-conv head over a fixed filter bank.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .displacement import entropy_map
from .exceptions import DataError, ParameterError, ShapeError, TrainingError
from .grid import argmax_labels, check_image, softmax_channels

N_FEATURES = 6
CHECKPOINT_MAGIC = b"UCAD1"


def pixel_features(img):
    """``(H*W, 6)`` feature matrix in raster order."""
    img = check_image(img)
    h, w = img.shape
    blur1 = ndimage.uniform_filter(img, size=3, mode="nearest")
    blur3 = ndimage.uniform_filter(img, size=7, mode="nearest")
    if h > 1 and w > 1:
        gy, gx = np.gradient(img)
    else:
        gy = gx = np.zeros_like(img)
    grad = np.hypot(gy, gx)
    rows, cols = np.indices((h, w), dtype=np.float64)
    rows /= max(h - 1, 1)
    cols /= max(w - 1, 1)
    return np.stack([img, blur1, blur3, grad, rows, cols], axis=-1).reshape(h * w, N_FEATURES)


@dataclass
class ModelParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def dims(self):
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]

    def arrays(self):
        return (self.w1, self.b1, self.w2, self.b2)

    def map(self, fn, *others):
        return ModelParams(*(fn(a, *(o.arrays()[i] for o in others))
                             for i, a in enumerate(self.arrays())))

    def copy(self):
        return self.map(np.copy)

    def to_vector(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_vector(cls, vec, n_features, hidden, n_classes):
        vec = np.asarray(vec, dtype=np.float64)
        shapes = [(n_features, hidden), (hidden,), (hidden, n_classes), (n_classes,)]
        sizes = [int(np.prod(s)) for s in shapes]
        if vec.size != sum(sizes):
            raise ShapeError(f"expected {sum(sizes)} parameters, got {vec.size}")
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return cls(*(p.reshape(s).copy() for p, s in zip(parts, shapes)))

    @classmethod
    def zeros(cls, n_classes, hidden=16, n_features=N_FEATURES):
        return cls(np.zeros((n_features, hidden)), np.zeros(hidden),
                   np.zeros((hidden, n_classes)), np.zeros(n_classes))

    @classmethod
    def init(cls, n_classes, rng, hidden=16, n_features=N_FEATURES):
        w1 = rng.normal(0.0, np.sqrt(2.0 / n_features), size=(n_features, hidden))
        w2 = rng.normal(0.0, np.sqrt(1.0 / hidden), size=(hidden, n_classes))
        return cls(w1, np.zeros(hidden), w2, np.zeros(n_classes))

    def checksum(self):
        return hash(self.to_vector().tobytes())


def forward_features(params, feats):
    pre = feats @ params.w1 + params.b1
    hidden = np.maximum(pre, 0.0)
    return hidden @ params.w2 + params.b2, (feats, pre, hidden)


def backward_features(params, cache, dlogits):
    feats, pre, hidden = cache
    dz = dlogits.reshape(-1, params.w2.shape[1])
    dw2 = hidden.T @ dz
    db2 = dz.sum(axis=0)
    dpre = (dz @ params.w2.T) * (pre > 0)
    dw1 = feats.T @ dpre
    db1 = dpre.sum(axis=0)
    return ModelParams(dw1, db1, dw2, db2)


def forward(params, img, return_cache=False):
    """Logits ``(H, W, C)`` and class probabilities for one image."""
    img = check_image(img)
    feats = pixel_features(img)
    if feats.shape[1] != params.w1.shape[0]:
        raise ShapeError(f"model expects {params.w1.shape[0]} features, got {feats.shape[1]}")
    flat, cache = forward_features(params, feats)
    logits = flat.reshape(img.shape + (params.w2.shape[1],))
    probs = softmax_channels(logits)
    if return_cache:
        return logits, probs, cache
    return logits, probs


def backward(params, img, dlogits, cache=None):
    """Parameter gradients given d(loss)/d(logits). ReLU'(0) is taken as 0."""
    img = check_image(img)
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != img.shape + (params.w2.shape[1],):
        raise ShapeError(f"upstream gradient shape {dlogits.shape} does not match image/model")
    if cache is None:
        _, _, cache = forward(params, img, return_cache=True)
    return backward_features(params, cache, dlogits)


def predict_labels(params, img):
    return argmax_labels(forward(params, img)[1])


@dataclass
class OptimState:
    velocity: ModelParams
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4

    @classmethod
    def for_params(cls, params, lr=0.01, momentum=0.9, weight_decay=1e-4):
        return cls(params.map(np.zeros_like), lr, momentum, weight_decay)


def sgd_step(params, grads, opt):
    """One SGD-with-momentum step; returns new params and optimizer state.

    g' = g + wd * p;  v <- mu * v + g';  p <- p - lr * v
    """
    if not all(np.all(np.isfinite(g)) for g in grads.arrays()):
        raise TrainingError("non-finite gradient; step aborted")
    g = grads.map(lambda gi, p: gi + opt.weight_decay * p, params)
    v = opt.velocity.map(lambda vi, gi: opt.momentum * vi + gi, g)
    new = params.map(lambda p, vi: p - opt.lr * vi, v)
    return new, OptimState(v, opt.lr, opt.momentum, opt.weight_decay)


def ema_update(teacher, student, alpha):
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must be in [0, 1], got {alpha}")
    if teacher.dims != student.dims:
        raise ShapeError(f"teacher {teacher.dims} and student {student.dims} differ")
    return teacher.map(lambda t, s: alpha * t + (1.0 - alpha) * s, student)


def pseudo_label(teacher, x_u):
    """Teacher argmax labels, entropy map, and probabilities for an image."""
    _, probs = forward(teacher, x_u)
    return argmax_labels(probs), entropy_map(probs), probs


# --- checkpoints -------------------------------------------------------------

def checkpoint_bytes(params):
    f, hdim, c = params.dims
    vec = params.to_vector()
    return CHECKPOINT_MAGIC + struct.pack("<3i", f, hdim, c) + vec.astype("<f8").tobytes()


def save_checkpoint(path, params):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params))


def parse_checkpoint(buf):
    n = len(CHECKPOINT_MAGIC)
    if buf[:n] != CHECKPOINT_MAGIC:
        raise DataError("not a UCAD1 checkpoint")
    if len(buf) < n + 12:
        raise DataError("checkpoint header truncated")
    f, hdim, c = struct.unpack_from("<3i", buf, n)
    count = f * hdim + hdim + hdim * c + c
    body = buf[n + 12:]
    if len(body) != 8 * count:
        raise DataError(f"checkpoint holds {len(body)} payload bytes, expected {8 * count}")
    vec = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return ModelParams.from_vector(vec, f, hdim, c)


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    return parse_checkpoint(buf)
