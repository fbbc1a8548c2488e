"""Dense grid helpers shared across the package.

Images are ``(H, W)`` float64 arrays, label maps ``(H, W)`` integer arrays,
probability maps ``(H, W, C)`` float64 arrays whose last axis sums to one.
Storage is numpy's default C order, so pixel ``(r, c)`` sits at ``r * W + c``.
"""
from __future__ import annotations

import numpy as np

from .exceptions import ParameterError, ShapeError

PROB_ATOL = 1e-6


def check_image(img, name="image"):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ParameterError(f"{name} contains non-finite values")
    return img


def check_labels(labels, num_classes, name="labels"):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {labels.shape}")
    if num_classes < 2:
        raise ParameterError(f"num_classes must be >= 2, got {num_classes}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ParameterError(f"{name} must hold integer class ids")
    labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ParameterError(f"{name} must lie in [0, {num_classes - 1}]")
    return labels


def check_probs(p, name="probs"):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 3 or p.shape[2] < 2:
        raise ShapeError(f"{name} must have shape (H, W, C) with C >= 2, got {p.shape}")
    # NaN fails both comparisons; inf shows up in the row sums
    if not p.min() >= 0:
        raise ParameterError(f"{name} must be finite and nonnegative")
    if not np.abs(p.sum(axis=2) - 1.0).max() <= PROB_ATOL:
        raise ParameterError(f"{name} rows must be finite and sum to 1")
    return p


def check_same_shape(*arrays):
    shapes = {np.shape(a)[:2] for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"spatial shapes differ: {sorted(shapes)}")


def softmax_channels(logits):
    """Per-pixel softmax over the last axis of an ``(H, W, C)`` logit grid."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 3:
        raise ShapeError(f"logits must have shape (H, W, C), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ParameterError("logits contain non-finite values")
    e = np.exp(z - z.max(axis=2, keepdims=True))
    return e / e.sum(axis=2, keepdims=True)


def argmax_labels(p):
    # np.argmax returns the first maximum, i.e. ties go to the lowest class
    return np.argmax(check_probs(p), axis=2).astype(np.int64)


def one_hot(labels, num_classes):
    labels = check_labels(labels, num_classes)
    return np.eye(num_classes, dtype=np.float64)[labels]


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def fork_rng(seed, *path):
    """Independent stream derived from ``seed`` and an integer path, e.g. a batch index."""
    key = [int(seed)] + [int(p) for p in path]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
