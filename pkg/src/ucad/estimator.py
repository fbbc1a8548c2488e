"""scikit-learn style wrappers.

``UCADSegmenter`` follows the semi-supervised convention of
``sklearn.semi_supervised``: pass every image to ``fit`` and mark the
unlabeled ones with a label map filled with ``-1``.
"""
from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import Dataset, UnlabeledSplit
from .exceptions import ConfigError
from .metrics import dsc
from .model import forward
from .superpixel import default_k_target, slic_partition
from .training import TrainConfig, train

UNLABELED = -1


def _check_images(X):
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected images of shape (n, H, W), got {X.shape}")
    return X


class SLICSuperpixels(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping ``(n, H, W)`` images to region-id maps."""

    def __init__(self, k_target=None, compactness=10.0, iterations=10):
        self.k_target = k_target
        self.compactness = compactness
        self.iterations = iterations

    def fit(self, X, y=None):
        X = _check_images(X)
        self.image_shape_ = X.shape[1:]
        return self

    def transform(self, X):
        check_is_fitted(self, "image_shape_")
        X = _check_images(X)
        out = np.empty(X.shape, dtype=np.int64)
        for i, img in enumerate(X):
            k = self.k_target or default_k_target(*img.shape)
            out[i] = slic_partition(img, k, self.compactness, self.iterations).region_ids
        return out


_CONFIG_FIELDS = [f.name for f in dataclasses.fields(TrainConfig) if f.name != "check_invariants"]


class UCADSegmenter(BaseEstimator):
    """Mean-teacher segmenter trained with uncertainty-guided superpixel displacement.

    Parameters mirror :class:`ucad.training.TrainConfig`; ``lam`` is the
    weight of the consistency loss.  After ``fit`` the student is exposed as
    ``student_``, the EMA teacher as ``teacher_`` and the training record as
    ``history_``.
    """

    def __init__(self, strategy="full", k_target=None, compactness=10.0, slic_iterations=10,
                 temperature=0.5, n_regions=None, w_l=1.0, w_u=0.5, lam=0.2, beta_max=1.0,
                 beta_min=0.1, alpha=0.99, lr=0.01, momentum=0.9, weight_decay=1e-4,
                 warmup_steps=200, total_steps=2000, eval_every=100, batch=1, hidden=16,
                 seed=0, num_classes=None):
        self.strategy = strategy
        self.k_target = k_target
        self.compactness = compactness
        self.slic_iterations = slic_iterations
        self.temperature = temperature
        self.n_regions = n_regions
        self.w_l = w_l
        self.w_u = w_u
        self.lam = lam
        self.beta_max = beta_max
        self.beta_min = beta_min
        self.alpha = alpha
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps
        self.eval_every = eval_every
        self.batch = batch
        self.hidden = hidden
        self.seed = seed
        self.num_classes = num_classes

    def _config(self):
        return TrainConfig(**{name: getattr(self, name) for name in _CONFIG_FIELDS})

    def fit(self, X, y, X_val=None, y_val=None):
        X = _check_images(X)
        y = np.asarray(y)
        if y.shape != X.shape:
            raise ValueError(f"y shape {y.shape} does not match X shape {X.shape}")
        is_unlabeled = np.all(y == UNLABELED, axis=(1, 2))
        if np.any((y == UNLABELED) & ~is_unlabeled[:, None, None]):
            raise ValueError("an image must be either fully labeled or fully -1")
        c = self.num_classes
        if c is None:
            c = int(y[~is_unlabeled].max()) + 1 if (~is_unlabeled).any() else 2
            if X_val is not None:
                c = max(c, int(np.max(y_val)) + 1)
            c = max(c, 2)
        labeled = [(X[i], y[i].astype(np.int64)) for i in np.flatnonzero(~is_unlabeled)]
        unl = [X[i] for i in np.flatnonzero(is_unlabeled)]
        if not labeled or not unl:
            raise ConfigError("fit needs at least one labeled and one unlabeled image")
        val = []
        if X_val is not None:
            X_val = _check_images(X_val)
            val = [(img, np.asarray(lab, dtype=np.int64)) for img, lab in zip(X_val, y_val)]
        # unlabeled ground truth is unknown here; the split only carries images
        dataset = Dataset(labeled, UnlabeledSplit(unl, [None] * len(unl)), val, c)
        self.student_, self.teacher_, self.history_ = train(self._config(), dataset)
        self.n_classes_ = c
        return self

    def predict_proba(self, X, model="student"):
        check_is_fitted(self, "student_")
        params = self.student_ if model == "student" else self.teacher_
        X = _check_images(X)
        return np.stack([forward(params, img)[1] for img in X])

    def predict(self, X, model="student"):
        return np.argmax(self.predict_proba(X, model), axis=-1)

    def score(self, X, y):
        """Mean foreground Dice over the images."""
        pred = self.predict(X)
        y = np.asarray(y, dtype=np.int64)
        return float(np.mean([
            np.mean([dsc(p, t, c) for c in range(1, self.n_classes_)]) for p, t in zip(pred, y)
        ]))
