"""Training objectives and their gradients with respect to the student logits.

Every loss takes the student's probability map (softmax of its logits) and
returns a :class:`LossValue` whose ``grad`` is d(loss)/d(logits).  Gradients
are first formed with respect to the probabilities and then pushed through
the softmax Jacobian by :func:`probs_grad_to_logits`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterError, ShapeError
from .grid import check_labels, check_probs

DICE_EPS = 1e-5
_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class LossValue:
    value: float
    grad: np.ndarray

    def __add__(self, other):
        if self.grad.shape != other.grad.shape:
            raise ShapeError(f"gradient shapes differ: {self.grad.shape} vs {other.grad.shape}")
        return LossValue(self.value + other.value, self.grad + other.grad)

    def scale(self, factor):
        return LossValue(factor * self.value, factor * self.grad)


@dataclass(frozen=True)
class LossWeights:
    w_l: float = 1.0
    w_u: float = 0.5
    lam: float = 0.2
    beta_max: float = 1.0
    beta_min: float = 0.1

    def __post_init__(self):
        for name in ("w_l", "w_u", "lam", "beta_max", "beta_min"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")


def probs_grad_to_logits(p, g):
    """Chain rule through a per-pixel softmax: dz_c = p_c * (g_c - sum_k p_k g_k)."""
    return p * (g - np.sum(p * g, axis=-1, keepdims=True))


def _mask_like(m, shape):
    m = np.asarray(m, dtype=np.float64)
    if m.shape != shape:
        raise ShapeError(f"mask shape {m.shape} does not match {shape}")
    return m


def dice_ce_masked(pred, target, m):
    """0.5 * soft Dice (mean over classes) + 0.5 * cross-entropy, restricted to ``m``."""
    pred = check_probs(pred)
    h, w, c = pred.shape
    target = check_labels(target, c)
    if target.shape != (h, w):
        raise ShapeError(f"target shape {target.shape} does not match {(h, w)}")
    m = _mask_like(m, (h, w))
    n_mask = m.sum()
    if n_mask == 0:
        return LossValue(0.0, np.zeros_like(pred))

    y = np.eye(c)[target]
    mm = m[..., None]
    inter = np.sum(mm * pred * y, axis=(0, 1))
    denom = np.sum(mm * pred, axis=(0, 1)) + np.sum(mm * y, axis=(0, 1)) + DICE_EPS
    numer = 2.0 * inter + DICE_EPS
    dice = np.mean(1.0 - numer / denom)
    d_dice = -mm * (2.0 * y * denom - numer) / denom**2 / c

    p_true = np.take_along_axis(pred, target[..., None], axis=2)[..., 0]
    p_safe = np.maximum(p_true, _LOG_FLOOR)
    ce = -np.sum(m * np.log(p_safe)) / n_mask
    d_ce = -mm * y / p_safe[..., None] / n_mask

    value = 0.5 * dice + 0.5 * ce
    grad_p = 0.5 * d_dice + 0.5 * d_ce
    return LossValue(float(value), probs_grad_to_logits(pred, grad_p))


def seg_loss(pred, y_l, y_p, m, weights):
    """Labeled term on ``m`` plus pseudo-labeled term on ``1 - m``.

    ``m`` marks pixels whose content came from the labeled image.
    """
    m = np.asarray(m)
    lab = dice_ce_masked(pred, y_l, m).scale(weights.w_l)
    unl = dice_ce_masked(pred, y_p, 1 - m).scale(weights.w_u)
    return lab + unl


def _entropy_and_grad(p):
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -np.sum(p * logp, axis=-1), -(logp + 1.0)


def unc_loss(p_s, p_t, region, beta):
    """Entropy-weighted consistency between student and (detached) teacher.

    Per pixel of ``region``: ||p_s - p_t||^2 / (exp(beta*H_s) + exp(beta*H_t))
    + beta * (H_s + H_t), averaged over the region.
    """
    p_s = check_probs(p_s, "student probs")
    p_t = check_probs(p_t, "teacher probs")
    if p_s.shape != p_t.shape:
        raise ShapeError(f"student {p_s.shape} and teacher {p_t.shape} shapes differ")
    region = _mask_like(region, p_s.shape[:2])
    n_u = region.sum()
    if n_u == 0:
        return LossValue(0.0, np.zeros_like(p_s))

    h_s, dh_s = _entropy_and_grad(p_s)
    h_t, _ = _entropy_and_grad(p_t)
    diff = p_s - p_t
    sq = np.sum(diff * diff, axis=-1)
    e_s = np.exp(beta * h_s)
    den = e_s + np.exp(beta * h_t)

    value = np.sum(region * (sq / den + beta * (h_s + h_t))) / n_u
    d_first = 2.0 * diff / den[..., None] - (sq * beta * e_s / den**2)[..., None] * dh_s
    grad_p = region[..., None] * (d_first + beta * dh_s) / n_u
    return LossValue(float(value), probs_grad_to_logits(p_s, grad_p))


def beta_schedule(step, total_steps, weights):
    """Linear anneal from ``beta_max`` at step 0 to ``beta_min`` at ``total_steps``."""
    if total_steps < 1:
        raise ParameterError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]")
    return weights.beta_max + (weights.beta_min - weights.beta_max) * step / total_steps


def total_loss(seg, unc, lam):
    if seg.grad.shape != unc.grad.shape:
        raise ShapeError(f"gradient shapes differ: {seg.grad.shape} vs {unc.grad.shape}")
    if lam == 0:
        return seg
    return LossValue(seg.value + lam * unc.value, seg.grad + lam * unc.grad)
