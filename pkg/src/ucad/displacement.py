"""Uncertainty-guided contour-aware displacement.

The source image is cut into superpixels, each superpixel is scored by the
mean teacher entropy inside it, a temperature softmax turns the scores into
a sampling distribution, and the sampled regions are pasted onto the
destination image together with their labels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ParameterError, ShapeError
from .grid import check_image, check_labels, check_probs, check_same_shape
from .superpixel import SuperpixelPartition, default_k_target, slic_partition

LABELED_INTO_UNLABELED = "labeled-into-unlabeled"
UNLABELED_INTO_LABELED = "unlabeled-into-labeled"


def entropy_map(p):
    """Pixel-wise Shannon entropy (natural log) of an ``(H, W, C)`` probability map."""
    p = check_probs(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    return np.maximum(-plogp.sum(axis=2), 0.0)


def region_uncertainty(h, part):
    """Mean of ``h`` inside every region of ``part``."""
    h = check_image(h, "entropy map")
    if h.shape != part.shape:
        raise ShapeError(f"entropy map {h.shape} does not match partition {part.shape}")
    ids = part.region_ids.ravel()
    sums = np.bincount(ids, weights=h.ravel(), minlength=part.n_regions)
    counts = np.bincount(ids, minlength=part.n_regions)
    return sums / counts


def displacement_distribution(u, temperature):
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(u, dtype=np.float64) / temperature
    e = np.exp(z - z.max())
    return e / e.sum()


def sample_regions(probs, n, rng):
    """Draw ``n`` distinct region ids, renormalizing the remaining mass after each draw."""
    probs = np.asarray(probs, dtype=np.float64)
    k = len(probs)
    if not 0 <= n <= k:
        raise ParameterError(f"cannot sample {n} distinct regions out of {k}")
    remaining = probs.copy()
    chosen = []
    for _ in range(n):
        total = remaining.sum()
        if total > 0:
            idx = int(rng.choice(k, p=remaining / total))
        else:
            # all leftover mass underflowed; fall back to uniform over the unchosen
            free = np.flatnonzero(~np.isin(np.arange(k), chosen))
            idx = int(free[rng.integers(len(free))])
        chosen.append(idx)
        remaining[idx] = 0.0
    return chosen


def build_mask(part, selected):
    selected = np.asarray(sorted(set(int(s) for s in selected)), dtype=np.int64)
    if selected.size and (selected.min() < 0 or selected.max() >= part.n_regions):
        raise ParameterError(f"region ids must be in [0, {part.n_regions - 1}]")
    return np.isin(part.region_ids, selected).astype(np.uint8)


def _check_mask(m, shape):
    m = np.asarray(m)
    if m.shape != shape:
        raise ShapeError(f"mask shape {m.shape} does not match {shape}")
    if not np.all((m == 0) | (m == 1)):
        raise ParameterError("mask must be binary")
    return m.astype(np.uint8)


def mix_images(xa, xb, m):
    xa = check_image(xa)
    xb = check_image(xb)
    check_same_shape(xa, xb)
    m = _check_mask(m, xa.shape)
    return np.where(m == 1, xa, xb)


def mix_labels(ya, yb, m, num_classes):
    ya = check_labels(ya, num_classes)
    yb = check_labels(yb, num_classes)
    check_same_shape(ya, yb)
    m = _check_mask(m, ya.shape)
    return np.where(m == 1, ya, yb)


@dataclass(frozen=True)
class DisplacementConfig:
    k_target: int | None = None
    compactness: float = 10.0
    slic_iterations: int = 10
    temperature: float = 0.5
    n_regions: int | None = None
    # False gives uniform region selection (the contour-aware ablation without uncertainty)
    uncertainty_guided: bool = True

    def resolve_k(self, shape):
        return self.k_target if self.k_target is not None else default_k_target(*shape)

    def resolve_n(self, k):
        n = self.n_regions if self.n_regions is not None else math.ceil(k / 4)
        return min(n, k)


@dataclass(frozen=True)
class MixedSample:
    image: np.ndarray
    label: np.ndarray
    mask: np.ndarray
    direction: str
    # pixels whose content came from the unlabeled image
    unlabeled_region: np.ndarray = field(repr=False)

    @property
    def labeled_region(self):
        return (1 - self.unlabeled_region).astype(np.uint8)


def _make_sample(x_src, y_src, x_dst, y_dst, mask, num_classes, direction):
    image = mix_images(x_src, x_dst, mask)
    label = mix_labels(y_src, y_dst, mask, num_classes)
    if direction == UNLABELED_INTO_LABELED:
        unlabeled = mask.copy()
    elif direction == LABELED_INTO_UNLABELED:
        unlabeled = (1 - mask).astype(np.uint8)
    else:
        raise ParameterError(f"unknown direction {direction!r}")
    return MixedSample(image, label, mask, direction, unlabeled)


def select_mask(x_src, p_src, cfg, rng, partition=None):
    """Superpixel mask of the regions to paste out of ``x_src``."""
    if partition is None:
        partition = slic_partition(x_src, cfg.resolve_k(np.shape(x_src)),
                                   cfg.compactness, cfg.slic_iterations)
    n = cfg.resolve_n(partition.n_regions)
    if cfg.uncertainty_guided:
        u = region_uncertainty(entropy_map(p_src), partition)
        probs = displacement_distribution(u, cfg.temperature)
    else:
        probs = np.full(partition.n_regions, 1.0 / partition.n_regions)
    return build_mask(partition, sample_regions(probs, n, rng))


def displace_pair(x_src, y_src, x_dst, y_dst, p_src, cfg, rng, *,
                  num_classes=None, direction=UNLABELED_INTO_LABELED, partition=None):
    """Paste uncertain superpixels of the source pair onto the destination pair.

    Call once with the unlabeled image as source and once with the labeled
    image as source to get both mixing directions.  ``partition`` may carry a
    precomputed SLIC partition of ``x_src``.
    """
    x_src = check_image(x_src)
    p_src = check_probs(p_src)
    check_same_shape(x_src, y_src, x_dst, y_dst, p_src)
    if num_classes is None:
        num_classes = p_src.shape[2]
    mask = select_mask(x_src, p_src, cfg, rng, partition)
    return _make_sample(x_src, y_src, x_dst, y_dst, mask, num_classes, direction)


def rect_mask(shape, n_rects, rect_area, rng, aspect_range=(0.5, 2.0)):
    """Union of ``n_rects`` axis-aligned rectangles of about ``rect_area`` pixels each.

    Aspect ratio is log-uniform in ``aspect_range``; the top-left corner is uniform
    over positions that keep the rectangle inside the image.
    """
    h, w = shape
    mask = np.zeros(shape, dtype=np.uint8)
    lo, hi = np.log(aspect_range[0]), np.log(aspect_range[1])
    for _ in range(n_rects):
        aspect = float(np.exp(rng.uniform(lo, hi)))
        rh = int(np.clip(round(np.sqrt(rect_area * aspect)), 1, h))
        rw = int(np.clip(round(rect_area / rh), 1, w))
        r0 = int(rng.integers(0, h - rh + 1))
        c0 = int(rng.integers(0, w - rw + 1))
        mask[r0:r0 + rh, c0:c0 + rw] = 1
    return mask


def displace_pair_rect(x_src, y_src, x_dst, y_dst, cfg, rng, *, num_classes,
                       direction=UNLABELED_INTO_LABELED):
    """Rectangular baseline with the same expected pasted area as the superpixel variant.

    With K equal-size superpixels and N uniformly chosen ones the expected area is
    N * H * W / K, so N rectangles of H * W / K pixels each are pasted.
    """
    x_src = check_image(x_src)
    k = cfg.resolve_k(x_src.shape)
    n = cfg.resolve_n(k)
    area = x_src.size / k
    mask = rect_mask(x_src.shape, n, area, rng)
    return _make_sample(x_src, y_src, x_dst, y_dst, mask, num_classes, direction)


__all__ = [
    "LABELED_INTO_UNLABELED", "UNLABELED_INTO_LABELED", "DisplacementConfig", "MixedSample",
    "SuperpixelPartition", "build_mask", "displace_pair", "displace_pair_rect",
    "displacement_distribution", "entropy_map", "mix_images", "mix_labels", "rect_mask",
    "region_uncertainty", "sample_regions", "select_mask",
]
