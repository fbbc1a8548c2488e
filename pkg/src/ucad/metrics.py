"""Dice similarity and average surface distance for 2-D label maps."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import ParameterError, ShapeError
from .model import predict_labels

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def _pair(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    return pred, gt


def dsc(pred, gt, class_id):
    pred, gt = _pair(pred, gt)
    a = pred == class_id
    b = gt == class_id
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return 2.0 * np.logical_and(a, b).sum() / total


def boundary(mask):
    """Pixels of ``mask`` with a 4-neighbor outside it; the image border counts as outside."""
    mask = np.asarray(mask, dtype=bool)
    inner = ndimage.binary_erosion(mask, structure=_FOUR_CONNECTED, border_value=0)
    return mask & ~inner


def _mean_min_distance(src, dst):
    # exact Euclidean transform: distance from every pixel to the nearest dst pixel
    dist = ndimage.distance_transform_edt(~dst)
    return dist[src].mean()


def asd(pred, gt, class_id):
    """Symmetric average surface distance in pixels; ``nan`` when exactly one mask is empty."""
    pred, gt = _pair(pred, gt)
    a = pred == class_id
    b = gt == class_id
    if not a.any() and not b.any():
        return 0.0
    if not a.any() or not b.any():
        return float("nan")
    ba, bb = boundary(a), boundary(b)
    return 0.5 * (_mean_min_distance(ba, bb) + _mean_min_distance(bb, ba))


@dataclass
class MetricsReport:
    dsc: np.ndarray
    asd: np.ndarray
    asd_defined: np.ndarray

    @property
    def num_classes(self):
        return len(self.dsc)

    @property
    def mean_dsc(self):
        return float(np.mean(self.dsc[1:]))

    @property
    def mean_asd(self):
        ok = self.asd_defined[1:]
        return float(np.mean(self.asd[1:][ok])) if ok.any() else float("nan")

    def to_csv(self):
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["class", "dsc", "asd", "defined"])
        for c in range(self.num_classes):
            out.writerow([c, f"{self.dsc[c]:.6f}", f"{self.asd[c]:.6f}", int(self.asd_defined[c])])
        out.writerow(["mean_fg", f"{self.mean_dsc:.6f}", f"{self.mean_asd:.6f}",
                      int(self.asd_defined[1:].any())])
        return buf.getvalue()


def report_from_predictions(pairs, num_classes):
    """Average per-class metrics over ``(pred, gt)`` pairs.

    ASD values that are undefined for an image are left out of that class's
    average; a class is flagged undefined if no image defines it.
    """
    if not pairs:
        raise ParameterError("cannot evaluate an empty split")
    d = np.zeros(num_classes)
    a_sum = np.zeros(num_classes)
    a_cnt = np.zeros(num_classes, dtype=np.int64)
    for pred, gt in pairs:
        for c in range(num_classes):
            d[c] += dsc(pred, gt, c)
            v = asd(pred, gt, c)
            if not np.isnan(v):
                a_sum[c] += v
                a_cnt[c] += 1
    defined = a_cnt > 0
    a = np.full(num_classes, np.nan)
    a[defined] = a_sum[defined] / a_cnt[defined]
    return MetricsReport(d / len(pairs), a, defined)


def evaluate(params, pairs, num_classes=None):
    """Metrics of the model ``params`` on a list of ``(image, label map)`` pairs."""
    if num_classes is None:
        num_classes = params.dims[2]
    preds = [(predict_labels(params, img), gt) for img, gt in pairs]
    return report_from_predictions(preds, num_classes)
