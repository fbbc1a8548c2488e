"""SLIC superpixels for single-channel images.

Clustering runs in (intensity, row, col) space with the usual localized
k-means: each center only competes for pixels inside a 2S x 2S window.
A final connectivity pass guarantees every region is a single 4-connected
component.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import ParameterError
from .grid import check_image

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class SuperpixelPartition:
    region_ids: np.ndarray
    n_regions: int

    @property
    def shape(self):
        return self.region_ids.shape

    def sizes(self):
        return np.bincount(self.region_ids.ravel(), minlength=self.n_regions)

    def to_text(self):
        return "".join(" ".join(str(v) for v in row) + "\n" for row in self.region_ids)

    @classmethod
    def from_text(cls, text):
        rows = [list(map(int, line.split())) for line in text.splitlines() if line.strip()]
        ids = np.array(rows, dtype=np.int64)
        return cls(ids, int(ids.max()) + 1)


def default_k_target(height, width):
    return max(1, int(round(height * width / 655)))


def seed_grid(height, width, k_target):
    """Row/column counts of the initial seed lattice (ny * nx <= k_target)."""
    ny = max(1, int(round(np.sqrt(k_target * height / width))))
    ny = min(ny, height, k_target)
    nx = min(max(1, k_target // ny), width)
    return ny, nx


def _gradient_energy(img):
    p = np.pad(img, 1, mode="edge")
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    return gx * gx + gy * gy


def initial_centers(img, k_target):
    """Lattice seeds moved to the lowest-gradient pixel of their 3x3 neighborhood.

    A seed only moves when a neighbor is strictly smoother than the pixel under it,
    so flat images keep the exact (sub-pixel) lattice positions.
    """
    h, w = img.shape
    ny, nx = seed_grid(h, w, k_target)
    grad = _gradient_energy(img)
    centers = []
    for i in range(ny):
        for j in range(nx):
            r = (i + 0.5) * h / ny - 0.5
            c = (j + 0.5) * w / nx - 0.5
            r0 = min(max(int(np.floor(r + 0.5)), 0), h - 1)
            c0 = min(max(int(np.floor(c + 0.5)), 0), w - 1)
            best = grad[r0, c0]
            br, bc = r0, c0
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r0 + dr, c0 + dc
                    if 0 <= rr < h and 0 <= cc < w and grad[rr, cc] < best:
                        best, br, bc = grad[rr, cc], rr, cc
            if (br, bc) != (r0, c0):
                r, c = float(br), float(bc)
            centers.append((img[br, bc], r, c))
    labels = (np.arange(h)[:, None] * ny // h) * nx + (np.arange(w)[None, :] * nx // w)
    return np.array(centers, dtype=np.float64), labels.astype(np.int64), (ny, nx)


def _slic_iterate(img, centers, labels, step, compactness, iterations):
    h, w = img.shape
    rows = np.arange(h, dtype=np.float64)
    cols = np.arange(w, dtype=np.float64)
    spatial_weight = (compactness / step) ** 2
    rr, cc = np.indices((h, w), dtype=np.float64)
    n = len(centers)
    for _ in range(iterations):
        best = np.full((h, w), np.inf)
        new_labels = labels.copy()
        for k in range(n):
            ci, cr, ccol = centers[k]
            r_lo = max(int(np.ceil(cr - step)), 0)
            r_hi = min(int(np.floor(cr + step)), h - 1)
            c_lo = max(int(np.ceil(ccol - step)), 0)
            c_hi = min(int(np.floor(ccol + step)), w - 1)
            if r_lo > r_hi or c_lo > c_hi:
                continue
            dr = rows[r_lo:r_hi + 1, None] - cr
            dc = cols[None, c_lo:c_hi + 1] - ccol
            di = img[r_lo:r_hi + 1, c_lo:c_hi + 1] - ci
            d = np.sqrt(di * di + spatial_weight * (dr * dr + dc * dc))
            win = best[r_lo:r_hi + 1, c_lo:c_hi + 1]
            closer = d < win
            win[closer] = d[closer]
            new_labels[r_lo:r_hi + 1, c_lo:c_hi + 1][closer] = k
        labels = new_labels
        counts = np.bincount(labels.ravel(), minlength=n)
        live = counts > 0
        for col, feat in enumerate((img, rr, cc)):
            sums = np.bincount(labels.ravel(), weights=feat.ravel(), minlength=n)
            centers[live, col] = sums[live] / counts[live]
    return labels


def enforce_connectivity(labels, min_size):
    """Merge stray fragments so that every label is one 4-connected region.

    Each cluster keeps its largest component if that component has at least
    ``min_size`` pixels; every other component is absorbed, smallest first,
    into the largest region it touches.  Output ids are renumbered in raster
    order of each region's first pixel.
    """
    h, w = labels.shape
    comp = np.zeros((h, w), dtype=np.int64)
    n_comp = 0
    for lab in np.unique(labels):
        cl, n = ndimage.label(labels == lab, structure=_FOUR_CONNECTED)
        comp[cl > 0] = cl[cl > 0] + n_comp
        n_comp += n
    comp -= 1
    sizes = np.bincount(comp.ravel(), minlength=n_comp)
    flat_first = np.full(n_comp, h * w, dtype=np.int64)
    np.minimum.at(flat_first, comp.ravel(), np.arange(h * w))

    owner = labels.ravel()[flat_first]
    keep = np.zeros(n_comp, dtype=bool)
    for lab in np.unique(owner):
        members = np.flatnonzero(owner == lab)
        biggest = members[np.argmax(sizes[members])]
        if sizes[biggest] >= min_size:
            keep[biggest] = True
    if not keep.any():
        keep[np.argmax(sizes)] = True

    pairs = np.concatenate([
        np.stack([comp[:, :-1].ravel(), comp[:, 1:].ravel()], axis=1),
        np.stack([comp[:-1, :].ravel(), comp[1:, :].ravel()], axis=1),
    ])
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    neighbors = [set() for _ in range(n_comp)]
    for a, b in pairs.tolist():
        neighbors[a].add(b)
        neighbors[b].add(a)

    parent = list(range(n_comp))
    size = sizes.astype(np.int64).tolist()
    first = flat_first.tolist()

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    strays = sorted(np.flatnonzero(~keep).tolist(), key=lambda i: (size[i], first[i]))
    for c in strays:
        root = find(c)
        # neighbors[root] covers the whole current region, not just this component
        adj = {find(nb) for nb in neighbors[root]} - {root}
        if not adj:
            continue
        target = min(adj, key=lambda r: (-size[r], first[r]))
        parent[root] = target
        size[target] += size[root]
        neighbors[target] = {find(nb) for nb in neighbors[target] | neighbors[root]} - {target}
        # the merged region's raster-first pixel decides the tie-break
        first[target] = min(first[target], first[root])

    roots = np.array([find(i) for i in range(n_comp)])
    merged = roots[comp]
    _, first_idx, inverse = np.unique(merged.ravel(), return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first_idx))
    region_ids = order[inverse].reshape(h, w)
    return region_ids.astype(np.int64), len(first_idx)


def slic_partition(img, k_target, compactness=10.0, iterations=10):
    """Partition ``img`` into at most ``k_target`` connected superpixels.

    Parameters
    ----------
    img : (H, W) array with intensities in [0, 1]
    k_target : desired number of superpixels
    compactness : weight of spatial proximity against intensity similarity
    iterations : number of assignment/update rounds

    Returns
    -------
    SuperpixelPartition
    """
    img = check_image(img)
    h, w = img.shape
    if not 1 <= k_target <= h * w:
        raise ParameterError(f"k_target must be in [1, {h * w}], got {k_target}")
    if compactness <= 0:
        raise ParameterError(f"compactness must be > 0, got {compactness}")
    if iterations < 1:
        raise ParameterError(f"iterations must be >= 1, got {iterations}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ParameterError("image intensities must be normalized to [0, 1]")

    step = np.sqrt(h * w / k_target)
    centers, labels, _ = initial_centers(img, k_target)
    labels = _slic_iterate(img, centers, labels, step, compactness, iterations)
    min_size = (h * w / k_target) / 4.0
    region_ids, n = enforce_connectivity(labels, min_size)
    return SuperpixelPartition(region_ids, n)
