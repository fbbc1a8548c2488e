"""Synthetic curved-blob segmentation data and its on-disk layout.

Images hold one or more star-shaped blobs with wavy outlines,
r(theta) = r0 * (1 + a * sin(k * theta + phi)), painted over a class-0
background.  Splits are written as binary PGM files::

    <root>/labeled/img_0000.pgm   16-bit intensities
    <root>/labeled/lab_0000.pgm   8-bit class ids
    <root>/unlabeled/...          labels kept for evaluation only
    <root>/val/...
    <root>/manifest.txt
"""
from __future__ import annotations

import dataclasses
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DataError, PGMParseError
from .grid import check_image, check_labels, fork_rng

SPLITS = ("labeled", "unlabeled", "val")


@dataclass(frozen=True)
class DatasetSpec:
    height: int = 64
    width: int = 64
    num_classes: int = 3
    min_blobs: int = 2
    max_blobs: int = 3
    min_radius: float = 6.0
    max_radius: float = 14.0
    waviness: float = 2.5
    class_means: tuple | None = None
    class_std: float = 0.04
    noise_std: float = 0.08
    n_labeled: int = 2
    n_unlabeled: int = 38
    n_val: int = 10
    seed: int = 7

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if min(self.n_labeled, self.n_unlabeled, self.n_val) < 0:
            raise ConfigError("split counts must be >= 0")
        if not 0 <= self.min_blobs <= self.max_blobs:
            raise ConfigError("need 0 <= min_blobs <= max_blobs")
        if not 0 < self.min_radius <= self.max_radius < min(self.height, self.width) / 2:
            raise ConfigError("blob radii must satisfy 0 < min <= max < min(H, W) / 2")
        if self.waviness < 0 or self.noise_std < 0 or self.class_std < 0:
            raise ConfigError("waviness and noise levels must be >= 0")
        if self.class_means is not None and len(self.class_means) != self.num_classes:
            raise ConfigError("class_means needs one entry per class")

    def means(self):
        if self.class_means is not None:
            return np.asarray(self.class_means, dtype=np.float64)
        return 0.15 + 0.7 * np.arange(self.num_classes) / (self.num_classes - 1)


def generate_sample(spec, rng):
    """One (image, label map) pair drawn from ``spec`` using ``rng``."""
    h, w = spec.height, spec.width
    labels = np.zeros((h, w), dtype=np.int64)
    rows, cols = np.indices((h, w), dtype=np.float64)
    means = spec.means()
    level = np.full((h, w), means[0] + rng.normal(0.0, spec.class_std))

    n_blobs = int(rng.integers(spec.min_blobs, spec.max_blobs + 1))
    # the first C-1 blobs cover every foreground class once, like organs that are
    # always present; any further blobs pick a class at random
    covering = rng.permutation(np.arange(1, spec.num_classes))
    for b in range(n_blobs):
        cls = int(covering[b]) if b < len(covering) else int(rng.integers(1, spec.num_classes))
        r0 = rng.uniform(spec.min_radius, spec.max_radius)
        cy = rng.uniform(r0, h - 1 - r0)
        cx = rng.uniform(r0, w - 1 - r0)
        lobes = int(rng.integers(2, 6))
        phase = rng.uniform(0.0, 2 * np.pi)
        amp = min(spec.waviness / r0, 0.9)
        theta = np.arctan2(rows - cy, cols - cx)
        radius = r0 * (1.0 + amp * np.sin(lobes * theta + phase))
        inside = np.hypot(rows - cy, cols - cx) <= radius
        labels[inside] = cls
        level[inside] = means[cls] + rng.normal(0.0, spec.class_std)

    img = np.clip(level + rng.normal(0.0, spec.noise_std, size=(h, w)), 0.0, 1.0)
    return img, labels


class UnlabeledSplit:
    """Unlabeled images; the true labels are reachable only through ``ground_truth``."""

    def __init__(self, images, hidden_labels):
        self._images = list(images)
        self._labels = list(hidden_labels)

    @property
    def images(self):
        return list(self._images)

    def ground_truth(self):
        """Evaluation-only access to the held-out labels."""
        return list(zip(self._images, self._labels))

    def __len__(self):
        return len(self._images)


@dataclass
class Dataset:
    labeled: list
    unlabeled: UnlabeledSplit
    val: list
    num_classes: int
    spec: DatasetSpec | None = field(default=None, repr=False)

    def split_pairs(self, name):
        if name == "labeled":
            return list(self.labeled)
        if name == "unlabeled":
            return self.unlabeled.ground_truth()
        if name == "val":
            return list(self.val)
        raise ConfigError(f"unknown split {name!r}")


def generate_dataset(spec):
    counts = {"labeled": spec.n_labeled, "unlabeled": spec.n_unlabeled, "val": spec.n_val}
    splits = {}
    for s_idx, name in enumerate(SPLITS):
        splits[name] = [generate_sample(spec, fork_rng(spec.seed, s_idx, i))
                        for i in range(counts[name])]
    unl = splits["unlabeled"]
    return Dataset(
        labeled=splits["labeled"],
        unlabeled=UnlabeledSplit([x for x, _ in unl], [y for _, y in unl]),
        val=splits["val"],
        num_classes=spec.num_classes,
        spec=spec,
    )


# --- PGM -------------------------------------------------------------------

def write_pgm(path, values, maxval):
    values = np.asarray(values)
    if values.ndim != 2:
        raise DataError(f"PGM data must be 2-D, got shape {values.shape}")
    if values.size and (values.min() < 0 or values.max() > maxval):
        raise DataError(f"PGM values must lie in [0, {maxval}]")
    h, w = values.shape
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(values.astype(dtype).tobytes())
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


_WS = b" \t\r\n"


def _next_token(buf, pos):
    while pos < len(buf):
        if buf[pos] in _WS:
            pos += 1
        elif buf[pos:pos + 1] == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
        else:
            break
    start = pos
    while pos < len(buf) and buf[pos] not in _WS and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PGMParseError("unexpected end of header", start)
    return buf[start:pos], start, pos


def parse_pgm(buf):
    """Decode binary PGM bytes into an integer array and its maxval."""
    magic, off, pos = _next_token(buf, 0)
    if magic != b"P5":
        raise PGMParseError(f"bad magic {magic!r}, expected b'P5'", off)
    dims = []
    for _ in range(3):
        tok, off, pos = _next_token(buf, pos)
        if not re.fullmatch(rb"\d+", tok):
            raise PGMParseError(f"expected an integer, got {tok!r}", off)
        dims.append(int(tok))
    w, h, maxval = dims
    if w < 1 or h < 1 or not 1 <= maxval <= 65535:
        raise PGMParseError(f"invalid dimensions {w}x{h} or maxval {maxval}", off)
    if pos >= len(buf) or buf[pos] not in _WS:
        raise PGMParseError("missing whitespace after maxval", pos)
    pos += 1
    width = 2 if maxval > 255 else 1
    need = w * h * width
    if len(buf) - pos < need:
        raise PGMParseError(f"truncated pixel data: need {need} bytes, have {len(buf) - pos}",
                            len(buf))
    data = np.frombuffer(buf, dtype=">u2" if width == 2 else "u1", count=w * h, offset=pos)
    values = data.reshape(h, w).astype(np.int64)
    if values.max() > maxval:
        bad = int(np.argmax(values.ravel() > maxval))
        raise PGMParseError(f"pixel value exceeds maxval {maxval}", pos + bad * width)
    return values, maxval


def read_pgm(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return parse_pgm(buf)


def save_image(path, img):
    img = check_image(img)
    if img.min() < 0 or img.max() > 1:
        raise DataError("image intensities must lie in [0, 1]")
    write_pgm(path, np.round(img * 65535).astype(np.int64), 65535)


def load_image(path):
    values, maxval = read_pgm(path)
    return values / float(maxval)


def save_labels(path, labels):
    labels = np.asarray(labels)
    if labels.size and labels.max() > 255:
        raise DataError("label ids above 255 do not fit an 8-bit PGM")
    write_pgm(path, labels.astype(np.int64), 255)


def load_labels(path, num_classes=None):
    values, _ = read_pgm(path)
    if num_classes is not None:
        values = check_labels(values, num_classes)
    return values


def save_mask(path, mask):
    """Binary mask as an 8-bit PGM with 0 -> 0 and 1 -> 255."""
    write_pgm(path, np.asarray(mask, dtype=np.int64) * 255, 255)


# --- dataset directories ----------------------------------------------------

def _manifest_text(spec):
    lines = [f"count_{name}={n}" for name, n in
             zip(SPLITS, (spec.n_labeled, spec.n_unlabeled, spec.n_val))]
    for f in dataclasses.fields(spec):
        v = getattr(spec, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(float(x)) for x in v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def save_dataset(root, dataset):
    spec = dataset.spec
    os.makedirs(root, exist_ok=True)
    for name in SPLITS:
        d = os.path.join(root, name)
        os.makedirs(d, exist_ok=True)
        for i, (img, lab) in enumerate(dataset.split_pairs(name)):
            save_image(os.path.join(d, f"img_{i:04d}.pgm"), img)
            save_labels(os.path.join(d, f"lab_{i:04d}.pgm"), lab)
    text = _manifest_text(spec)
    with open(os.path.join(root, "manifest.txt"), "w") as fh:
        fh.write(text)
    return text


def read_manifest(root):
    path = os.path.join(root, "manifest.txt")
    if not os.path.exists(path):
        raise DataError(f"no manifest.txt in {root}")
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                out[k.strip()] = v.strip()
    return out


def load_dataset(root):
    manifest = read_manifest(root)
    try:
        c = int(manifest["num_classes"])
        counts = {name: int(manifest[f"count_{name}"]) for name in SPLITS}
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed manifest in {root}: {exc}") from exc
    splits = {}
    for name in SPLITS:
        d = os.path.join(root, name)
        splits[name] = [
            (load_image(os.path.join(d, f"img_{i:04d}.pgm")),
             load_labels(os.path.join(d, f"lab_{i:04d}.pgm"), c))
            for i in range(counts[name])
        ]
    unl = splits["unlabeled"]
    return Dataset(splits["labeled"], UnlabeledSplit([x for x, _ in unl], [y for _, y in unl]),
                   splits["val"], c)
