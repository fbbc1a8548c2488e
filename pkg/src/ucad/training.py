"""Mean-teacher training with bidirectional superpixel displacement.

Each step draws a labeled/unlabeled pair, pseudo-labels both images with the
teacher, builds one mixed sample per direction, and updates the student on
the hybrid segmentation loss plus the entropy-weighted consistency loss.
The teacher follows the student by exponential moving average.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .displacement import (
    LABELED_INTO_UNLABELED, UNLABELED_INTO_LABELED, DisplacementConfig,
    displace_pair, displace_pair_rect,
)
from .exceptions import ConfigError, ParameterError, TrainingError
from .grid import fork_rng
from .losses import LossWeights, beta_schedule, dice_ce_masked, seg_loss, total_loss, unc_loss
from .metrics import dsc
from .model import (
    ModelParams, OptimState, backward, ema_update, forward, predict_labels, pseudo_label,
    sgd_step,
)
from .superpixel import slic_partition

log = logging.getLogger(__name__)

STRATEGIES = ("base-rect", "cad", "cad+ugs", "full")


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "full"
    k_target: int | None = None
    compactness: float = 10.0
    slic_iterations: int = 10
    temperature: float = 0.5
    n_regions: int | None = None
    w_l: float = 1.0
    w_u: float = 0.5
    lam: float = 0.2
    beta_max: float = 1.0
    beta_min: float = 0.1
    alpha: float = 0.99
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_steps: int = 200
    total_steps: int = 2000
    eval_every: int = 100
    batch: int = 1
    hidden: int = 16
    seed: int = 0
    check_invariants: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.total_steps < 1 or self.warmup_steps < 0 or self.eval_every < 1:
            raise ConfigError("need total_steps >= 1, warmup_steps >= 0, eval_every >= 1")
        if self.batch < 1 or self.hidden < 1:
            raise ConfigError("batch and hidden must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.temperature <= 0 or self.compactness <= 0 or self.slic_iterations < 1:
            raise ConfigError("temperature and compactness must be > 0, slic_iterations >= 1")
        if self.k_target is not None and self.k_target < 1:
            raise ConfigError("k_target must be >= 1")
        if self.n_regions is not None and self.n_regions < 0:
            raise ConfigError("n_regions must be >= 0")
        if self.lr <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("need lr > 0, momentum >= 0, weight_decay >= 0")

    @property
    def weights(self):
        return LossWeights(self.w_l, self.w_u, self.lam, self.beta_max, self.beta_min)

    @property
    def displacement(self):
        return DisplacementConfig(
            k_target=self.k_target, compactness=self.compactness,
            slic_iterations=self.slic_iterations, temperature=self.temperature,
            n_regions=self.n_regions, uncertainty_guided=self.strategy in ("cad+ugs", "full"),
        )

    @property
    def effective_lambda(self):
        # the consistency loss is only switched on in the full configuration
        return self.lam if self.strategy == "full" else 0.0


@dataclass
class HistoryRecord:
    step: int
    l_seg: float
    l_unc: float
    l_total: float
    beta: float
    val_dsc: float = float("nan")


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def append(self, rec):
        if self.records and rec.step <= self.records[-1].step:
            raise TrainingError("history steps must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def final_val_dsc(self):
        for rec in reversed(self.records):
            if not math.isnan(rec.val_dsc):
                return rec.val_dsc
        return float("nan")

    def to_csv(self):
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["step", "l_seg", "l_unc", "l_total", "beta", "val_dsc"])
        for r in self.records:
            val = "" if math.isnan(r.val_dsc) else repr(float(r.val_dsc))
            out.writerow([r.step, repr(float(r.l_seg)), repr(float(r.l_unc)),
                          repr(float(r.l_total)), repr(float(r.beta)), val])
        return buf.getvalue()


def mean_foreground_dsc(params, pairs, num_classes):
    scores = []
    for img, gt in pairs:
        pred = predict_labels(params, img)
        scores.append(np.mean([dsc(pred, gt, c) for c in range(1, num_classes)]))
    return float(np.mean(scores))


def _check_finite(value, what, step):
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {what} ({value}) at step {step}")


def _zero_grads(params):
    return params.map(np.zeros_like)


class _PartitionCache:
    """SLIC partitions of dataset images; sources are never modified, so one pass each."""

    def __init__(self, cfg):
        self.cfg = cfg
        self._store = {}

    def get(self, key, img):
        if key not in self._store:
            self._store[key] = slic_partition(img, self.cfg.resolve_k(img.shape),
                                              self.cfg.compactness, self.cfg.slic_iterations)
        return self._store[key]


def mixed_samples(cfg, teacher, x_l, y_l, x_u, rng, cache=None, keys=(None, None)):
    """Both displacement directions for one labeled/unlabeled pair.

    Returns a list of ``(sample, y_labeled, y_pseudo)`` tuples, forward
    direction (unlabeled regions pasted into the labeled image) first.
    """
    num_classes = teacher.dims[2]
    y_u, _, p_u = pseudo_label(teacher, x_u)
    dcfg = cfg.displacement
    rng_fwd, rng_rev = rng.spawn(2)
    if cfg.strategy == "base-rect":
        fwd = displace_pair_rect(x_u, y_u, x_l, y_l, dcfg, rng_fwd, num_classes=num_classes,
                                 direction=UNLABELED_INTO_LABELED)
        rev = displace_pair_rect(x_l, y_l, x_u, y_u, dcfg, rng_rev, num_classes=num_classes,
                                 direction=LABELED_INTO_UNLABELED)
    else:
        _, _, p_l = pseudo_label(teacher, x_l)
        part_u = cache.get(keys[1], x_u) if cache and keys[1] is not None else None
        part_l = cache.get(keys[0], x_l) if cache and keys[0] is not None else None
        fwd = displace_pair(x_u, y_u, x_l, y_l, p_u, dcfg, rng_fwd, num_classes=num_classes,
                            direction=UNLABELED_INTO_LABELED, partition=part_u)
        rev = displace_pair(x_l, y_l, x_u, y_u, p_l, dcfg, rng_rev, num_classes=num_classes,
                            direction=LABELED_INTO_UNLABELED, partition=part_l)
    return [(fwd, y_l, y_u), (rev, y_l, y_u)]


def sample_loss(cfg, student, teacher, sample, y_l, y_p, beta, lam):
    """Total loss and student parameter gradients for one mixed sample."""
    _, p_s, fcache = forward(student, sample.image, return_cache=True)
    _, p_t = forward(teacher, sample.image)
    seg = seg_loss(p_s, y_l, y_p, sample.labeled_region, cfg.weights)
    unc = unc_loss(p_s, p_t, sample.unlabeled_region, beta)
    tot = total_loss(seg, unc, lam)
    grads = backward(student, sample.image, tot.grad, fcache)
    return seg, unc, tot, grads


def train(cfg, dataset, student=None, progress=None):
    """Train a student/teacher pair on ``dataset``.

    Parameters
    ----------
    cfg : TrainConfig
    dataset : data.Dataset (only the unlabeled *images* are used)
    student : optional initial parameters; drawn from ``cfg.seed`` otherwise
    progress : optional callable ``progress(record)`` called after every step

    Returns
    -------
    (student, teacher, TrainHistory)
    """
    labeled = list(dataset.labeled)
    unlabeled = dataset.unlabeled.images
    val = list(dataset.val)
    c = dataset.num_classes
    if not labeled or not unlabeled:
        raise ConfigError("training needs at least one labeled and one unlabeled image")

    if student is None:
        student = ModelParams.init(c, fork_rng(cfg.seed, 0), hidden=cfg.hidden)
    opt = OptimState.for_params(student, cfg.lr, cfg.momentum, cfg.weight_decay)
    teacher = None
    cache = _PartitionCache(cfg.displacement)
    history = TrainHistory()

    if not np.all(np.isfinite(student.to_vector())):
        raise ParameterError("initial student parameters are not finite")
    for step in range(cfg.total_steps):
        try:
            student, opt, teacher, rec = _train_step(
                cfg, step, student, opt, teacher, labeled, unlabeled, cache)
        except ParameterError as exc:
            # finite inputs only go non-finite through divergence
            raise TrainingError(f"numeric failure at step {step}: {exc}") from exc
        if val and ((step + 1) % cfg.eval_every == 0 or step == cfg.total_steps - 1):
            rec.val_dsc = mean_foreground_dsc(student, val, c)
            log.debug("step %d: l_total=%.4f val_dsc=%.4f", step, rec.l_total, rec.val_dsc)
        history.append(rec)
        if progress is not None:
            progress(rec)

    if teacher is None:
        teacher = student.copy()
    return student, teacher, history


def _train_step(cfg, step, student, opt, teacher, labeled, unlabeled, cache):
    """One optimizer step; returns the new student, optimizer, teacher and record."""
    weights = cfg.weights
    lam = cfg.effective_lambda
    beta = beta_schedule(step, cfg.total_steps, weights)
    grads = _zero_grads(student)
    l_seg = l_unc = l_tot = 0.0
    if step < cfg.warmup_steps:
        for b in range(cfg.batch):
            rng = fork_rng(cfg.seed, 1, step, b)
            x, y = labeled[int(rng.integers(len(labeled)))]
            _, p, fcache = forward(student, x, return_cache=True)
            loss = dice_ce_masked(p, y, np.ones(x.shape))
            g = backward(student, x, loss.grad, fcache)
            grads = grads.map(np.add, g)
            l_seg += loss.value
        n_terms = cfg.batch
        l_tot = l_seg
    else:
        if teacher is None:
            teacher = student.copy()
        for b in range(cfg.batch):
            rng = fork_rng(cfg.seed, 2, step, b)
            li = int(rng.integers(len(labeled)))
            ui = int(rng.integers(len(unlabeled)))
            x_l, y_l = labeled[li]
            pairs = mixed_samples(cfg, teacher, x_l, y_l, unlabeled[ui], rng, cache,
                                  keys=(("l", li), ("u", ui)))
            for sample, yl, yp in pairs:
                seg, unc, tot, g = sample_loss(cfg, student, teacher, sample, yl, yp, beta, lam)
                grads = grads.map(np.add, g)
                l_seg += seg.value
                l_unc += unc.value
                l_tot += tot.value
        n_terms = 2 * cfg.batch
    l_seg /= n_terms
    l_unc /= n_terms
    l_tot /= n_terms
    _check_finite(l_tot, "loss", step)
    grads = grads.map(lambda g: g / n_terms)

    if cfg.check_invariants and teacher is not None:
        t_sum = teacher.checksum()
    student, opt = sgd_step(student, grads, opt)
    if cfg.check_invariants and teacher is not None and teacher.checksum() != t_sum:
        raise TrainingError("optimizer step modified the teacher")
    if step >= cfg.warmup_steps:
        s_sum = student.checksum() if cfg.check_invariants else None
        teacher = ema_update(teacher, student, cfg.alpha)
        if cfg.check_invariants and student.checksum() != s_sum:
            raise TrainingError("EMA update modified the student")
    elif step == cfg.warmup_steps - 1:
        teacher = student.copy()

    return student, opt, teacher, HistoryRecord(step, l_seg, l_unc, l_tot, beta)


def config_dict(cfg):
    return asdict(cfg)
