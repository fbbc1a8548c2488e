"""Semi-supervised segmentation with uncertainty-guided superpixel displacement."""
from .displacement import (
    DisplacementConfig, MixedSample, build_mask, displace_pair, displacement_distribution,
    entropy_map, mix_images, mix_labels, region_uncertainty, sample_regions,
)
from .estimator import SLICSuperpixels, UCADSegmenter
from .grid import argmax_labels, make_rng, one_hot, softmax_channels
from .losses import (
    LossValue, LossWeights, beta_schedule, dice_ce_masked, seg_loss, total_loss, unc_loss,
)
from .metrics import MetricsReport, asd, dsc, evaluate
from .model import ModelParams, OptimState, backward, ema_update, forward, pseudo_label, sgd_step
from .superpixel import SuperpixelPartition, slic_partition
from .training import TrainConfig, TrainHistory, train

__version__ = "0.1.0"
