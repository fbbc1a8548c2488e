import math

import numpy as np
import pytest

from oracles import central_diff, dice_ce_direct, rel_error
from ucad.exceptions import ParameterError, ShapeError
from ucad.grid import one_hot, softmax_channels
from ucad.losses import (
    LossValue, LossWeights, beta_schedule, dice_ce_masked, seg_loss, total_loss, unc_loss,
)

# direct scalar evaluation of both terms (see oracles.dice_ce_direct); eps = 1e-5
UNIFORM_C2_TARGET1_4X4 = 0.6799065763914889


def random_instance(seed, shape=(4, 4, 3)):
    rng = np.random.default_rng(seed)
    z = rng.normal(scale=1.5, size=shape)
    target = rng.integers(0, shape[2], shape[:2])
    mask = rng.integers(0, 2, shape[:2])
    return z, target, mask, rng


def test_dice_ce_perfect_prediction():
    y = np.random.default_rng(0).integers(0, 3, (5, 5))
    loss = dice_ce_masked(one_hot(y, 3), y, np.ones((5, 5)))
    assert 0 <= loss.value <= 1e-4


def test_dice_ce_empty_mask():
    z, t, _, _ = random_instance(1)
    loss = dice_ce_masked(softmax_channels(z), t, np.zeros((4, 4)))
    assert loss.value == 0.0
    assert not loss.grad.any()


def test_dice_ce_uniform_c2_frozen_value():
    p = np.full((4, 4, 2), 0.5)
    t = np.ones((4, 4), dtype=int)
    loss = dice_ce_masked(p, t, np.ones((4, 4)))
    assert loss.value == pytest.approx(UNIFORM_C2_TARGET1_4X4, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_dice_ce_matches_direct_evaluation(seed):
    z, t, m, _ = random_instance(seed, (5, 4, 3))
    p = softmax_channels(z)
    expected = dice_ce_direct(p.tolist(), t.tolist(), m.tolist())
    assert dice_ce_masked(p, t, m).value == pytest.approx(expected, rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("seed", range(20))
def test_dice_ce_gradient(seed):
    z, t, m, _ = random_instance(seed)
    m[0, 0] = 1
    g = dice_ce_masked(softmax_channels(z), t, m).grad
    fd = central_diff(lambda zz: dice_ce_masked(softmax_channels(zz), t, m).value, z)
    assert rel_error(g, fd) <= 1e-4


def test_dice_ce_shape_mismatch():
    with pytest.raises(ShapeError):
        dice_ce_masked(np.full((2, 2, 2), 0.5), np.zeros((3, 3), dtype=int), np.ones((2, 2)))


def test_dice_ce_nonnegative_and_ce_mask_additivity():
    for seed in range(10):
        z, t, _, rng = random_instance(seed, (6, 6, 3))
        p = softmax_channels(z)
        m1 = rng.integers(0, 2, (6, 6))
        m2 = (1 - m1) * rng.integers(0, 2, (6, 6))
        assert dice_ce_masked(p, t, m1).value >= 0

        def ce(mask):
            return -np.sum(mask * np.log(np.take_along_axis(p, t[..., None], 2)[..., 0])) / mask.sum()

        n1, n2 = m1.sum(), m2.sum()
        if n1 and n2:
            joint = ce(m1 + m2)
            assert joint == pytest.approx((n1 * ce(m1) + n2 * ce(m2)) / (n1 + n2), rel=1e-12)


def test_seg_loss_extremes_and_split():
    w = LossWeights(w_l=1.0, w_u=0.5)
    z, yl, m, rng = random_instance(3, (6, 6, 3))
    yp = rng.integers(0, 3, (6, 6))
    p = softmax_channels(z)
    ones, zeros = np.ones((6, 6)), np.zeros((6, 6))
    assert seg_loss(p, yl, yp, ones, w).value == w.w_l * dice_ce_masked(p, yl, ones).value
    assert seg_loss(p, yl, yp, zeros, w).value == w.w_u * dice_ce_masked(p, yp, ones).value
    half = np.zeros((6, 6))
    half[:, :3] = 1
    direct = (w.w_l * dice_ce_direct(p.tolist(), yl.tolist(), half.tolist())
              + w.w_u * dice_ce_direct(p.tolist(), yp.tolist(), (1 - half).tolist()))
    assert seg_loss(p, yl, yp, half, w).value == pytest.approx(direct, rel=1e-12)


def test_unc_loss_analytic_cases():
    y = np.random.default_rng(0).integers(0, 3, (4, 4))
    oh = one_hot(y, 3)
    for beta in (0.0, 0.3, 1.0, 5.0):
        assert unc_loss(oh, oh, np.ones((4, 4)), beta).value == 0.0
    ps = np.array([[[1.0, 0.0]]])
    pt = np.array([[[0.0, 1.0]]])
    assert abs(unc_loss(ps, pt, np.ones((1, 1)), 0.0).value - 1.0) <= 1e-12
    half = np.full((1, 1, 2), 0.5)
    assert abs(unc_loss(half, half, np.ones((1, 1)), 1.0).value - 2 * math.log(2)) <= 1e-9
    assert unc_loss(half, half, np.zeros((1, 1)), 1.0).value == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_unc_loss_gradient(seed):
    z, _, m, rng = random_instance(seed)
    m[1, 1] = 1
    pt = softmax_channels(rng.normal(size=z.shape))
    beta = rng.uniform(0.0, 2.0)
    g = unc_loss(softmax_channels(z), pt, m, beta).grad
    fd = central_diff(lambda zz: unc_loss(softmax_channels(zz), pt, m, beta).value, z)
    assert rel_error(g, fd) <= 1e-4


def test_unc_loss_terms_nonnegative_and_zero_only_at_agreement():
    for seed in range(10):
        z, _, m, rng = random_instance(seed)
        ps = softmax_channels(z)
        pt = softmax_channels(rng.normal(size=z.shape))
        assert unc_loss(ps, pt, m, 0.0).value >= 0
        assert unc_loss(ps, ps, m, 0.5).value > 0  # agreement but not one-hot


def test_beta_schedule():
    w = LossWeights(beta_max=1.0, beta_min=0.1)
    assert beta_schedule(0, 100, w) == 1.0
    assert beta_schedule(100, 100, w) == pytest.approx(0.1, abs=1e-15)
    assert beta_schedule(50, 100, w) == pytest.approx(0.55, abs=1e-15)
    with pytest.raises(ParameterError):
        beta_schedule(101, 100, w)
    with pytest.raises(ParameterError):
        beta_schedule(-1, 100, w)


def test_total_loss():
    g = np.zeros((1, 1, 2))
    seg, unc = LossValue(1.0, g + 1), LossValue(0.5, g + 2)
    assert total_loss(seg, unc, 0.2).value == 1.1
    assert np.allclose(total_loss(seg, unc, 0.2).grad, 1.4)
    assert total_loss(seg, unc, 0.0) is seg
    assert LossWeights().lam == 0.2
    with pytest.raises(ShapeError):
        total_loss(seg, LossValue(0.5, np.zeros((2, 1, 2))), 0.2)


def test_weights_validation():
    with pytest.raises(ParameterError):
        LossWeights(w_l=-1)
