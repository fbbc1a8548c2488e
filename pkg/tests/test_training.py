import dataclasses
import math

import numpy as np
import pytest

from ucad.data import Dataset, UnlabeledSplit
from ucad.exceptions import ConfigError, ParameterError, TrainingError
from ucad.grid import fork_rng
from ucad.model import ModelParams, OptimState, sgd_step
from ucad.training import (
    STRATEGIES, HistoryRecord, TrainConfig, TrainHistory, _PartitionCache, mixed_samples,
    sample_loss, train,
)

SHORT = dict(warmup_steps=4, total_steps=10, eval_every=5, hidden=4)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(strategy="mixup")
    with pytest.raises(ConfigError):
        TrainConfig(alpha=1.5)
    with pytest.raises(ConfigError):
        TrainConfig(total_steps=0)
    assert TrainConfig().lam == 0.2
    assert TrainConfig(strategy="cad").effective_lambda == 0.0
    assert TrainConfig(strategy="full").effective_lambda == 0.2
    assert TrainConfig(strategy="cad").displacement.uncertainty_guided is False
    assert TrainConfig(strategy="cad+ugs").displacement.uncertainty_guided is True


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_training_is_deterministic(small_dataset, strategy):
    cfg = TrainConfig(strategy=strategy, seed=5, **SHORT)
    s1, t1, h1 = train(cfg, small_dataset)
    s2, t2, h2 = train(cfg, small_dataset)
    assert s1.checksum() == s2.checksum() and t1.checksum() == t2.checksum()
    assert h1.to_csv() == h2.to_csv()
    assert len(h1) == 10
    assert [r.step for r in h1.records if not math.isnan(r.val_dsc)] == [4, 9]


def test_different_seeds_differ(small_dataset):
    a = train(TrainConfig(seed=1, **SHORT), small_dataset)[0]
    b = train(TrainConfig(seed=2, **SHORT), small_dataset)[0]
    assert a.checksum() != b.checksum()


def test_warmup_only_teacher_equals_student(small_dataset):
    cfg = TrainConfig(warmup_steps=6, total_steps=6, hidden=4)
    student, teacher, hist = train(cfg, small_dataset)
    assert student.checksum() == teacher.checksum()
    assert all(r.l_unc == 0.0 for r in hist.records)


def test_zero_lambda_total_equals_seg(small_dataset):
    cfg = TrainConfig(lam=0.0, **SHORT)
    _, _, hist = train(cfg, small_dataset)
    main = hist.records[SHORT["warmup_steps"]:]
    assert all(r.l_total == r.l_seg for r in main)
    assert any(r.l_unc > 0 for r in main)


def test_beta_anneals_over_global_step(small_dataset):
    _, _, hist = train(TrainConfig(**SHORT), small_dataset)
    betas = [r.beta for r in hist.records]
    assert betas[0] == 1.0
    assert all(a > b for a, b in zip(betas, betas[1:]))
    assert betas[-1] > 0.1


def test_invariant_checks_pass(small_dataset):
    train(TrainConfig(check_invariants=True, **SHORT), small_dataset)


def test_training_needs_both_splits(small_dataset):
    empty_u = Dataset(small_dataset.labeled, UnlabeledSplit([], []), [], 3)
    with pytest.raises(ConfigError):
        train(TrainConfig(**SHORT), empty_u)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts(small_dataset):
    with pytest.raises(TrainingError):
        train(TrainConfig(lr=1e200, momentum=0.0, **SHORT), small_dataset)
    bad = ModelParams.init(3, fork_rng(0, 0), hidden=4)
    bad.w2[:] = np.nan
    with pytest.raises(ParameterError):
        train(TrainConfig(**SHORT), small_dataset, student=bad)


def test_progress_callback(small_dataset):
    seen = []
    train(TrainConfig(**SHORT), small_dataset, progress=seen.append)
    assert [r.step for r in seen] == list(range(10))


def test_history_csv():
    h = TrainHistory()
    h.append(HistoryRecord(0, 1.0, 0.0, 1.0, 1.0))
    h.append(HistoryRecord(1, 0.5, 0.25, 0.55, 0.9, 0.75))
    assert h.to_csv().splitlines() == [
        "step,l_seg,l_unc,l_total,beta,val_dsc",
        "0,1.0,0.0,1.0,1.0,",
        "1,0.5,0.25,0.55,0.9,0.75",
    ]
    assert h.final_val_dsc() == 0.75
    with pytest.raises(TrainingError):
        h.append(HistoryRecord(1, 0, 0, 0, 0))


@pytest.mark.parametrize("strategy", ["base-rect", "full"])
def test_two_direction_average(small_dataset, strategy):
    # with plain SGD the averaged step is the mean of the per-direction steps
    cfg = TrainConfig(strategy=strategy, momentum=0.0, weight_decay=0.0, warmup_steps=0,
                      total_steps=1, hidden=4, seed=9)
    init = ModelParams.init(3, fork_rng(cfg.seed, 0), hidden=4)
    student, _, _ = train(cfg, small_dataset, student=init.copy())

    rng = fork_rng(cfg.seed, 2, 0, 0)
    li = int(rng.integers(len(small_dataset.labeled)))
    ui = int(rng.integers(len(small_dataset.unlabeled)))
    x_l, y_l = small_dataset.labeled[li]
    cache = _PartitionCache(cfg.displacement)
    pairs = mixed_samples(cfg, init, x_l, y_l, small_dataset.unlabeled.images[ui], rng, cache,
                          keys=(("l", li), ("u", ui)))
    assert len(pairs) == 2
    assert pairs[0][0].direction != pairs[1][0].direction
    opt = OptimState.for_params(init, cfg.lr, 0.0, 0.0)
    steps, grads = [], []
    for sample, yl, yp in pairs:
        g = sample_loss(cfg, init, init, sample, yl, yp, 1.0, cfg.effective_lambda)[3]
        grads.append(g)
        steps.append(sgd_step(init, g, opt)[0])
    averaged = sgd_step(init, grads[0].map(lambda a, b: (a + b) / 2, grads[1]), opt)[0]
    assert averaged.checksum() == student.checksum()
    mean_of_steps = steps[0].map(lambda a, b: (a + b) / 2, steps[1])
    np.testing.assert_allclose(student.to_vector(), mean_of_steps.to_vector(),
                               rtol=0, atol=4 * np.finfo(float).eps)


def test_rect_strategy_ignores_partitions(small_dataset):
    cfg = TrainConfig(strategy="base-rect", **SHORT)
    cfg2 = dataclasses.replace(cfg, compactness=3.0)
    assert train(cfg, small_dataset)[0].checksum() == train(cfg2, small_dataset)[0].checksum()
