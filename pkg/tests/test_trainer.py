"""Tests for the SGD trainer, learning-rate sweeps and gradient volumes."""

import numpy as np
import pytest

from pymixloss import trainer
from pymixloss.core import RandomSource
from pymixloss.data import SplitSpec, make_blobs, split
from pymixloss.exceptions import InvalidInput, TrainingFailed
from pymixloss.losses import CE_WEIGHTS, LossSpec, MixWeights
from pymixloss.model import Architecture, backward, init_model, load_checkpoint
from pymixloss.schedule import ScheduleSpec, schedule_at
from pymixloss.trainer import TrainConfig


def fresh_model(splits, architecture=Architecture.LINEAR, seed=5):
    return init_model(
        architecture,
        splits.train.input_dim,
        splits.train.classes,
        RandomSource(seed),
    )


def test_zero_learning_rate_freezes_parameters(blob_splits):
    model = fresh_model(blob_splits)
    report = trainer.train(model, blob_splits, TrainConfig(epochs=3, lr=0.0))
    np.testing.assert_array_equal(report.model.flat(), model.flat())
    assert report.best_val_epoch == 0
    assert len(report.epochs) == 3


def test_separable_blobs_are_learned():
    splits = split(make_blobs(2, 50, 2, 10.0, seed=3), SplitSpec(seed=3))
    report = trainer.train(
        fresh_model(splits), splits, TrainConfig(epochs=50, lr=0.01)
    )
    assert not report.failed
    assert report.epochs[-1].train_acc == 1.0
    assert report.best_val_accuracy == 1.0


def test_milestones():
    cfg = TrainConfig(epochs=90, lr=0.1, lr_milestones=[(30, 0.1), (60, 0.1)])
    assert cfg.lr_at(29) == 0.1
    assert cfg.lr_at(30) == pytest.approx(0.01)
    assert cfg.lr_at(75) == pytest.approx(0.001)
    assert trainer.CINIC_MILESTONES == ((30, 0.1), (60, 0.1))


def test_training_is_deterministic(blob_splits, architecture):
    cfg = TrainConfig(epochs=4, lr=0.05, seed=3)
    model = fresh_model(blob_splits, architecture)
    first = trainer.train(model, blob_splits, cfg)
    second = trainer.train(model, blob_splits, cfg)
    assert first.epochs == second.epochs
    np.testing.assert_array_equal(first.model.flat(), second.model.flat())


def test_shuffle_depends_on_seed(blob_splits):
    model = fresh_model(blob_splits)
    first = trainer.train(model, blob_splits, TrainConfig(epochs=1, seed=1))
    second = trainer.train(model, blob_splits, TrainConfig(epochs=1, seed=2))
    assert not np.array_equal(first.model.flat(), second.model.flat())


@pytest.mark.parametrize("decay_biases", [True, False])
def test_full_batch_step_with_weight_decay(blob_splits, decay_biases):
    model = fresh_model(blob_splits)
    model.params["b"][:] = 1.0
    train_set = blob_splits.train
    lr, wd = 0.1, 0.01
    cfg = TrainConfig(
        epochs=1,
        batch_size=len(train_set),
        lr=lr,
        momentum=0.0,
        weight_decay=wd,
        loss=LossSpec("ce"),
        shuffle=False,
        decay_biases=decay_biases,
    )
    report = trainer.train(model, blob_splits, cfg)
    _, grads = backward(
        model, train_set.features, train_set.labels, LossSpec("ce")
    )
    expected_w = model.params["w"] * (1 - lr * wd) - lr * grads["w"]
    np.testing.assert_allclose(
        report.model.params["w"], expected_w, rtol=0, atol=1e-12
    )
    bias_decay = wd if decay_biases else 0.0
    expected_b = model.params["b"] * (1 - lr * bias_decay) - lr * grads["b"]
    np.testing.assert_allclose(
        report.model.params["b"], expected_b, rtol=0, atol=1e-12
    )


def test_recorded_weights_follow_the_schedule(blob_splits):
    spec = ScheduleSpec("gradual")
    cfg = TrainConfig(epochs=12, lr=0.01, loss=spec)
    report = trainer.train(fresh_model(blob_splits), blob_splits, cfg)
    for record in report.epochs:
        phase = schedule_at(spec, record.epoch, 12)
        assert (record.alpha, record.beta, record.focus) == (
            phase.alpha,
            phase.beta,
            phase.focus,
        )


def test_ce_weights_reduce_to_cross_entropy(blob_splits):
    model = fresh_model(blob_splits, Architecture.MLP1)
    mixed = trainer.train(
        model,
        blob_splits,
        TrainConfig(epochs=3, loss=LossSpec.create("mixed", alpha=1, beta=0)),
    )
    plain = trainer.train(
        model, blob_splits, TrainConfig(epochs=3, loss=LossSpec("ce"))
    )
    np.testing.assert_array_equal(mixed.model.flat(), plain.model.flat())
    assert mixed.epochs == plain.epochs


def test_value_only_losses_record_nan_weights(blob_splits):
    cfg = TrainConfig(epochs=1, loss=LossSpec("focal"))
    report = trainer.train(fresh_model(blob_splits), blob_splits, cfg)
    assert np.isnan(report.epochs[0].alpha)


def diverging_config(**changes):
    cfg = TrainConfig(epochs=40, lr=1e3, momentum=0.0, weight_decay=1.0)
    return cfg.replace(**changes)


def test_divergence_marks_the_run_failed(blob_splits):
    report = trainer.train(
        fresh_model(blob_splits), blob_splits, diverging_config()
    )
    assert report.failed
    assert "diverged" in report.diagnostic
    assert len(report.epochs) < 40


def test_sweep_skips_diverging_runs(blob_splits):
    best, reports = trainer.lr_sweep(
        lambda: fresh_model(blob_splits),
        blob_splits,
        diverging_config(),
        [1e3, 0.01],
    )
    assert reports[0].failed
    assert best is reports[1]
    assert best.config.lr == 0.01


def test_sweep_fails_when_every_run_fails(blob_splits):
    with pytest.raises(TrainingFailed):
        trainer.lr_sweep(
            lambda: fresh_model(blob_splits),
            blob_splits,
            diverging_config(),
            [1e3],
        )
    with pytest.raises(InvalidInput):
        trainer.lr_sweep(lambda: None, blob_splits, TrainConfig(), [])


def test_sweep_single_rate_and_ties(blob_splits):
    cfg = TrainConfig(epochs=2)
    best, reports = trainer.lr_sweep(
        lambda: fresh_model(blob_splits), blob_splits, cfg, [0.005]
    )
    assert reports == [best]
    best, _ = trainer.lr_sweep(
        lambda: fresh_model(blob_splits), blob_splits, cfg, [2e-12, 1e-12]
    )
    assert best.config.lr == 1e-12
    assert trainer.DEFAULT_LRS == (0.01, 0.005, 0.001)


def test_snapshots_and_checkpoint(blob_splits, tmp_path):
    cfg = TrainConfig(epochs=3, snapshot_epochs=(0, 2))
    path = tmp_path / "best.txt"
    report = trainer.train(fresh_model(blob_splits), blob_splits, cfg, path)
    assert sorted(report.snapshots) == [0, 2]
    assert report.snapshots[2].epoch == 2
    assert report.checkpoint == str(path)
    np.testing.assert_array_equal(
        load_checkpoint(path).flat(), report.best_model.flat()
    )


def test_mismatched_features_are_rejected(blob_splits):
    model = init_model("linear", 3, 3, RandomSource(0))
    with pytest.raises(InvalidInput):
        trainer.train(model, blob_splits, TrainConfig())


@pytest.mark.parametrize(
    "changes",
    [
        {"epochs": 0},
        {"batch_size": 0},
        {"lr": -0.1},
        {"lr": float("nan")},
        {"momentum": 1.0},
        {"weight_decay": -1e-4},
        {"lr_milestones": [(20, 0.1), (10, 0.1)]},
        {"lr_milestones": [(50, 0.1)]},
        {"lr_milestones": [(10, 0.0)]},
        {"snapshot_epochs": [50]},
    ],
)
def test_invalid_configs(changes):
    with pytest.raises(InvalidInput):
        TrainConfig(**changes)


def test_config_dict_form():
    cfg = TrainConfig(
        epochs=10,
        lr_milestones=[(5, 0.5)],
        loss=ScheduleSpec("two_phase"),
        snapshot_epochs=[1],
    )
    data = cfg.to_dict()
    assert data["schedule"]["protocol"] == "f0-05"
    assert TrainConfig.from_dict(data) == cfg
    fixed = TrainConfig.from_dict({"loss": {"name": "el"}})
    assert fixed.loss == LossSpec("el")
    with pytest.raises(InvalidInput):
        TrainConfig.from_dict({"optimizer": "adam"})


@pytest.mark.parametrize(
    "weights, case, volume",
    [
        (CE_WEIGHTS, "target", 0.5),
        (MixWeights(1.0, 1.0), "target", 2 / 3),
        # p_j integrates to 1/2 over the simplex; 1/4 would be wrong.
        (CE_WEIGHTS, "nontarget", 0.5),
        (MixWeights(1.0, 1.0), "nontarget", 0.75),
    ],
)
def test_gradient_volume(weights, case, volume):
    assert trainer.gradient_volume(weights, case) == pytest.approx(
        volume, abs=1e-8
    )


def test_volume_matched_learning_rate():
    assert trainer.volume_matched_ce_lr(0.01, CE_WEIGHTS) == pytest.approx(
        0.01
    )
    assert trainer.volume_matched_ce_lr(
        0.03, MixWeights(1.0, 1.0)
    ) == pytest.approx(0.04, rel=1e-8)
    factors = [
        trainer.volume_matched_ce_lr(1.0, MixWeights(1.0, beta))
        for beta in np.linspace(0.0, 6.0, 13)
    ]
    assert all(b >= a - 1e-9 for a, b in zip(factors, factors[1:]))
    with pytest.raises(InvalidInput):
        trainer.volume_matched_ce_lr(0.0, CE_WEIGHTS)
    with pytest.raises(InvalidInput):
        trainer.gradient_volume(CE_WEIGHTS, "diagonal")
