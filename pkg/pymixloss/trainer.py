"""Mini-batch SGD with momentum, weight decay and learning-rate milestones.

Update rule per mini-batch::

    v     <- momentum * v + (mean batch gradient + weight_decay * theta)
    theta <- theta - lr_e * v

where ``lr_e`` is the base learning rate multiplied by every milestone
factor whose epoch is ``<= e``.
"""
import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from typing import (
    Callable,
    Dict,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
from scipy import integrate

from .analysis import BucketSnapshot
from .core import RandomSource
from .data import Splits
from .exceptions import InvalidInput, NonFiniteInput, TrainingFailed
from .losses import (
    CE_WEIGHTS,
    LossSpec,
    MixWeights,
    build_loss,
    target_gradient,
)
from .model import (
    ClassifierModel,
    accuracy,
    backward,
    forward,
    save_checkpoint,
)
from .schedule import ScheduleSpec, focus_of, schedule_at

LOG = logging.getLogger(__name__)

DEFAULT_LRS = (0.01, 0.005, 0.001)
DEFAULT_MOMENTUM = 0.9
DEFAULT_WEIGHT_DECAY = 1e-4
QUADRATURE_EPSABS = 1e-9

# Stream indices under a run seed.
INIT_STREAM = 0
SHUFFLE_STREAM = 1

# Milestone regimes used for the image benchmarks.
CINIC_MILESTONES = ((30, 0.1), (60, 0.1))
CIFAR_MILESTONES = ((120, 0.1), (160, 0.1), (200, 0.1))

LossConfig = Union[ScheduleSpec, LossSpec]


def loss_config_from_dict(data: Mapping) -> LossConfig:
    """Parse ``{"schedule": {...}}`` or ``{"loss": {...}}``."""
    if "schedule" in data:
        return ScheduleSpec.from_dict(data["schedule"])
    if "loss" in data:
        return LossSpec.from_dict(data["loss"])
    raise InvalidInput(f"expected a 'schedule' or 'loss' entry: {data}")


def loss_config_to_dict(config: LossConfig) -> Dict:
    """Inverse of :func:`loss_config_from_dict`."""
    if isinstance(config, ScheduleSpec):
        return {"schedule": config.to_dict()}
    return {"loss": config.to_dict()}


@dataclass(frozen=True)
class TrainConfig:
    """Settings of one training run."""

    epochs: int = 50
    batch_size: int = 8
    lr: float = 0.01
    momentum: float = DEFAULT_MOMENTUM
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    lr_milestones: Tuple[Tuple[int, float], ...] = ()
    loss: LossConfig = field(default_factory=ScheduleSpec)
    seed: int = 0
    shuffle: bool = True
    decay_biases: bool = True
    snapshot_epochs: Tuple[int, ...] = ()

    def __post_init__(self):
        """Validate the configuration.

        A learning rate of 0 is accepted and freezes the parameters.
        """
        milestones = tuple(
            (int(epoch), float(factor)) for epoch, factor in self.lr_milestones
        )
        object.__setattr__(self, "lr_milestones", milestones)
        snapshots = tuple(int(e) for e in self.snapshot_epochs)
        object.__setattr__(self, "snapshot_epochs", snapshots)
        if self.epochs < 1:
            raise InvalidInput(f"epochs must be >= 1: {self.epochs}")
        if self.batch_size < 1:
            raise InvalidInput(f"batch_size must be >= 1: {self.batch_size}")
        if not (math.isfinite(self.lr) and self.lr >= 0):
            raise InvalidInput(f"lr must be >= 0: {self.lr}")
        if not 0 <= self.momentum < 1:
            raise InvalidInput(f"momentum must lie in [0, 1): {self.momentum}")
        if self.weight_decay < 0:
            raise InvalidInput(
                f"weight_decay must be >= 0: {self.weight_decay}"
            )
        epochs = [epoch for epoch, _ in milestones]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise InvalidInput(f"milestones must be increasing: {milestones}")
        if epochs and (epochs[0] < 0 or epochs[-1] >= self.epochs):
            raise InvalidInput(
                f"milestone epochs must lie in [0, {self.epochs}): {epochs}"
            )
        if any(factor <= 0 for _, factor in milestones):
            raise InvalidInput(f"milestone factors must be > 0: {milestones}")
        if any(not 0 <= e < self.epochs for e in self.snapshot_epochs):
            raise InvalidInput(
                f"snapshot epochs outside [0, {self.epochs}): "
                f"{self.snapshot_epochs}"
            )

    def lr_at(self, epoch: int) -> float:
        """Return the learning rate in effect at ``epoch``."""
        rate = self.lr
        for start, factor in self.lr_milestones:
            if start <= epoch:
                rate *= factor
        return rate

    def replace(self, **changes) -> "TrainConfig":
        """Return a copy with ``changes`` applied."""
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainConfig":
        """Create a config from its mapping; unknown keys are rejected."""
        data = dict(data)
        loss = {k: data.pop(k) for k in ("schedule", "loss") if k in data}
        if loss:
            data["loss"] = loss_config_from_dict(loss)
        if "lr_milestones" in data:
            data["lr_milestones"] = tuple(
                tuple(pair) for pair in data["lr_milestones"]
            )
        if "snapshot_epochs" in data:
            data["snapshot_epochs"] = tuple(data["snapshot_epochs"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise InvalidInput(f"invalid trainer config: {exc}") from exc

    def to_dict(self) -> Dict:
        """Return the config mapping."""
        data = {
            f.name: getattr(self, f.name)
            for f in dataclasses.fields(self)
            if f.name != "loss"
        }
        data["lr_milestones"] = [list(pair) for pair in self.lr_milestones]
        data["snapshot_epochs"] = list(self.snapshot_epochs)
        data.update(loss_config_to_dict(self.loss))
        return data


@dataclass
class EpochRecord:
    """Metrics of one epoch."""

    epoch: int
    alpha: float
    beta: float
    focus: float
    train_loss: float
    train_acc: float
    val_acc: float
    test_acc: float


@dataclass
class RunReport:
    """Outcome of one training run."""

    config: TrainConfig
    epochs: List[EpochRecord] = field(default_factory=list)
    best_val_epoch: Optional[int] = None
    test_accuracy_at_best: float = 0.0
    failed: bool = False
    diagnostic: str = ""
    snapshots: Dict[int, BucketSnapshot] = field(default_factory=dict)
    checkpoint: Optional[str] = None
    model: Optional[ClassifierModel] = field(default=None, repr=False)
    best_model: Optional[ClassifierModel] = field(default=None, repr=False)

    @property
    def best_val_accuracy(self) -> float:
        """Validation accuracy at the best epoch (0 when none completed)."""
        if self.best_val_epoch is None:
            return 0.0
        return self.epochs[self.best_val_epoch].val_acc


def _epoch_loss(config: LossConfig, epoch: int, total: int):
    """Return (loss, alpha, beta, focus) in effect at ``epoch``."""
    if isinstance(config, ScheduleSpec):
        phase = schedule_at(config, epoch, total)
        return build_loss(phase.mix), phase.alpha, phase.beta, phase.focus
    loss = build_loss(config)
    weights = loss.weights
    if weights is None:
        return loss, math.nan, math.nan, math.nan
    focus = 0.0 if weights.beta == 0 else focus_of(weights)
    return loss, weights.alpha, weights.beta, focus


def _decayed(name: str, cfg: TrainConfig) -> bool:
    return cfg.decay_biases or not name.startswith("b")


def train(
    model: ClassifierModel,
    splits: Splits,
    cfg: TrainConfig,
    checkpoint_path: Optional[Union[str, os.PathLike]] = None,
) -> RunReport:
    """Train a copy of ``model`` and report per-epoch metrics.

    A non-finite loss, gradient or parameter aborts the run; the report is
    then marked failed and keeps the epochs completed so far.
    """
    for part in splits:
        if part.input_dim != model.input_dim:
            raise InvalidInput(
                f"{part.name} has {part.input_dim} features, model expects "
                f"{model.input_dim}"
            )
    model = model.copy()
    report = RunReport(cfg)
    velocity = {n: np.zeros_like(p) for n, p in model.params.items()}
    train_set = splits.train
    count = len(train_set)
    run_rng = RandomSource(cfg.seed)
    best_params = None
    LOG.info(
        "Training %r on %s for %d epochs (lr=%g, batch=%d)",
        model,
        train_set.name,
        cfg.epochs,
        cfg.lr,
        cfg.batch_size,
    )

    for epoch in range(cfg.epochs):
        loss, alpha, beta, focus = _epoch_loss(cfg.loss, epoch, cfg.epochs)
        rate = cfg.lr_at(epoch)
        if cfg.shuffle:
            shuffle = run_rng.spawn(SHUFFLE_STREAM).spawn(epoch)
            order = shuffle.permutation(count)
        else:
            order = np.arange(count)
        total_loss = 0.0
        try:
            with np.errstate(over="raise", invalid="raise"):
                for start in range(0, count, cfg.batch_size):
                    batch = order[start : start + cfg.batch_size]
                    value, grads = backward(
                        model,
                        train_set.features[batch],
                        train_set.labels[batch],
                        loss,
                    )
                    if not math.isfinite(value):
                        raise NonFiniteInput(f"loss is {value}")
                    total_loss += value * batch.size
                    for name, param in model.params.items():
                        step = grads[name]
                        if cfg.weight_decay and _decayed(name, cfg):
                            step = step + cfg.weight_decay * param
                        velocity[name] = cfg.momentum * velocity[name] + step
                        param -= rate * velocity[name]
                        if not np.all(np.isfinite(param)):
                            raise NonFiniteInput(f"parameter {name} diverged")
        except (NonFiniteInput, FloatingPointError) as exc:
            report.failed = True
            report.diagnostic = f"diverged in epoch {epoch}: {exc}"
            LOG.error("Run %s %s", train_set.name, report.diagnostic)
            break

        record = EpochRecord(
            epoch,
            alpha,
            beta,
            focus,
            total_loss / count,
            accuracy(model, splits.train),
            accuracy(model, splits.val),
            accuracy(model, splits.test),
        )
        report.epochs.append(record)
        LOG.debug(
            "epoch %d: loss=%.6g train=%.4f val=%.4f test=%.4f F=%g",
            epoch,
            record.train_loss,
            record.train_acc,
            record.val_acc,
            record.test_acc,
            focus,
        )
        if epoch in cfg.snapshot_epochs:
            report.snapshots[epoch] = BucketSnapshot.from_logits(
                epoch,
                forward(model, splits.test.features),
                splits.test.labels,
            )
        if (
            report.best_val_epoch is None
            or record.val_acc > report.best_val_accuracy
        ):
            report.best_val_epoch = epoch
            report.test_accuracy_at_best = record.test_acc
            best_params = model.flat()

    report.model = model
    if best_params is not None:
        report.best_model = model.with_flat(best_params)
        if checkpoint_path is not None:
            save_checkpoint(report.best_model, checkpoint_path)
            report.checkpoint = os.fspath(checkpoint_path)
    LOG.info(
        "Finished %s: best val %.4f at epoch %s, test %.4f%s",
        train_set.name,
        report.best_val_accuracy,
        report.best_val_epoch,
        report.test_accuracy_at_best,
        " (failed)" if report.failed else "",
    )
    return report


def lr_sweep(
    model_factory: Callable[[], ClassifierModel],
    splits: Splits,
    cfg: TrainConfig,
    lrs: Sequence[float] = DEFAULT_LRS,
) -> Tuple[RunReport, List[RunReport]]:
    """Train once per learning rate and keep the best validation run.

    Ties go to the lower learning rate; failed runs never win.

    Raises:
        TrainingFailed when every run failed.
    """
    if not lrs:
        raise InvalidInput("learning-rate list is empty")
    reports = [
        train(model_factory(), splits, cfg.replace(lr=lr)) for lr in lrs
    ]
    candidates = [r for r in reports if not r.failed]
    if not candidates:
        raise TrainingFailed(
            f"all {len(reports)} runs on {splits.train.name} failed: "
            + "; ".join(r.diagnostic for r in reports)
        )
    best = max(
        candidates, key=lambda r: (r.best_val_accuracy, -r.config.lr)
    )
    LOG.info(
        "Sweep on %s: lr=%g wins with val %.4f",
        splits.train.name,
        best.config.lr,
        best.best_val_accuracy,
    )
    return best, reports


def gradient_volume(w: MixWeights, case: str = "target") -> float:
    """Integrate the logit-gradient magnitude over probability space.

    ``target``: integral over p_y in [0, 1] of ``|dL/dq_y|``.
    ``nontarget``: integral over the unit square of ``|p_j (beta p_y +
    alpha)|``.
    """
    if case == "target":
        value, _ = integrate.quad(
            lambda p: abs(float(target_gradient(p, w))),
            0.0,
            1.0,
            epsabs=QUADRATURE_EPSABS,
        )
        return value
    if case == "nontarget":
        value, _ = integrate.dblquad(
            lambda p_y, p_j: abs(p_j * (w.beta * p_y + w.alpha)),
            0.0,
            1.0,
            0.0,
            1.0,
            epsabs=QUADRATURE_EPSABS,
        )
        return value
    raise InvalidInput(f"case must be 'target' or 'nontarget': {case!r}")


def volume_matched_ce_lr(base_lr: float, w: MixWeights) -> float:
    """Scale ``base_lr`` by the target-volume ratio of ``w`` to CE."""
    if not base_lr > 0:
        raise InvalidInput(f"base_lr must be > 0: {base_lr}")
    ratio = gradient_volume(w, "target") / gradient_volume(CE_WEIGHTS)
    return base_lr * ratio

