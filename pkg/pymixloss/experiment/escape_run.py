"""Escaping-efficiency comparison of cross-entropy and mixed losses.

A small model is trained to convergence with full-batch gradient descent.
At the minimum it reaches, every loss gets its Hessian and gradient-noise
covariance, the linear-in-time escaping-efficiency estimate and a
Monte-Carlo estimate from the SDE. The terms of the mixed-loss bound are
written alongside, and the configured analytic landscapes are simulated
with unit noise.
"""
import logging
import os
from dataclasses import dataclass
from typing import List, Mapping, Tuple

import numpy as np

from ..core import RandomSource
from ..data import SplitSpec, make_blobs, split
from ..escape import (
    CovarianceMatrix,
    DoubleWell,
    Landscape,
    ModelLandscape,
    NoiseMode,
    QuadraticLandscape,
    SdeConfig,
    check_parameter_cap,
    ee_rhs_bound,
    escape_quantities,
    escaping_efficiency_estimate,
    hessian,
    noise_covariance,
    sde_simulate,
)
from ..exceptions import ConfigError, TrainingFailed
from ..losses import CE_WEIGHTS, LossSpec, MixWeights
from ..model import init_model, parameter_shapes
from ..results.rows import BoundRow, EscapeRow, LandscapeRow
from ..trainer import INIT_STREAM, TrainConfig, train
from .config import EscapeConfig

LOG = logging.getLogger(__name__)

ESCAPE_FILE = "escape.csv"
BOUND_FILE = "bound.csv"
LANDSCAPE_FILE = "landscapes.csv"


@dataclass
class EscapeResult:
    """Rows written by :func:`escape_experiment`."""

    escape: List[EscapeRow]
    bound: List[BoundRow]
    landscapes: List[LandscapeRow]


def _method_name(weights: MixWeights) -> str:
    if weights == CE_WEIGHTS:
        return "CE"
    return f"mixed(alpha={weights.alpha:g}, beta={weights.beta:g})"


def _sde_config(cfg: EscapeConfig) -> SdeConfig:
    return SdeConfig(
        learning_rate=cfg.sde_lr,
        dt=cfg.dt,
        total_time=cfg.total_time,
        noise_mode=cfg.noise_mode,
        seed=cfg.seed,
        trajectories=cfg.trajectories,
    )


def build_landscapes(
    specs: Tuple[Tuple[Tuple[str, object], ...], ...]
) -> List[Tuple[str, Landscape, np.ndarray]]:
    """Return ``(label, landscape, start)`` for every configured landscape.

    A double well contributes one entry per minimum.
    """
    entries = []
    for spec in specs:
        options: Mapping = dict(spec)
        kind = options.get("kind")
        if kind == "quadratic":
            landscape = QuadraticLandscape(np.diag(options["diagonal"]))
            entries.append(("quadratic", landscape, landscape.minimum))
        elif kind == "double_well":
            ratio = float(options["sharpness_ratio"])
            well = DoubleWell(ratio)
            label = f"double_well(r={ratio:g})"
            entries.append((f"{label}:sharp", well, well.sharp_minimum))
            entries.append((f"{label}:wide", well, well.wide_minimum))
        else:
            raise ConfigError(f"unknown landscape kind {kind!r}")
    return entries


def escape_experiment(cfg: EscapeConfig) -> EscapeResult:
    """Run the comparison and write its CSV files to ``cfg.output_dir``.

    Raises:
        ParameterCapExceeded before any training when the model is too
            large for dense Hessians.
        TrainingFailed when training diverges.
    """
    blobs = cfg.dataset
    shapes = parameter_shapes(
        cfg.architecture, blobs.input_dim, blobs.classes
    )
    check_parameter_cap(sum(int(np.prod(s)) for s in shapes.values()))

    dataset = make_blobs(
        blobs.classes,
        blobs.per_class,
        blobs.input_dim,
        blobs.separation,
        blobs.seed,
        name="escape-blobs",
    )
    splits = split(dataset, SplitSpec(seed=blobs.seed))
    train_set = splits.train
    model = init_model(
        cfg.architecture,
        train_set.input_dim,
        train_set.classes,
        RandomSource(cfg.seed, (INIT_STREAM,)),
    )
    report = train(
        model,
        splits,
        TrainConfig(
            epochs=cfg.epochs,
            batch_size=len(train_set),
            lr=cfg.lr,
            momentum=0.0,
            weight_decay=cfg.weight_decay,
            shuffle=False,
            seed=cfg.seed,
            loss=LossSpec("ce"),
        ),
    )
    if report.failed:
        raise TrainingFailed(f"escape model diverged: {report.diagnostic}")
    minimum = report.model
    LOG.info(
        "Escape model trained: loss %.6g, train accuracy %.4f",
        report.epochs[-1].train_loss,
        report.epochs[-1].train_acc,
    )

    weight_list = [CE_WEIGHTS] + [MixWeights(1.0, b) for b in cfg.betas]
    escape_rows = []
    for weights in weight_list:
        escape_rows.append(_escape_row(cfg, minimum, train_set, weights))

    quantities = escape_quantities(
        minimum, train_set.features, train_set.labels
    )
    bound_rows = [
        BoundRow(
            beta=beta,
            m_cap=quantities.m_cap,
            fp_trace_term=quantities.trace_term,
            rhs_bound=ee_rhs_bound(quantities, beta),
        )
        for beta in cfg.betas
    ]

    landscape_rows = []
    for label, landscape, start in build_landscapes(cfg.landscapes):
        landscape_rows.append(_landscape_row(cfg, label, landscape, start))

    os.makedirs(cfg.output_dir, exist_ok=True)
    EscapeRow.write_csv(os.path.join(cfg.output_dir, ESCAPE_FILE), escape_rows)
    BoundRow.write_csv(os.path.join(cfg.output_dir, BOUND_FILE), bound_rows)
    LandscapeRow.write_csv(
        os.path.join(cfg.output_dir, LANDSCAPE_FILE), landscape_rows
    )
    return EscapeResult(escape_rows, bound_rows, landscape_rows)


def _escape_row(cfg, model, dataset, weights) -> EscapeRow:
    covariance = noise_covariance(model, dataset, weights, cfg.batch_size)
    curvature = hessian(model, dataset, weights)
    curvature = curvature + cfg.weight_decay * np.eye(curvature.shape[0])
    trace_term = float(np.trace(curvature @ covariance.matrix))
    estimate = _estimate(cfg, curvature, covariance)
    landscape = ModelLandscape(model, dataset, weights, cfg.weight_decay)
    result = sde_simulate(landscape, _sde_config(cfg), covariance)
    LOG.info(
        "%s: Tr(H Sigma)=%.6g estimate=%.6g simulated=%.6g",
        _method_name(weights),
        trace_term,
        estimate,
        result.escaping_efficiency,
    )
    return EscapeRow(
        method=_method_name(weights),
        beta=weights.beta,
        trace_term=trace_term,
        ee_estimate=estimate,
        ee_simulated=result.escaping_efficiency,
        stderr=result.stderr,
    )


def _estimate(cfg: EscapeConfig, curvature, covariance) -> float:
    if cfg.noise_mode is NoiseMode.ZERO:
        return 0.0
    if cfg.noise_mode is NoiseMode.ISOTROPIC:
        dim = covariance.dim
        covariance = CovarianceMatrix(
            np.eye(dim) * covariance.trace / dim,
            covariance.batch_size,
            covariance.samples,
        )
    return escaping_efficiency_estimate(
        curvature,
        covariance,
        cfg.total_time,
        cfg.sde_lr,
        cfg.include_learning_rate,
    )


def _landscape_row(cfg, label, landscape, start) -> LandscapeRow:
    unit = CovarianceMatrix(np.eye(landscape.dim), 1, 1)
    curvature = landscape.hessian(start)
    result = sde_simulate(landscape, _sde_config(cfg), unit, start)
    return LandscapeRow(
        landscape=label,
        trace_term=float(np.trace(curvature)),
        ee_estimate=_estimate(cfg, curvature, unit),
        ee_simulated=result.escaping_efficiency,
        stderr=result.stderr,
    )
