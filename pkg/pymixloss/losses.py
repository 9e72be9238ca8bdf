"""Loss values and analytic logit gradients.

Loss functions on probabilities take ``p`` of shape ``(C,)`` with an integer
``y``, or a batch ``(B, C)`` with ``y`` of shape ``(B,)``; the batch form
returns one value per sample. Gradient functions take logits ``q`` in the
same two layouts and return a :class:`LossEval`.

Log-based losses clamp ``p_y`` into ``[LOG_CLAMP, 1]`` before taking the
logarithm. Gradients are computed from the unclamped softmax.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional, Tuple, Union

import numpy as np
from scipy import optimize

from .core import FLOAT, ArrayLike, as_probabilities, log_softmax, softmax
from .exceptions import (
    ClassIndexError,
    ExperimentalLossError,
    InvalidInput,
    LossNotTrainable,
    UnknownLoss,
)

LOG = logging.getLogger(__name__)

LOG_CLAMP = 1e-300

# Focal loss parameters reported for the comparison runs.
FOCAL_GAMMA = 2.0
FOCAL_WEIGHT = 0.25

TCE_ALPHA = 0.5
GCE_Q_EXPONENT = 0.7

Value = Union[float, np.ndarray]


@dataclass(frozen=True)
class MixWeights:
    """Weights of the mixed loss ``alpha * CE + beta * EL``."""

    alpha: float
    beta: float

    def __post_init__(self):
        """Validate the weights."""
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise InvalidInput(f"weights must be finite: {self}")
        if self.alpha < 0 or self.beta < 0:
            raise InvalidInput(f"weights must be non-negative: {self}")
        if self.alpha + self.beta <= 0:
            raise InvalidInput(f"alpha + beta must be positive: {self}")


CE_WEIGHTS = MixWeights(1.0, 0.0)
EL_WEIGHTS = MixWeights(0.0, 1.0)


@dataclass(frozen=True)
class LossEval:
    """Loss value(s) and the gradient with respect to the logits."""

    value: Value
    grad_logits: np.ndarray


def _prepare(p: np.ndarray, y) -> Tuple[np.ndarray, np.ndarray, bool]:
    """Return (p as 2-D, labels as 1-D, single-sample flag)."""
    single = p.ndim == 1
    p2 = p[None, :] if single else p
    labels = np.atleast_1d(np.asarray(y))
    if labels.dtype.kind not in "iu":
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise ClassIndexError(f"class index must be an integer: {y!r}")
        labels = labels.astype(np.int64)
    if labels.shape != (p2.shape[0],):
        raise ClassIndexError(
            f"expected {p2.shape[0]} class indices, got shape {labels.shape}"
        )
    classes = p2.shape[1]
    if np.any(labels < 0) or np.any(labels >= classes):
        raise ClassIndexError(
            f"class index out of range [0, {classes}): {y!r}"
        )
    return p2, labels.astype(np.int64), single


def _finish(values: np.ndarray, single: bool) -> Value:
    return float(values[0]) if single else values


def _target(p: ArrayLike, y):
    """Validate probabilities and labels, returning p, y, p_y, single."""
    probs, labels, single = _prepare(as_probabilities(p), y)
    p_y = probs[np.arange(labels.size), labels]
    return probs, labels, p_y, single


def _clamped_log(p_y: np.ndarray) -> np.ndarray:
    return np.log(np.clip(p_y, LOG_CLAMP, 1.0))


def ce_loss(p: ArrayLike, y) -> Value:
    """Cross entropy ``-log p_y``."""
    _, _, p_y, single = _target(p, y)
    return _finish(-_clamped_log(p_y), single)


def el_loss(p: ArrayLike, y) -> Value:
    """Expectation loss ``1 - p_y``."""
    _, _, p_y, single = _target(p, y)
    return _finish(1.0 - p_y, single)


def mixed_loss(p: ArrayLike, y, w: MixWeights) -> Value:
    """Mixed loss ``alpha * CE + beta * EL``."""
    _, _, p_y, single = _target(p, y)
    values = w.alpha * -_clamped_log(p_y) + w.beta * (1.0 - p_y)
    return _finish(values, single)


def focal_loss(
    p: ArrayLike, y, gamma: float = FOCAL_GAMMA, weight: float = FOCAL_WEIGHT
) -> Value:
    """Focal loss ``weight * (1 - p_y)**gamma * (-log p_y)``."""
    if gamma < 0:
        raise InvalidInput(f"gamma must be non-negative: {gamma}")
    if weight <= 0:
        raise InvalidInput(f"weight must be positive: {weight}")
    _, _, p_y, single = _target(p, y)
    values = weight * (1.0 - p_y) ** gamma * -_clamped_log(p_y)
    return _finish(values, single)


def mae_loss(p: ArrayLike, y) -> Value:
    """L1 distance between the one-hot target and ``p``."""
    probs, labels, _, single = _target(p, y)
    target = np.zeros_like(probs)
    target[np.arange(labels.size), labels] = 1.0
    return _finish(np.abs(target - probs).sum(axis=1), single)


def _check_tce_alpha(a: float) -> None:
    if not 0 <= a < 1:
        raise InvalidInput(f"TCE alpha must lie in [0, 1): {a}")


def tce_loss(p: ArrayLike, y, a: float = TCE_ALPHA) -> Value:
    """Tamed cross entropy, evaluated exactly as printed.

    ``(1 / (1 - a)) * ((1 - log p_y)**(1 - a) - 1 / (1 - a))``. The value at
    ``p_y = 1`` is ``-a / (1 - a)**2``, not zero, for ``a > 0``.
    """
    _check_tce_alpha(a)
    _, _, p_y, single = _target(p, y)
    inv = 1.0 / (1.0 - a)
    values = inv * ((1.0 - _clamped_log(p_y)) ** (1.0 - a) - inv)
    return _finish(values, single)


def _check_q_exponent(qexp: float) -> None:
    if not 0 < qexp <= 1:
        raise InvalidInput(f"q exponent must lie in (0, 1]: {qexp}")


def generalized_ce_loss(
    p: ArrayLike, y, qexp: float = GCE_Q_EXPONENT
) -> Value:
    """Generalized cross entropy ``(1 - p_y**q) / q``."""
    _check_q_exponent(qexp)
    _, _, p_y, single = _target(p, y)
    return _finish((1.0 - p_y ** qexp) / qexp, single)


def mpce_loss(p: ArrayLike, y) -> Value:
    """Maximum-probability cross entropy ``-(max_j p_j - p_y) log p_y``.

    Experimental: training with it is reported not to converge.
    """
    probs, _, p_y, single = _target(p, y)
    margin = probs.max(axis=1) - p_y
    return _finish(-margin * _clamped_log(p_y), single)


def complement_entropy(p: ArrayLike, y) -> Value:
    """Entropy of the non-target classes renormalized by ``1 - p_y``.

    ``0 log 0`` terms are 0 and ``p_y = 1`` returns 0.
    """
    probs, labels, p_y, single = _target(p, y)
    rest = 1.0 - p_y
    values = np.zeros_like(p_y)
    for i, (row, label) in enumerate(zip(probs, labels)):
        if rest[i] <= 0.0:
            continue
        others = np.delete(row, label) / rest[i]
        others = others[others > 0.0]
        values[i] = -np.sum(others * np.log(others))
    return _finish(values, single)


def taylor_remainder(p_y: Union[float, np.ndarray]) -> Value:
    """Return the exact gap between CE and EL, ``-log p_y - (1 - p_y)``."""
    values = np.asarray(p_y, dtype=FLOAT)
    if np.any(~(values > 0)) or np.any(values > 1):
        raise InvalidInput(f"p_y must lie in (0, 1]: {p_y!r}")
    gap = -np.log(values) - (1.0 - values)
    return float(gap) if gap.ndim == 0 else gap


def _logit_target(q: ArrayLike, y):
    """Return (p, labels, p_y, log p_y, single) for logits."""
    log_p = log_softmax(q)
    probs = softmax(q)
    probs2, labels, single = _prepare(probs, y)
    log_p2 = log_p[None, :] if single else log_p
    rows = np.arange(labels.size)
    return probs2, labels, probs2[rows, labels], log_p2[rows, labels], single


def _grad_result(values, grad, single) -> LossEval:
    return LossEval(_finish(values, single), grad[0] if single else grad)


def ce_grad(q: ArrayLike, y) -> LossEval:
    """Cross entropy gradient: ``p_y - 1`` at the target, ``p_j`` elsewhere."""
    probs, labels, p_y, log_p_y, single = _logit_target(q, y)
    grad = probs.copy()
    grad[np.arange(labels.size), labels] = p_y - 1.0
    return _grad_result(-log_p_y, grad, single)


def el_grad(q: ArrayLike, y) -> LossEval:
    """Expectation loss gradient.

    ``p_y (p_y - 1)`` at the target and ``p_y p_j`` elsewhere.
    """
    probs, labels, p_y, _, single = _logit_target(q, y)
    grad = probs * p_y[:, None]
    grad[np.arange(labels.size), labels] = p_y * (p_y - 1.0)
    return _grad_result(1.0 - p_y, grad, single)


def mixed_grad(q: ArrayLike, y, w: MixWeights) -> LossEval:
    """Mixed loss gradient.

    ``beta p_y**2 + p_y (alpha - beta) - alpha`` at the target and
    ``p_j (beta p_y + alpha)`` elsewhere.
    """
    alpha, beta = w.alpha, w.beta
    probs, labels, p_y, log_p_y, single = _logit_target(q, y)
    grad = probs * (beta * p_y + alpha)[:, None]
    grad[np.arange(labels.size), labels] = (
        beta * p_y * p_y + p_y * (alpha - beta) - alpha
    )
    values = alpha * -log_p_y + beta * (1.0 - p_y)
    return _grad_result(values, grad, single)


def target_gradient(p_y: ArrayLike, w: MixWeights) -> np.ndarray:
    """Return dL/dq_y of the mixed loss as a function of ``p_y``."""
    p_y = np.asarray(p_y, dtype=FLOAT)
    return w.beta * p_y * p_y + p_y * (w.alpha - w.beta) - w.alpha


def focus_curve(
    w: MixWeights, p_grid: Optional[ArrayLike] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Return (p_y grid, |dL/dq_y|) for the mixed loss."""
    grid = (
        np.linspace(0.0, 1.0, 1001)
        if p_grid is None
        else np.asarray(p_grid, dtype=FLOAT)
    )
    return grid, np.abs(target_gradient(grid, w))


def locate_focus(w: MixWeights, xatol: float = 1e-10) -> float:
    """Numerically locate the p_y maximizing |dL/dq_y| on [0, 1]."""
    grid, magnitude = focus_curve(w)
    best = int(np.argmax(magnitude))
    if best in (0, grid.size - 1):
        return float(grid[best])
    result = optimize.minimize_scalar(
        lambda p: -abs(float(target_gradient(p, w))),
        bounds=(grid[best - 1], grid[best + 1]),
        method="bounded",
        options={"xatol": xatol},
    )
    return float(result.x)


class Loss:
    """Base class for losses usable by the trainer.

    Subclasses whose value depends on ``p_y`` only implement
    :meth:`target_sensitivity`, the product ``p_y * dL/dp_y``; the logit
    gradient is then ``s(p_y) * (e_y - p)``.
    """

    name: str = ""
    trainable: bool = True
    experimental: bool = False

    def __repr__(self) -> str:
        """Return a string representation of the loss."""
        return f"<Loss {self.name}>"

    def value(self, p: ArrayLike, y) -> Value:
        """Return the loss value(s) for probabilities ``p``."""
        raise NotImplementedError

    def target_sensitivity(self, p_y: np.ndarray) -> np.ndarray:
        """Return ``p_y * dL/dp_y``."""
        raise NotImplementedError

    @property
    def weights(self) -> Optional[MixWeights]:
        """Mixing weights when the loss is a CE/EL mixture, else None."""
        return None

    def evaluate(self, q: ArrayLike, y) -> LossEval:
        """Return loss value(s) and logit gradient."""
        if not self.trainable:
            raise LossNotTrainable(f"{self.name} provides values only")
        probs = softmax(q)
        probs2, labels, single = _prepare(probs, y)
        rows = np.arange(labels.size)
        p_y = probs2[rows, labels]
        scale = self.target_sensitivity(p_y)
        grad = -probs2 * scale[:, None]
        grad[rows, labels] += scale
        values = np.atleast_1d(self.value(probs2, labels))
        return _grad_result(values, grad, single)


class MixedLoss(Loss):
    """``alpha * CE + beta * EL`` with the gradient of the mixed form."""

    name = "mixed"

    def __init__(self, weights: MixWeights):
        """Create the loss for fixed weights."""
        self._weights = weights

    def __repr__(self) -> str:
        """Return a string representation of the loss."""
        w = self._weights
        return f"<Loss {self.name} alpha={w.alpha} beta={w.beta}>"

    @property
    def weights(self) -> MixWeights:
        """Mixing weights."""
        return self._weights

    def value(self, p, y):
        """Return the mixed loss value(s)."""
        return mixed_loss(p, y, self._weights)

    def target_sensitivity(self, p_y):
        """Return ``-(alpha + beta p_y)``."""
        return -(self._weights.alpha + self._weights.beta * p_y)

    def evaluate(self, q, y):
        """Return loss value(s) and the mixed gradient."""
        return mixed_grad(q, y, self._weights)


class CrossEntropyLoss(MixedLoss):
    """Plain cross entropy."""

    name = "ce"

    def __init__(self):
        """Create the loss."""
        super().__init__(CE_WEIGHTS)

    def value(self, p, y):
        """Return the cross entropy value(s)."""
        return ce_loss(p, y)

    def evaluate(self, q, y):
        """Return loss value(s) and the cross entropy gradient."""
        return ce_grad(q, y)


class ExpectationLoss(MixedLoss):
    """Plain expectation loss."""

    name = "el"

    def __init__(self):
        """Create the loss."""
        super().__init__(EL_WEIGHTS)

    def value(self, p, y):
        """Return the expectation loss value(s)."""
        return el_loss(p, y)

    def evaluate(self, q, y):
        """Return loss value(s) and the expectation loss gradient."""
        return el_grad(q, y)


class FocalLoss(Loss):
    """Focal loss with exponent ``gamma`` and scalar ``weight``."""

    name = "focal"

    def __init__(
        self, gamma: float = FOCAL_GAMMA, weight: float = FOCAL_WEIGHT
    ):
        """Create the loss."""
        if gamma < 0 or weight <= 0:
            raise InvalidInput(
                f"focal loss needs gamma >= 0 and weight > 0: "
                f"{gamma}, {weight}"
            )
        self.gamma = gamma
        self.weight = weight

    def value(self, p, y):
        """Return the focal loss value(s)."""
        return focal_loss(p, y, self.gamma, self.weight)

    def target_sensitivity(self, p_y):
        """Return ``p_y * dL/dp_y``."""
        gamma = self.gamma
        rest = 1.0 - p_y
        log_term = -_clamped_log(p_y)
        with np.errstate(divide="ignore", invalid="ignore"):
            modulated = gamma * rest ** (gamma - 1.0) * p_y * log_term
        modulated = np.where(rest > 0.0, modulated, 0.0)
        return -self.weight * (modulated + rest ** gamma)


class MeanAbsoluteLoss(Loss):
    """Mean absolute error, ``2 (1 - p_y)``."""

    name = "mae"

    def value(self, p, y):
        """Return the MAE value(s)."""
        return mae_loss(p, y)

    def target_sensitivity(self, p_y):
        """Return ``-2 p_y``."""
        return -2.0 * p_y


class TamedCrossEntropyLoss(Loss):
    """Tamed cross entropy with exponent parameter ``a``."""

    name = "tce"

    def __init__(self, a: float = TCE_ALPHA):
        """Create the loss."""
        _check_tce_alpha(a)
        self.a = a

    def value(self, p, y):
        """Return the TCE value(s)."""
        return tce_loss(p, y, self.a)

    def target_sensitivity(self, p_y):
        """Return ``-(1 - log p_y)**(-a)``."""
        return -((1.0 - _clamped_log(p_y)) ** (-self.a))


class GeneralizedCrossEntropyLoss(Loss):
    """Generalized cross entropy ``(1 - p_y**q) / q``."""

    name = "gce"

    def __init__(self, qexp: float = GCE_Q_EXPONENT):
        """Create the loss."""
        _check_q_exponent(qexp)
        self.qexp = qexp

    def value(self, p, y):
        """Return the GCE value(s)."""
        return generalized_ce_loss(p, y, self.qexp)

    def target_sensitivity(self, p_y):
        """Return ``-p_y**q``."""
        return -(p_y ** self.qexp)


class MaxProbabilityCrossEntropyLoss(Loss):
    """Maximum-probability cross entropy (experimental)."""

    name = "mpce"
    experimental = True

    def value(self, p, y):
        """Return the MPCE value(s)."""
        return mpce_loss(p, y)

    def evaluate(self, q, y):
        """Return value(s) and gradient through the softmax Jacobian.

        The argmax class is treated as fixed, so the loss is
        differentiable almost everywhere.
        """
        probs = softmax(q)
        probs2, labels, single = _prepare(probs, y)
        rows = np.arange(labels.size)
        p_y = probs2[rows, labels]
        top = probs2.argmax(axis=1)
        margin = probs2[rows, top] - p_y
        log_p_y = _clamped_log(p_y)
        # p * dL/dp, per coordinate.
        scaled = np.zeros_like(probs2)
        scaled[rows, labels] += p_y * log_p_y - margin
        scaled[rows, top] -= probs2[rows, top] * log_p_y
        grad = scaled - probs2 * scaled.sum(axis=1, keepdims=True)
        return _grad_result(-margin * log_p_y, grad, single)


class ComplementEntropyLoss(Loss):
    """Complement entropy of the non-target classes (value only)."""

    name = "cot"
    trainable = False

    def value(self, p, y):
        """Return the complement entropy value(s)."""
        return complement_entropy(p, y)


LOSS_NAMES = (
    "ce",
    "el",
    "mixed",
    "focal",
    "mae",
    "tce",
    "gce",
    "mpce",
    "cot",
)
PARAMETER_NAMES = (
    "alpha",
    "beta",
    "gamma",
    "weight",
    "tce_alpha",
    "q_exponent",
)


@dataclass(frozen=True)
class LossSpec:
    """A loss name plus its flat parameter map.

    ``params`` is stored as sorted (name, value) pairs so that specs are
    hashable and picklable.
    """

    name: str
    params: Tuple[Tuple[str, float], ...] = ()
    experimental: bool = False

    def __post_init__(self):
        """Validate the loss name and parameter names."""
        if self.name not in LOSS_NAMES:
            raise UnknownLoss(
                f"unknown loss {self.name!r}, expected one of {LOSS_NAMES}"
            )
        params = dict(self.params)
        for key in params:
            if key not in PARAMETER_NAMES:
                raise InvalidInput(
                    f"unknown loss parameter {key!r} for {self.name}"
                )
        object.__setattr__(
            self,
            "params",
            tuple(sorted((k, float(v)) for k, v in params.items())),
        )

    @classmethod
    def create(cls, name: str, experimental: bool = False, **params):
        """Create a spec from keyword parameters."""
        return cls(name, tuple(params.items()), experimental)

    @classmethod
    def from_dict(cls, data: Mapping) -> "LossSpec":
        """Create a spec from its config mapping."""
        data = dict(data)
        try:
            name = data.pop("name")
        except KeyError as exc:
            raise InvalidInput(f"loss spec without a name: {data}") from exc
        experimental = bool(data.pop("experimental", False))
        params = dict(data.pop("params", {}))
        params.update(data)
        return cls(name, tuple(params.items()), experimental)

    def to_dict(self) -> Dict:
        """Return the config mapping for this spec."""
        data: Dict = {"name": self.name}
        data.update(self.params)
        if self.experimental:
            data["experimental"] = True
        return data

    def param(self, key: str, default: float) -> float:
        """Return a parameter value or its default."""
        return dict(self.params).get(key, default)

    @property
    def label(self) -> str:
        """Short file-safe description of the spec."""
        parts = [self.name] + [f"{k}{v:g}" for k, v in self.params]
        return "-".join(parts)


def _mixed_from_spec(spec: LossSpec) -> Loss:
    return MixedLoss(
        MixWeights(spec.param("alpha", 1.0), spec.param("beta", 1.0))
    )


LOSSES: Dict[str, Callable[[LossSpec], Loss]] = {
    "ce": lambda spec: CrossEntropyLoss(),
    "el": lambda spec: ExpectationLoss(),
    "mixed": _mixed_from_spec,
    "focal": lambda spec: FocalLoss(
        spec.param("gamma", FOCAL_GAMMA), spec.param("weight", FOCAL_WEIGHT)
    ),
    "mae": lambda spec: MeanAbsoluteLoss(),
    "tce": lambda spec: TamedCrossEntropyLoss(
        spec.param("tce_alpha", TCE_ALPHA)
    ),
    "gce": lambda spec: GeneralizedCrossEntropyLoss(
        spec.param("q_exponent", GCE_Q_EXPONENT)
    ),
    "mpce": lambda spec: MaxProbabilityCrossEntropyLoss(),
    "cot": lambda spec: ComplementEntropyLoss(),
}


def build_loss(spec: Union[LossSpec, MixWeights, Loss]) -> Loss:
    """Return the loss object described by ``spec``.

    Raises:
        UnknownLoss for names outside the registry.
        ExperimentalLossError when an experimental loss is requested
        without ``experimental=True`` on the spec.
    """
    if isinstance(spec, Loss):
        return spec
    if isinstance(spec, MixWeights):
        return MixedLoss(spec)
    try:
        factory = LOSSES[spec.name]
    except KeyError as exc:
        raise UnknownLoss(spec.name) from exc
    loss = factory(spec)
    if loss.experimental and not spec.experimental:
        raise ExperimentalLossError(
            f"{spec.name} is experimental; set experimental=True to use it"
        )
    if loss.experimental:
        LOG.warning("Using experimental loss %s", spec.name)
    return loss
