"""SGD noise, curvature, escaping efficiency and the SGD-as-SDE simulator.

All matrices are dense P x P, so every model-based computation refuses
models with more than ``PARAMETER_CAP`` parameters.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Union

import numpy as np
from numpy.polynomial import Polynomial

from .core import FLOAT, RandomSource, softmax
from .exceptions import (
    InvalidInput,
    NonFiniteInput,
    NotPositiveSemidefinite,
    ParameterCapExceeded,
    ShapeMismatch,
)
from .losses import LossSpec, MixWeights, build_loss
from .model import (
    ClassifierModel,
    backprop,
    backward,
    forward,
    per_sample_backprop,
    per_sample_gradients,
)

LOG = logging.getLogger(__name__)

PARAMETER_CAP = 2000
PSD_TOLERANCE = 1e-8
SYMMETRY_TOLERANCE = 1e-10
FD_RELATIVE_STEP = 1e-4

GradientFn = Callable[[np.ndarray], np.ndarray]


def check_parameter_cap(count: int) -> None:
    """Raise ParameterCapExceeded when ``count`` exceeds the dense cap."""
    if count > PARAMETER_CAP:
        raise ParameterCapExceeded(
            f"{count} parameters exceed the dense-matrix cap of "
            f"{PARAMETER_CAP}"
        )


def _square(matrix, name: str) -> np.ndarray:
    values = np.asarray(matrix, dtype=FLOAT)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ShapeMismatch(f"{name} must be square, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise NonFiniteInput(f"{name} has non-finite entries")
    return values


def _check_psd(matrix: np.ndarray, name: str):
    """Return the eigendecomposition of a symmetric PSD ``matrix``."""
    eigenvalues, eigenvectors = np.linalg.eigh(matrix)
    if eigenvalues.size and eigenvalues[0] < -PSD_TOLERANCE:
        raise NotPositiveSemidefinite(
            f"{name} has eigenvalue {eigenvalues[0]:.3g} below "
            f"-{PSD_TOLERANCE:g}"
        )
    return eigenvalues, eigenvectors


def psd_sqrt(matrix) -> np.ndarray:
    """Symmetric square root, clipping slightly negative eigenvalues."""
    values = _square(matrix, "matrix")
    eigenvalues, eigenvectors = _check_psd(values, "matrix")
    root = np.sqrt(np.clip(eigenvalues, 0.0, None))
    return (eigenvectors * root) @ eigenvectors.T


@dataclass(frozen=True)
class CovarianceMatrix:
    """Gradient-noise covariance of mini-batch SGD."""

    matrix: np.ndarray
    batch_size: int
    samples: int

    def __post_init__(self):
        """Validate symmetry and positive semidefiniteness."""
        matrix = _square(self.matrix, "covariance")
        if np.max(np.abs(matrix - matrix.T), initial=0.0) > SYMMETRY_TOLERANCE:
            raise InvalidInput("covariance matrix is not symmetric")
        _check_psd(matrix, "covariance")
        object.__setattr__(self, "matrix", matrix)

    @property
    def dim(self) -> int:
        """Number of parameters."""
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        """Total noise power."""
        return float(np.trace(self.matrix))


class NoiseMode(Enum):
    """Diffusion term used by the SDE simulator."""

    FULL_COVARIANCE = "full_covariance"
    ISOTROPIC = "isotropic"
    ZERO = "zero"


@dataclass(frozen=True)
class SdeConfig:
    """Euler-Maruyama settings."""

    learning_rate: float
    dt: float
    total_time: float
    noise_mode: NoiseMode = NoiseMode.FULL_COVARIANCE
    seed: int = 0
    trajectories: int = 1000
    chunk_size: int = 500

    def __post_init__(self):
        """Validate the settings."""
        object.__setattr__(self, "noise_mode", NoiseMode(self.noise_mode))
        if not self.learning_rate > 0:
            raise InvalidInput(f"learning rate must be > 0: {self}")
        if not self.dt > 0:
            raise InvalidInput(f"dt must be > 0: {self.dt}")
        if self.total_time < self.dt:
            raise InvalidInput(
                f"total time {self.total_time} is shorter than dt {self.dt}"
            )
        if self.trajectories < 1 or self.chunk_size < 1:
            raise InvalidInput(f"need at least one trajectory: {self}")

    @property
    def steps(self) -> int:
        """Number of Euler-Maruyama steps."""
        return max(1, int(math.floor(self.total_time / self.dt + 1e-9)))


@dataclass(frozen=True)
class EscapeQuantities:
    """Ingredients of the escaping-efficiency bound.

    ``f_p`` is the mean outer product of the gradients of p(y|x), ``h_p``
    minus the mean Hessian of p(y|x), ``m_cap`` the largest p(y|x) in the
    batch.
    """

    f_p: np.ndarray
    h_p: np.ndarray
    m_cap: float

    def __post_init__(self):
        """Validate the quantities."""
        f_p = _square(self.f_p, "F_p")
        h_p = _square(self.h_p, "H_p")
        if f_p.shape != h_p.shape:
            raise ShapeMismatch(f"F_p {f_p.shape} vs H_p {h_p.shape}")
        if not 0.0 < self.m_cap <= 1.0:
            raise InvalidInput(f"M must lie in (0, 1]: {self.m_cap}")

    @property
    def trace_term(self) -> float:
        """``Tr(F_p F_p^T + 2 H_p F_p)``."""
        f_p, h_p = self.f_p, self.h_p
        return float(np.trace(f_p @ f_p.T + 2.0 * h_p @ f_p))


def noise_covariance(
    model: ClassifierModel,
    dataset,
    loss: Union[LossSpec, MixWeights],
    batch_size: int,
) -> CovarianceMatrix:
    """Return ``(1/m) [mean(g g^T) - mean(g) mean(g)^T]`` over the dataset."""
    check_parameter_cap(model.parameter_count)
    if batch_size < 1:
        raise InvalidInput(f"batch size must be >= 1: {batch_size}")
    _, grads = per_sample_gradients(
        model, dataset.features, dataset.labels, build_loss(loss)
    )
    centered = grads - grads.mean(axis=0)
    count = grads.shape[0]
    matrix = centered.T @ centered / (count * batch_size)
    return CovarianceMatrix(0.5 * (matrix + matrix.T), batch_size, count)


def fd_hessian(grad_fn: GradientFn, theta) -> np.ndarray:
    """Central differences of ``grad_fn``; column k is d(grad)/d(theta_k).

    The step for coordinate k is ``1e-4 * (1 + |theta_k|)``. The result is
    not symmetrized.
    """
    theta = np.asarray(theta, dtype=FLOAT)
    size = theta.size
    matrix = np.empty((size, size), dtype=FLOAT)
    for k in range(size):
        step = FD_RELATIVE_STEP * (1.0 + abs(theta[k]))
        plus = theta.copy()
        minus = theta.copy()
        plus[k] += step
        minus[k] -= step
        matrix[:, k] = (grad_fn(plus) - grad_fn(minus)) / (2.0 * step)
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteInput("finite-difference Hessian has non-finite values")
    return matrix


def numerical_hessian(grad_fn: GradientFn, theta) -> np.ndarray:
    """Return the symmetrized finite-difference Hessian behind ``grad_fn``."""
    matrix = fd_hessian(grad_fn, theta)
    return 0.5 * (matrix + matrix.T)


def hessian(
    model: ClassifierModel, dataset, loss: Union[LossSpec, MixWeights]
) -> np.ndarray:
    """Return the Hessian of the mean dataset loss at the model parameters."""
    check_parameter_cap(model.parameter_count)
    loss_fn = build_loss(loss)

    def gradient(theta):
        _, grads = backward(
            model.with_flat(theta), dataset.features, dataset.labels, loss_fn
        )
        return grads.flat()

    return numerical_hessian(gradient, model.flat())


def escaping_efficiency_estimate(
    hessian_matrix,
    covariance,
    t: float,
    learning_rate: float,
    include_learning_rate: bool = True,
) -> float:
    """Return ``(t * lr / 2) Tr(H Sigma)``, or ``(t / 2) Tr(H Sigma)``.

    The learning rate scales the SDE diffusion, so it is included unless
    ``include_learning_rate`` is False.
    """
    if isinstance(covariance, CovarianceMatrix):
        covariance = covariance.matrix
    first = _square(hessian_matrix, "H")
    second = _square(covariance, "Sigma")
    if first.shape != second.shape:
        raise ShapeMismatch(f"H {first.shape} vs Sigma {second.shape}")
    scale = t * (learning_rate if include_learning_rate else 1.0) / 2.0
    return scale * float(np.einsum("ij,ji->", first, second))


def _target_probability_grads(model: ClassifierModel, x, y):
    """Return (p_y per sample, logit gradients of p_y per sample)."""
    probs = softmax(np.atleast_2d(forward(model, x)))
    labels = np.atleast_1d(np.asarray(y, dtype=np.int64))
    rows = np.arange(labels.size)
    p_y = probs[rows, labels]
    grad_logits = -probs * p_y[:, None]
    grad_logits[rows, labels] += p_y
    return p_y, grad_logits


def escape_quantities(model: ClassifierModel, x, y) -> EscapeQuantities:
    """Return F_p, H_p and M for a batch."""
    check_parameter_cap(model.parameter_count)
    inputs = np.atleast_2d(np.asarray(x, dtype=FLOAT))
    labels = np.atleast_1d(np.asarray(y, dtype=np.int64))
    count = labels.size
    p_y, grad_logits = _target_probability_grads(model, inputs, labels)
    grads = per_sample_backprop(model, inputs, grad_logits)
    f_p = grads.T @ grads / count

    def mean_gradient(theta):
        candidate = model.with_flat(theta)
        _, logit_grads = _target_probability_grads(candidate, inputs, labels)
        return backprop(candidate, inputs, logit_grads / count).flat()

    h_p = -numerical_hessian(mean_gradient, model.flat())
    return EscapeQuantities(f_p, h_p, float(np.max(p_y)))


def ee_rhs_bound(quantities: EscapeQuantities, beta: float) -> float:
    """Return ``(b^3 + 3 b^2 / M + b (2 / M^2 + 1 / M)) * trace_term``."""
    if beta < 0:
        raise InvalidInput(f"beta must be >= 0: {beta}")
    m_cap = quantities.m_cap
    coefficient = (
        beta ** 3
        + 3.0 * beta ** 2 / m_cap
        + beta * (2.0 / m_cap ** 2 + 1.0 / m_cap)
    )
    return coefficient * quantities.trace_term


class Landscape:
    """Loss surface driven by the SDE simulator.

    ``gradient`` and ``value`` accept a single point ``(P,)`` or a batch of
    points ``(R, P)``.
    """

    dim: int
    minimum: np.ndarray

    def value(self, w: np.ndarray) -> np.ndarray:
        """Return L(w)."""
        raise NotImplementedError

    def gradient(self, w: np.ndarray) -> np.ndarray:
        """Return the gradient of L at w."""
        raise NotImplementedError

    def hessian(self, w: Optional[np.ndarray] = None) -> np.ndarray:
        """Return the Hessian at ``w`` (default: the minimum)."""
        point = self.minimum if w is None else np.asarray(w, dtype=FLOAT)
        return numerical_hessian(self.gradient, point)


class QuadraticLandscape(Landscape):
    """``L(w) = 0.5 (w - c)^T A (w - c)`` for symmetric PSD ``A``."""

    def __init__(self, matrix, center=None):
        """Create the landscape."""
        self.matrix = _square(matrix, "A")
        _check_psd(0.5 * (self.matrix + self.matrix.T), "A")
        self.dim = self.matrix.shape[0]
        self.minimum = (
            np.zeros(self.dim, dtype=FLOAT)
            if center is None
            else np.asarray(center, dtype=FLOAT)
        )

    def value(self, w):
        """Return L(w)."""
        delta = np.asarray(w, dtype=FLOAT) - self.minimum
        return 0.5 * np.sum((delta @ self.matrix) * delta, axis=-1)

    def gradient(self, w):
        """Return A (w - c)."""
        delta = np.asarray(w, dtype=FLOAT) - self.minimum
        return delta @ self.matrix.T

    def hessian(self, w=None):
        """Return A."""
        return self.matrix.copy()


class DoubleWell(Landscape):
    """1-D quartic with minima at -1 (sharp) and +1 (wide).

    ``L'(w) = k (w + 1)(w - m)(w - 1)`` with ``m = (r - 1) / (r + 1)``, so
    that ``L''(-1) = r * L''(1)``; ``k`` normalizes ``L''(1)`` to 1.
    """

    dim = 1

    def __init__(self, sharpness_ratio: float):
        """Create the landscape for curvature ratio ``sharpness_ratio``."""
        if not (math.isfinite(sharpness_ratio) and sharpness_ratio >= 1.0):
            raise InvalidInput(
                f"sharpness ratio must be >= 1: {sharpness_ratio}"
            )
        self.sharpness_ratio = float(sharpness_ratio)
        self.barrier = (sharpness_ratio - 1.0) / (sharpness_ratio + 1.0)
        scale = 1.0 / (2.0 * (1.0 - self.barrier))
        self.derivative = scale * Polynomial.fromroots(
            [-1.0, self.barrier, 1.0]
        )
        self.polynomial = self.derivative.integ()
        self.curvature = self.derivative.deriv()
        self.sharp_minimum = np.array([-1.0])
        self.wide_minimum = np.array([1.0])
        self.minimum = self.wide_minimum

    def __repr__(self) -> str:
        """Return a string representation of the landscape."""
        return f"<DoubleWell ratio={self.sharpness_ratio:g}>"

    def value(self, w):
        """Return L(w)."""
        return self.polynomial(np.asarray(w, dtype=FLOAT)[..., 0])

    def gradient(self, w):
        """Return L'(w)."""
        return self.derivative(np.asarray(w, dtype=FLOAT))

    def hessian(self, w=None):
        """Return the closed-form L''(w) as a 1 x 1 matrix."""
        point = self.minimum if w is None else np.asarray(w, dtype=FLOAT)
        return np.array([[float(self.curvature(point[0]))]])


class ModelLandscape(Landscape):
    """Mean dataset loss of a classifier as a function of its parameters.

    With ``weight_decay`` the surface includes ``0.5 * wd * |theta|^2``, the
    objective that SGD with weight decay minimizes.
    """

    def __init__(
        self,
        model: ClassifierModel,
        dataset,
        loss,
        weight_decay: float = 0.0,
    ):
        """Create the landscape around the model's current parameters."""
        if weight_decay < 0:
            raise InvalidInput(f"weight_decay must be >= 0: {weight_decay}")
        self.weight_decay = weight_decay
        check_parameter_cap(model.parameter_count)
        self.model = model
        self.dataset = dataset
        self.loss = build_loss(loss)
        self.dim = model.parameter_count
        self.minimum = model.flat()

    def _evaluate(self, theta):
        value, grads = backward(
            self.model.with_flat(theta),
            self.dataset.features,
            self.dataset.labels,
            self.loss,
        )
        gradient = grads.flat()
        if self.weight_decay:
            value += 0.5 * self.weight_decay * float(theta @ theta)
            gradient = gradient + self.weight_decay * theta
        return value, gradient

    def value(self, w):
        """Return the mean loss at w."""
        points = np.asarray(w, dtype=FLOAT)
        if points.ndim == 1:
            return self._evaluate(points)[0]
        return np.array([self._evaluate(row)[0] for row in points])

    def gradient(self, w):
        """Return the mean-loss gradient at w."""
        points = np.asarray(w, dtype=FLOAT)
        if points.ndim == 1:
            return self._evaluate(points)[1]
        return np.stack([self._evaluate(row)[1] for row in points])


@dataclass
class SdeResult:
    """Monte-Carlo summary of an SDE simulation.

    ``mean_excess[k]`` is the mean of ``L(W_t) - L(W*)`` over trajectories
    at time ``times[k]``; ``excess`` holds the final value per trajectory.
    """

    times: np.ndarray
    mean_excess: np.ndarray
    excess: np.ndarray

    @property
    def escaping_efficiency(self) -> float:
        """Mean final excess loss."""
        return float(self.mean_excess[-1])

    @property
    def stderr(self) -> float:
        """Standard error of the mean final excess loss."""
        if self.excess.size < 2:
            return float("nan")
        return float(np.std(self.excess, ddof=1) / math.sqrt(self.excess.size))


def diffusion_matrix(
    covariance, learning_rate: float, mode: NoiseMode, dim: int
) -> np.ndarray:
    """Return the matrix S with ``S S^T = lr * Sigma`` for ``mode``."""
    mode = NoiseMode(mode)
    if mode is NoiseMode.ZERO:
        return np.zeros((dim, dim), dtype=FLOAT)
    if isinstance(covariance, CovarianceMatrix):
        covariance = covariance.matrix
    if covariance is None:
        raise InvalidInput(f"noise mode {mode.value} needs a covariance")
    sigma = _square(covariance, "Sigma")
    if sigma.shape != (dim, dim):
        raise ShapeMismatch(f"Sigma {sigma.shape} for {dim} parameters")
    if mode is NoiseMode.ISOTROPIC:
        _check_psd(sigma, "Sigma")
        level = learning_rate * float(np.trace(sigma)) / dim
        return math.sqrt(max(level, 0.0)) * np.eye(dim)
    return psd_sqrt(learning_rate * sigma)


def sde_simulate(
    landscape: Landscape,
    cfg: SdeConfig,
    covariance=None,
    start=None,
) -> SdeResult:
    """Simulate ``dW = -grad L dt + sqrt(lr Sigma) dB`` by Euler-Maruyama.

    Excess loss is measured against the starting point, the landscape
    minimum unless ``start`` is given. Every trajectory draws its noise
    from its own stream ``RandomSource(cfg.seed).spawn(index)``, so results
    do not depend on ``cfg.chunk_size``.
    """
    dim = landscape.dim
    root = diffusion_matrix(covariance, cfg.learning_rate, cfg.noise_mode, dim)
    origin = landscape.minimum if start is None else np.asarray(start)
    origin = np.asarray(origin, dtype=FLOAT)
    baseline = float(landscape.value(origin))
    steps = cfg.steps
    sqrt_dt = math.sqrt(cfg.dt)
    source = RandomSource(cfg.seed)
    noisy = cfg.noise_mode is not NoiseMode.ZERO

    sums = np.zeros(steps + 1, dtype=FLOAT)
    excess = np.empty(cfg.trajectories, dtype=FLOAT)
    for first in range(0, cfg.trajectories, cfg.chunk_size):
        indices = range(first, min(first + cfg.chunk_size, cfg.trajectories))
        count = len(indices)
        if noisy:
            noise = np.stack(
                [source.spawn(i).normal(size=(steps, dim)) for i in indices]
            )
        points = np.tile(origin, (count, 1))
        sums[0] += np.sum(landscape.value(points) - baseline)
        for step in range(steps):
            points = points - landscape.gradient(points) * cfg.dt
            if noisy:
                points = points + sqrt_dt * noise[:, step, :] @ root.T
            sums[step + 1] += np.sum(landscape.value(points) - baseline)
        excess[first : first + count] = landscape.value(points) - baseline
    LOG.debug(
        "Simulated %d trajectories of %d steps, mode %s",
        cfg.trajectories,
        steps,
        cfg.noise_mode.value,
    )
    return SdeResult(
        times=np.arange(steps + 1) * cfg.dt,
        mean_excess=sums / cfg.trajectories,
        excess=excess,
    )
