"""Linear and one-hidden-layer softmax classifiers.

Shapes for input dimension I and C classes::

    linear: w (I, C), b (C,)                 logits = x @ w + b
    mlp1:   w1 (I, I), b1 (I,), w2 (I, C), b2 (C,)
            logits = relu(x @ w1 + b1) @ w2 + b2

The ReLU derivative at exactly 0 is 0.

Checkpoint layout (UTF-8 text, one item per line)::

    pymixloss-checkpoint 1
    architecture <linear|mlp1>
    input_dim <I>
    classes <C>
    parameters <P>
    <P lines, one float each, printed with 17 significant digits>

Parameters are listed in layout order (w, b or w1, b1, w2, b2), each array
flattened row-major.
"""
import logging
import math
import os
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Tuple, Union

import numpy as np

from .core import FLOAT, RandomSource
from .exceptions import CheckpointError, InvalidInput, ShapeMismatch
from .losses import Loss, LossSpec, MixWeights, build_loss

LOG = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "pymixloss-checkpoint"
CHECKPOINT_VERSION = 1


class Architecture(Enum):
    """Supported classifier architectures."""

    LINEAR = "linear"
    MLP1 = "mlp1"


PARAMETER_LAYOUT = {
    Architecture.LINEAR: ("w", "b"),
    Architecture.MLP1: ("w1", "b1", "w2", "b2"),
}

LossLike = Union[Loss, LossSpec, MixWeights]


def parameter_shapes(
    architecture: Architecture, input_dim: int, classes: int
) -> Dict[str, Tuple[int, ...]]:
    """Return the parameter shapes, in layout order."""
    if architecture is Architecture.LINEAR:
        return {"w": (input_dim, classes), "b": (classes,)}
    return {
        "w1": (input_dim, input_dim),
        "b1": (input_dim,),
        "w2": (input_dim, classes),
        "b2": (classes,),
    }


@dataclass
class ClassifierModel:
    """Parameters of a softmax classifier."""

    architecture: Architecture
    input_dim: int
    classes: int
    params: Dict[str, np.ndarray]

    def __post_init__(self):
        """Validate parameter shapes and values."""
        self.architecture = Architecture(self.architecture)
        expected = parameter_shapes(
            self.architecture, self.input_dim, self.classes
        )
        if set(self.params) != set(expected):
            raise ShapeMismatch(
                f"{self.architecture.value} expects parameters "
                f"{sorted(expected)}, got {sorted(self.params)}"
            )
        for name, shape in expected.items():
            value = np.asarray(self.params[name], dtype=FLOAT)
            if value.shape != shape:
                raise ShapeMismatch(
                    f"parameter {name} has shape {value.shape}, "
                    f"expected {shape}"
                )
            if not np.all(np.isfinite(value)):
                raise InvalidInput(f"parameter {name} has non-finite values")
            self.params[name] = value

    def __repr__(self) -> str:
        """Return a string representation of the model."""
        return (
            f"<ClassifierModel {self.architecture.value} "
            f"I={self.input_dim} C={self.classes}>"
        )

    @property
    def layout(self) -> Tuple[str, ...]:
        """Parameter names in flattening order."""
        return PARAMETER_LAYOUT[self.architecture]

    @property
    def parameter_count(self) -> int:
        """Total number of scalar parameters."""
        return sum(self.params[name].size for name in self.layout)

    def flat(self) -> np.ndarray:
        """Return all parameters as one vector, in layout order."""
        return np.concatenate([self.params[n].ravel() for n in self.layout])

    def with_flat(self, vector: np.ndarray) -> "ClassifierModel":
        """Return a new model holding the parameters in ``vector``."""
        vector = np.asarray(vector, dtype=FLOAT)
        if vector.shape != (self.parameter_count,):
            raise ShapeMismatch(
                f"expected {self.parameter_count} parameters, got "
                f"{vector.shape}"
            )
        params = {}
        offset = 0
        for name in self.layout:
            shape = self.params[name].shape
            size = self.params[name].size
            params[name] = vector[offset : offset + size].reshape(shape).copy()
            offset += size
        return ClassifierModel(
            self.architecture, self.input_dim, self.classes, params
        )

    def copy(self) -> "ClassifierModel":
        """Return a deep copy."""
        return self.with_flat(self.flat())


@dataclass
class GradientBundle:
    """Per-parameter gradients congruent to a ClassifierModel."""

    layout: Tuple[str, ...]
    grads: Dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        """Return the gradient for parameter ``name``."""
        return self.grads[name]

    def flat(self) -> np.ndarray:
        """Return the flattened gradient, in layout order."""
        return np.concatenate([self.grads[n].ravel() for n in self.layout])


def init_model(
    architecture: Union[Architecture, str],
    input_dim: int,
    classes: int,
    rng: RandomSource,
) -> ClassifierModel:
    """Create a model with Glorot-uniform weights and zero biases."""
    architecture = Architecture(architecture)
    if input_dim < 1 or classes < 2:
        raise InvalidInput(
            f"need input_dim >= 1 and classes >= 2, got {input_dim}, {classes}"
        )
    params = {}
    for name, shape in parameter_shapes(
        architecture, input_dim, classes
    ).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape, dtype=FLOAT)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape)
    return ClassifierModel(architecture, input_dim, classes, params)


def _as_inputs(model: ClassifierModel, x) -> Tuple[np.ndarray, bool]:
    inputs = np.asarray(x, dtype=FLOAT)
    single = inputs.ndim == 1
    if single:
        inputs = inputs[None, :]
    if inputs.ndim != 2 or inputs.shape[1] != model.input_dim:
        raise ShapeMismatch(
            f"expected inputs with {model.input_dim} features, got shape "
            f"{np.shape(x)}"
        )
    if not np.all(np.isfinite(inputs)):
        raise InvalidInput("inputs contain non-finite values")
    return inputs, single


def _forward(model: ClassifierModel, inputs: np.ndarray):
    """Return (logits, hidden pre-activation or None)."""
    params = model.params
    if model.architecture is Architecture.LINEAR:
        return inputs @ params["w"] + params["b"], None
    pre = inputs @ params["w1"] + params["b1"]
    hidden = np.maximum(pre, 0.0)
    return hidden @ params["w2"] + params["b2"], pre


def forward(model: ClassifierModel, x) -> np.ndarray:
    """Return logits for one input ``(I,)`` or a batch ``(N, I)``."""
    inputs, single = _as_inputs(model, x)
    logits, _ = _forward(model, inputs)
    return logits[0] if single else logits


def backprop(
    model: ClassifierModel, x, grad_logits: np.ndarray
) -> GradientBundle:
    """Chain logit gradients through the model, summing over the batch."""
    inputs, _ = _as_inputs(model, x)
    delta = np.atleast_2d(np.asarray(grad_logits, dtype=FLOAT))
    params = model.params
    if model.architecture is Architecture.LINEAR:
        grads = {"w": inputs.T @ delta, "b": delta.sum(axis=0)}
    else:
        _, pre = _forward(model, inputs)
        hidden = np.maximum(pre, 0.0)
        delta_hidden = (delta @ params["w2"].T) * (pre > 0.0)
        grads = {
            "w1": inputs.T @ delta_hidden,
            "b1": delta_hidden.sum(axis=0),
            "w2": hidden.T @ delta,
            "b2": delta.sum(axis=0),
        }
    return GradientBundle(model.layout, grads)


def per_sample_backprop(
    model: ClassifierModel, x, grad_logits: np.ndarray
) -> np.ndarray:
    """Return one flattened parameter gradient per sample, shape (N, P)."""
    inputs, _ = _as_inputs(model, x)
    delta = np.atleast_2d(np.asarray(grad_logits, dtype=FLOAT))
    count = inputs.shape[0]
    if model.architecture is Architecture.LINEAR:
        blocks = [np.einsum("ni,nc->nic", inputs, delta), delta]
    else:
        params = model.params
        _, pre = _forward(model, inputs)
        hidden = np.maximum(pre, 0.0)
        delta_hidden = (delta @ params["w2"].T) * (pre > 0.0)
        blocks = [
            np.einsum("ni,nj->nij", inputs, delta_hidden),
            delta_hidden,
            np.einsum("nj,nc->njc", hidden, delta),
            delta,
        ]
    return np.concatenate([b.reshape(count, -1) for b in blocks], axis=1)


def backward(
    model: ClassifierModel, x, y, loss: LossLike
) -> Tuple[float, GradientBundle]:
    """Return the batch-mean loss and its gradient for every parameter."""
    inputs, _ = _as_inputs(model, x)
    labels = np.atleast_1d(np.asarray(y))
    logits, _ = _forward(model, inputs)
    evaluation = build_loss(loss).evaluate(logits, labels)
    count = inputs.shape[0]
    value = float(np.sum(evaluation.value) / count)
    return value, backprop(model, inputs, evaluation.grad_logits / count)


def per_sample_gradients(
    model: ClassifierModel, x, y, loss: LossLike
) -> Tuple[np.ndarray, np.ndarray]:
    """Return (per-sample losses (N,), per-sample gradients (N, P))."""
    inputs, _ = _as_inputs(model, x)
    labels = np.atleast_1d(np.asarray(y))
    logits, _ = _forward(model, inputs)
    evaluation = build_loss(loss).evaluate(logits, labels)
    values = np.atleast_1d(evaluation.value)
    return values, per_sample_backprop(model, inputs, evaluation.grad_logits)


def predict(model: ClassifierModel, x) -> Union[int, np.ndarray]:
    """Return the argmax class; ties go to the lowest index."""
    logits = forward(model, x)
    if logits.ndim == 1:
        return int(np.argmax(logits))
    return np.argmax(logits, axis=1)


def accuracy(model: ClassifierModel, dataset) -> float:
    """Return the exact fraction of correctly classified samples."""
    if len(dataset.labels) == 0:
        raise InvalidInput("accuracy of an empty dataset")
    predictions = predict(model, dataset.features)
    return float(np.mean(predictions == dataset.labels))


def save_checkpoint(model: ClassifierModel, path: Union[str, os.PathLike]):
    """Write ``model`` using the documented textual layout."""
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        f"architecture {model.architecture.value}",
        f"input_dim {model.input_dim}",
        f"classes {model.classes}",
        f"parameters {model.parameter_count}",
    ]
    lines.extend(f"{value:.17g}" for value in model.flat())
    with open(path, "w", encoding="utf-8") as stream:
        stream.write("\n".join(lines) + "\n")


def load_checkpoint(path: Union[str, os.PathLike]) -> ClassifierModel:
    """Read a model written by :func:`save_checkpoint`."""
    with open(path, encoding="utf-8") as stream:
        lines = [line.strip() for line in stream if line.strip()]
    try:
        magic, version = lines[0].split()
        if magic != CHECKPOINT_MAGIC or int(version) != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported header {lines[0]!r}")
        header = dict(line.split(maxsplit=1) for line in lines[1:5])
        architecture = Architecture(header["architecture"])
        input_dim = int(header["input_dim"])
        classes = int(header["classes"])
        count = int(header["parameters"])
        values = np.array([float(v) for v in lines[5:]], dtype=FLOAT)
    except (IndexError, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint") from exc
    if values.size != count:
        raise CheckpointError(
            f"{path}: header declares {count} parameters, found {values.size}"
        )
    template = ClassifierModel(
        architecture,
        input_dim,
        classes,
        {
            name: np.zeros(shape)
            for name, shape in parameter_shapes(
                architecture, input_dim, classes
            ).items()
        },
    )
    return template.with_flat(values)
