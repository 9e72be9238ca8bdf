"""Numerically stable softmax and seeded random generation.

All arithmetic is float64. Functions accept a single logit vector of shape
``(C,)`` or a batch of shape ``(B, C)``; reductions run over the last axis.
"""
from typing import Sequence, Union

import numpy as np

from .exceptions import InvalidInput, NonFiniteInput

FLOAT = np.float64

# Counter-based generator; the same (seed, stream index) produces the same
# stream on every platform numpy supports.
PRNG_ALGORITHM = "philox4x64-10"

PROBABILITY_ATOL = 1e-9

ArrayLike = Union[np.ndarray, Sequence[float]]


def as_logits(q: ArrayLike) -> np.ndarray:
    """Return ``q`` as a float64 array after validating it as logits.

    Raises:
        NonFiniteInput if any entry is NaN or infinite.
        InvalidInput if there are fewer than two classes.
    """
    values = np.asarray(q, dtype=FLOAT)
    if values.ndim not in (1, 2):
        raise InvalidInput(
            f"logits must be a vector or a batch of vectors, got shape "
            f"{values.shape}"
        )
    if values.shape[-1] < 2:
        raise InvalidInput(
            f"logits need at least 2 classes, got {values.shape[-1]}"
        )
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise NonFiniteInput(
            f"non-finite logit {values[tuple(bad)]!r} at index "
            f"{tuple(int(i) for i in bad)}"
        )
    return values


def as_probabilities(p: ArrayLike) -> np.ndarray:
    """Return ``p`` as a float64 array after validating it sums to one."""
    values = np.asarray(p, dtype=FLOAT)
    if values.ndim not in (1, 2) or values.shape[-1] < 2:
        raise InvalidInput(
            f"probabilities must have at least 2 classes, got shape "
            f"{values.shape}"
        )
    if not np.all(np.isfinite(values)):
        raise NonFiniteInput("probability vector contains non-finite values")
    if np.any(values < 0.0) or np.any(values > 1.0):
        raise InvalidInput("probabilities must lie in [0, 1]")
    totals = values.sum(axis=-1)
    if np.any(np.abs(totals - 1.0) > PROBABILITY_ATOL):
        raise InvalidInput(
            f"probabilities must sum to 1, got {np.atleast_1d(totals)[0]!r}"
        )
    return values


def softmax(q: ArrayLike) -> np.ndarray:
    """Map logits to pseudo-probabilities.

    The maximum logit is subtracted before exponentiation so large logits
    never overflow.
    """
    logits = as_logits(q)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=-1, keepdims=True)


def log_softmax(q: ArrayLike) -> np.ndarray:
    """Return ``log(softmax(q))`` without intermediate underflow."""
    logits = as_logits(q)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def one_hot(y: ArrayLike, classes: int) -> np.ndarray:
    """Return one-hot rows for the class indices ``y``."""
    labels = np.asarray(y, dtype=np.int64)
    out = np.zeros(labels.shape + (classes,), dtype=FLOAT)
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


class RandomSource:
    """Seeded pseudo-random stream backed by numpy's Philox generator.

    A RandomSource is owned by a single task. Independent child streams are
    derived with :meth:`spawn`, keyed by an integer index, so that the
    stream for (seed, index) does not depend on how many other streams were
    created before it.
    """

    algorithm = PRNG_ALGORITHM

    def __init__(self, seed: int, stream: Sequence[int] = ()):
        """Create a stream for ``seed`` and an optional stream path."""
        if not 0 <= int(seed) < 2 ** 64:
            raise InvalidInput(f"seed must be a 64-bit unsigned int: {seed}")
        self.seed = int(seed)
        self.stream = tuple(int(i) for i in stream)
        sequence = np.random.SeedSequence(
            entropy=self.seed, spawn_key=self.stream
        )
        self._generator = np.random.Generator(np.random.Philox(sequence))

    def __repr__(self) -> str:
        """Return a string representation of the RandomSource."""
        return f"<RandomSource seed={self.seed} stream={self.stream}>"

    def spawn(self, index: int) -> "RandomSource":
        """Return the independent child stream number ``index``."""
        return RandomSource(self.seed, self.stream + (index,))

    @property
    def generator(self) -> np.random.Generator:
        """Underlying numpy Generator."""
        return self._generator

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        """Draw uniform samples from [low, high)."""
        return self._generator.uniform(low, high, size)

    def normal(self, size=None, loc=0.0, scale=1.0) -> np.ndarray:
        """Draw normal samples."""
        return self._generator.normal(loc, scale, size)

    def permutation(self, n: int) -> np.ndarray:
        """Return a random permutation of ``range(n)``."""
        return self._generator.permutation(n)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        """Draw integers from [low, high)."""
        return self._generator.integers(low, high, size)
