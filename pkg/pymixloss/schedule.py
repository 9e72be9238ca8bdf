"""Map training progress to mixing weights.

The focus F is the value of p(y|x) at which the target-class gradient of the
mixed loss peaks. With alpha fixed at 1, ``beta = 1 / (1 - 2F)``; F = 0.5 is
reached by dropping CE altogether (alpha = 0, beta = 1).
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence, Tuple, Union

from .exceptions import ScheduleError
from .losses import MixWeights

LOG = logging.getLogger(__name__)

MAX_FOCUS = 0.5
DEFAULT_SWITCH_FRACTION = 0.95
DEFAULT_FOCUS_LADDER = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)

# Absorbs rounding in products like 0.95 * 100 before taking the floor.
_FLOOR_EPS = 1e-9


class Protocol(Enum):
    """Focus protocols; values are the config codes."""

    CONSTANT_F0 = "f0"
    TWO_PHASE = "f0-05"
    GRADUAL = "f0..05"

    @classmethod
    def parse(cls, value: Union[str, "Protocol"]) -> "Protocol":
        """Accept a config code ("f0-05") or a name ("two_phase")."""
        if isinstance(value, cls):
            return value
        for protocol in cls:
            if value in (protocol.value, protocol.name.lower()):
                return protocol
        raise ScheduleError(
            f"unknown schedule protocol {value!r}, expected one of "
            f"{[p.value for p in cls]}"
        )


@dataclass(frozen=True)
class PhaseWeights:
    """Mixing weights in effect during a phase, with their focus."""

    alpha: float
    beta: float
    focus: float

    @property
    def mix(self) -> MixWeights:
        """Weights as a MixWeights instance."""
        return MixWeights(self.alpha, self.beta)


@dataclass(frozen=True)
class ScheduleSpec:
    """One of the three focus protocols with its parameters."""

    protocol: Protocol = Protocol.GRADUAL
    switch_fraction: float = DEFAULT_SWITCH_FRACTION
    focus_ladder: Tuple[float, ...] = DEFAULT_FOCUS_LADDER

    def __post_init__(self):
        """Validate the schedule."""
        object.__setattr__(self, "protocol", Protocol.parse(self.protocol))
        object.__setattr__(
            self, "focus_ladder", tuple(float(f) for f in self.focus_ladder)
        )
        if not 0.0 < self.switch_fraction < 1.0:
            raise ScheduleError(
                f"switch_fraction must lie in (0, 1): {self.switch_fraction}"
            )
        ladder = self.focus_ladder
        if not ladder:
            raise ScheduleError("focus_ladder must not be empty")
        for focus in ladder:
            _check_focus(focus)
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ScheduleError(
                f"focus_ladder must be strictly increasing: {ladder}"
            )

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScheduleSpec":
        """Create a spec from its config mapping."""
        data = dict(data)
        if "focus_ladder" in data:
            data["focus_ladder"] = tuple(data["focus_ladder"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ScheduleError(f"invalid schedule config {data}") from exc

    def to_dict(self):
        """Return the config mapping for this spec."""
        return {
            "protocol": self.protocol.value,
            "switch_fraction": self.switch_fraction,
            "focus_ladder": list(self.focus_ladder),
        }

    @property
    def label(self) -> str:
        """Short file-safe description of the schedule."""
        return self.protocol.value.replace(".", "_")


def _check_focus(focus: float) -> None:
    if not 0.0 <= focus <= MAX_FOCUS:
        raise ScheduleError(f"focus must lie in [0, 0.5]: {focus}")


def weights_for_focus(focus: float) -> PhaseWeights:
    """Return the weights whose target gradient peaks at p_y = ``focus``."""
    _check_focus(focus)
    if focus == MAX_FOCUS:
        return PhaseWeights(0.0, 1.0, MAX_FOCUS)
    return PhaseWeights(1.0, 1.0 / (1.0 - 2.0 * focus), focus)


def focus_of(w: MixWeights) -> float:
    """Return ``0.5 (1 - alpha / beta)`` clamped to [0, 0.5].

    A clamped value is logged as a warning.
    """
    if w.beta <= 0:
        raise ScheduleError("pure cross entropy (beta = 0) has no focus")
    focus = 0.5 * (1.0 - w.alpha / w.beta)
    clamped = min(max(focus, 0.0), MAX_FOCUS)
    if clamped != focus:
        LOG.warning(
            "Focus %g of weights %s is outside [0, 0.5], clamped to %g",
            focus,
            w,
            clamped,
        )
    return clamped


def phase_starts(spec: ScheduleSpec, total_epochs: int) -> Sequence[int]:
    """Return the first epoch of every phase of ``spec``.

    Gradual phases have length ``total_epochs // L`` for an L-step ladder and
    the remainder epochs extend the final phase. When there are fewer
    epochs than ladder steps, phase k starts at ``ceil(k * T / L)`` and
    phases that would be empty are skipped by :func:`schedule_at`.
    """
    if total_epochs < 1:
        raise ScheduleError(f"total_epochs must be >= 1: {total_epochs}")
    if spec.protocol is Protocol.CONSTANT_F0:
        return (0,)
    if spec.protocol is Protocol.TWO_PHASE:
        switch = math.floor(spec.switch_fraction * total_epochs + _FLOOR_EPS)
        return (0, max(1, switch))
    steps = len(spec.focus_ladder)
    length = total_epochs // steps
    if length >= 1:
        return tuple(k * length for k in range(steps))
    return tuple(-(-k * total_epochs // steps) for k in range(steps))


def schedule_at(
    spec: ScheduleSpec, epoch: int, total_epochs: int
) -> PhaseWeights:
    """Return the weights in effect at ``epoch`` (0-based)."""
    if not 0 <= epoch < total_epochs:
        raise ScheduleError(
            f"epoch {epoch} outside [0, {total_epochs}) for {spec.protocol}"
        )
    starts = phase_starts(spec, total_epochs)
    phase = max(k for k, start in enumerate(starts) if start <= epoch)
    if spec.protocol is Protocol.CONSTANT_F0:
        return weights_for_focus(0.0)
    if spec.protocol is Protocol.TWO_PHASE:
        return weights_for_focus(0.0 if phase == 0 else MAX_FOCUS)
    return weights_for_focus(spec.focus_ladder[phase])
