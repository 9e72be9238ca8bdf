"""Exceptions raised by pymixloss."""


class PyMixLossException(Exception):
    """Base exception class for pymixloss exceptions."""


class InvalidInput(PyMixLossException, ValueError):
    """An argument is outside the domain of the operation."""


class NonFiniteInput(InvalidInput):
    """Input contains NaN or infinite entries."""


class ClassIndexError(InvalidInput):
    """A class index is outside [0, C)."""


class ShapeMismatch(InvalidInput):
    """Array shapes are inconsistent with each other or with a model."""


class UnknownLoss(PyMixLossException):
    """Exception raised when a non-existent loss is requested."""


class ExperimentalLossError(PyMixLossException):
    """An experimental loss was requested without opting in."""


class LossNotTrainable(PyMixLossException):
    """The loss only provides values, not gradients."""


class ScheduleError(InvalidInput):
    """Invalid focus value, schedule specification or epoch."""


class DatasetError(PyMixLossException):
    """A dataset could not be loaded or is malformed."""

    def __init__(self, message, *, row=None, column=None):
        """Create the exception, remembering the offending cell."""
        super().__init__(message)
        self.row = row
        self.column = column


class SplitError(InvalidInput):
    """A dataset cannot be split as requested."""


class TrainingFailed(PyMixLossException):
    """Every training run in a sweep failed."""


class ParameterCapExceeded(PyMixLossException):
    """A dense P x P computation was requested for too many parameters."""


class NotPositiveSemidefinite(InvalidInput):
    """A covariance matrix has eigenvalues below the PSD tolerance."""


class AnalysisError(PyMixLossException):
    """Statistics cannot be computed for the given tables or snapshots."""


class ConfigError(PyMixLossException):
    """An experiment configuration is invalid."""


class CheckpointError(PyMixLossException):
    """A model checkpoint could not be read or written."""
