"""Light-weight mapping between CSV result files and python rows."""
import logging
import math
import os
from typing import Any, Callable, Dict, Iterable, Iterator, Optional, Union

import pandas as pd

LOG = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


def _missing(value) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value))


def as_bool(value) -> bool:
    """Convert CSV spellings of booleans."""
    if isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes")
    return bool(value)


class KeyField:
    """Converter marking the field that identifies a row."""

    def __init__(self, type_constructor: Callable[[Any], Any]):
        """Create a KeyField converting values with ``type_constructor``."""
        self.type_constructor = type_constructor

    def __call__(self, value):
        """Convert a CSV cell to a Python value."""
        return self.type_constructor(value)


class CsvRow:
    """Base class for CSV row schemas.

    ``FIELDS`` maps column names, in file order, to converters. Only those
    columns can be assigned; ``changed`` holds the columns assigned since
    the row was created or last saved.
    """

    FIELDS: Dict[str, Callable[[Any], Any]]

    def __init__(self, **cells):
        """Initialize a row with the supplied cell values."""
        object.__setattr__(self, "_cells", {})
        object.__setattr__(self, "changed", set())
        for name, value in cells.items():
            setattr(self, name, value)
        self.changed.clear()

    def __getattr__(self, name):
        """Return the value of a set column."""
        cells = self.__dict__.get("_cells", {})
        if name in cells:
            return cells[name]
        raise AttributeError(f"{type(self).__name__} has no {name} value")

    def __setattr__(self, name, value):
        """Convert and store a column value."""
        if name not in self.FIELDS:
            raise AttributeError(
                f"{name} is not a column of {type(self).__name__}"
            )
        self._cells[name] = self.FIELDS[name](value)
        self.changed.add(name)

    def __repr__(self):
        """Return a string representation of the Row."""
        cells = ", ".join(f"{k}={v!r}" for k, v in self.as_dict().items())
        return f"{type(self).__name__}({cells})"

    def saved(self) -> None:
        """Forget the assignments made so far."""
        self.changed.clear()

    @classmethod
    def key_name(cls) -> Optional[str]:
        """Return the name of the key field, if the schema has one."""
        for name, value in cls.FIELDS.items():
            if isinstance(value, KeyField):
                return name
        return None

    def key(self):
        """Return the value of the key field."""
        name = self.key_name()
        if name is None:
            raise RuntimeError(f"No key field for {type(self).__name__}")
        return getattr(self, name)

    def as_dict(self) -> Dict[str, Any]:
        """Return the set fields in column order."""
        return {n: self._cells[n] for n in self.FIELDS if n in self._cells}

    @classmethod
    def from_record(cls, record: Dict[str, Any]):
        """Initialize a Row from a mapping.

        Empty cells stay unset, except in float columns where they read as
        NaN.
        """
        kwargs = {}
        for key, value in record.items():
            if key not in cls.FIELDS:
                continue
            if not _missing(value):
                kwargs[key] = value
            elif cls.FIELDS[key] is _float:
                kwargs[key] = math.nan
        return cls(**kwargs)

    @classmethod
    def read_csv(cls, path: PathLike) -> Iterator["CsvRow"]:
        """Yield every row of a CSV file written by :meth:`write_csv`."""
        frame = pd.read_csv(path, dtype=object, keep_default_na=True)
        unknown = set(frame.columns) - set(cls.FIELDS)
        if unknown:
            LOG.warning("Ignoring columns %s in %s", sorted(unknown), path)
        for record in frame.to_dict(orient="records"):
            yield cls.from_record(record)

    @classmethod
    def write_csv(cls, path: PathLike, rows: Iterable["CsvRow"]):
        """Write ``rows`` with a header of every schema column."""
        frame = pd.DataFrame(
            [row.as_dict() for row in rows], columns=list(cls.FIELDS)
        )
        frame.to_csv(path, index=False, float_format="%.17g")


def _float(value) -> float:
    return float(value)


class EpochRow(CsvRow):
    """One epoch of a training run."""

    FIELDS = {
        "epoch": int,
        "alpha": _float,
        "beta": _float,
        "F": _float,
        "train_loss": _float,
        "train_acc": _float,
        "val_acc": _float,
        "test_acc": _float,
    }


class RunSummaryRow(CsvRow):
    """Outcome of one (dataset, architecture, method, seed) cell."""

    FIELDS = {
        "run_id": KeyField(str),
        "dataset": str,
        "architecture": str,
        "method": str,
        "seed": int,
        "lr": _float,
        "best_val_epoch": int,
        "best_val_acc": _float,
        "test_acc": _float,
        "failed": as_bool,
        "diagnostic": str,
        "epochs_file": str,
        "checkpoint": str,
    }


class EscapeRow(CsvRow):
    """Escaping-efficiency comparison for one loss."""

    FIELDS = {
        "method": str,
        "beta": _float,
        "trace_term": _float,
        "ee_estimate": _float,
        "ee_simulated": _float,
        "stderr": _float,
    }


class BoundRow(CsvRow):
    """Ingredients of the escaping-efficiency bound for one beta."""

    FIELDS = {
        "beta": _float,
        "m_cap": _float,
        "fp_trace_term": _float,
        "rhs_bound": _float,
    }


class LandscapeRow(CsvRow):
    """Escaping efficiency from one point of an analytic landscape."""

    FIELDS = {
        "landscape": str,
        "trace_term": _float,
        "ee_estimate": _float,
        "ee_simulated": _float,
        "stderr": _float,
    }
