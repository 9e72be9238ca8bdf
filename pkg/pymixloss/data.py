"""Tabular datasets: CSV ingestion, splitting, normalization, generators."""
import logging
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .core import FLOAT, RandomSource
from .exceptions import DatasetError, InvalidInput, SplitError
from .escape import DoubleWell

LOG = logging.getLogger(__name__)

SPLIT_TOLERANCE = 1e-9
MIN_STRATIFIED_CLASS_SIZE = 3

PathLike = Union[str, os.PathLike]


@dataclass
class Dataset:
    """Feature matrix with contiguous integer labels.

    ``raw_labels[c]`` is the label value that class index ``c`` was remapped
    from when the data was loaded.
    """

    features: np.ndarray
    labels: np.ndarray
    classes: int
    name: str = ""
    raw_labels: Tuple = field(default=())

    def __post_init__(self):
        """Validate the dataset."""
        self.features = np.asarray(self.features, dtype=FLOAT)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InvalidInput(
                f"features must be an N x I matrix: {self.features.shape}"
            )
        if self.labels.shape != (self.features.shape[0],):
            raise InvalidInput(
                f"{self.labels.shape[0]} labels for "
                f"{self.features.shape[0]} rows"
            )
        if self.features.shape[0] < 1:
            raise InvalidInput(f"dataset {self.name!r} has no samples")
        if not np.all(np.isfinite(self.features)):
            raise InvalidInput(f"dataset {self.name!r} has non-finite values")
        if self.classes < 2:
            raise InvalidInput(f"need at least 2 classes: {self.classes}")
        if np.any(self.labels < 0) or np.any(self.labels >= self.classes):
            raise InvalidInput(f"labels outside [0, {self.classes})")
        if not self.raw_labels:
            self.raw_labels = tuple(range(self.classes))
        if len(self.raw_labels) != self.classes:
            raise InvalidInput(
                f"{len(self.raw_labels)} raw labels for {self.classes} classes"
            )

    def __len__(self) -> int:
        """Return the number of samples."""
        return self.labels.shape[0]

    def __repr__(self) -> str:
        """Return a string representation of the dataset."""
        return (
            f"<Dataset {self.name!r} N={len(self)} I={self.input_dim} "
            f"C={self.classes}>"
        )

    @property
    def input_dim(self) -> int:
        """Number of features."""
        return self.features.shape[1]

    def subset(self, indices: Sequence[int], suffix: str = "") -> "Dataset":
        """Return the samples at ``indices`` with the same class space."""
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[indices],
            self.labels[indices],
            self.classes,
            f"{self.name}{suffix}",
            self.raw_labels,
        )

    def with_features(self, features: np.ndarray) -> "Dataset":
        """Return a copy with the feature matrix replaced."""
        return Dataset(
            features, self.labels, self.classes, self.name, self.raw_labels
        )


class Splits(NamedTuple):
    """Train, validation and test partitions of one dataset."""

    train: Dataset
    val: Dataset
    test: Dataset


@dataclass(frozen=True)
class SplitSpec:
    """Fractions of the train/val/test split."""

    train: float = 0.6
    val: float = 0.2
    test: float = 0.2
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        """Validate the fractions."""
        fractions = self.fractions
        if any(not f > 0 for f in fractions):
            raise SplitError(f"split fractions must be positive: {fractions}")
        if abs(sum(fractions) - 1.0) > SPLIT_TOLERANCE:
            raise SplitError(f"split fractions must sum to 1: {fractions}")

    @property
    def fractions(self) -> Tuple[float, float, float]:
        """Return (train, val, test)."""
        return (self.train, self.val, self.test)


@dataclass(frozen=True)
class FeatureScaling:
    """Per-feature statistics used for z-score normalization."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, dataset: Dataset) -> Dataset:
        """Return ``dataset`` normalized with these statistics."""
        return dataset.with_features((dataset.features - self.mean) / self.std)


def _cell_error(message: str, row: int, column: int) -> DatasetError:
    return DatasetError(
        f"{message} at row {row + 1}, column {column + 1}",
        row=row,
        column=column,
    )


def _remap_labels(raw: pd.Series) -> Tuple[np.ndarray, Tuple]:
    """Map sorted distinct raw labels onto 0..C-1."""
    numeric = pd.to_numeric(raw, errors="coerce")
    if not numeric.isna().any():
        values = numeric.to_numpy()
        if np.all(np.mod(values, 1) == 0):
            values = values.astype(np.int64)
    else:
        values = raw.to_numpy()
    codes, uniques = pd.factorize(values, sort=True)
    return codes.astype(np.int64), tuple(np.asarray(uniques).tolist())


def load_csv(
    path: PathLike,
    label_column: int = -1,
    delimiter: str = ",",
    header: bool = False,
    name: Optional[str] = None,
) -> Dataset:
    """Load a dataset with one sample per row and one label column.

    Raises:
        DatasetError for unreadable, empty, ragged or non-numeric input,
        naming the offending row and column.
    """
    if name is None:
        name = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    try:
        frame = pd.read_csv(
            path,
            sep=delimiter,
            header=0 if header else None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=True,
        )
    except pd.errors.EmptyDataError as exc:
        raise DatasetError(f"{path}: file is empty") from exc
    except pd.errors.ParserError as exc:
        raise DatasetError(f"{path}: ragged rows ({exc})") from exc
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read file ({exc})") from exc
    if frame.empty:
        raise DatasetError(f"{path}: file has no data rows")
    columns = frame.shape[1]
    if columns < 2:
        raise DatasetError(f"{path}: need a label and at least one feature")
    if not -columns <= label_column < columns:
        raise DatasetError(
            f"{path}: label column {label_column} outside {columns} columns"
        )
    label_index = label_column % columns

    missing = frame.isna().to_numpy()
    if missing.any():
        row, column = np.argwhere(missing)[0]
        raise _cell_error(f"{path}: missing value (ragged row)", row, column)

    feature_frame = frame.drop(columns=frame.columns[label_index])
    numeric = feature_frame.apply(
        lambda column: pd.to_numeric(column.str.strip(), errors="coerce")
    )
    values = numeric.to_numpy(dtype=FLOAT)
    bad = ~np.isfinite(values)
    if bad.any():
        row, column = np.argwhere(bad)[0]
        original = column + (1 if column >= label_index else 0)
        cell = feature_frame.iat[row, column]
        raise _cell_error(f"{path}: bad feature {cell!r}", row, original)

    labels, raw_labels = _remap_labels(frame.iloc[:, label_index].str.strip())
    if len(raw_labels) < 2:
        raise DatasetError(f"{path}: only one class ({raw_labels[0]!r})")
    LOG.debug(
        "Loaded %s: %d samples, %d features, %d classes",
        path,
        values.shape[0],
        values.shape[1],
        len(raw_labels),
    )
    return Dataset(values, labels, len(raw_labels), name, raw_labels)


def write_csv(dataset: Dataset, path: PathLike, delimiter: str = ","):
    """Write ``dataset`` with the raw label as the last column."""
    frame = pd.DataFrame(dataset.features)
    raw = np.asarray(dataset.raw_labels, dtype=object)
    frame[dataset.input_dim] = raw[dataset.labels]
    frame.to_csv(
        path, sep=delimiter, header=False, index=False, float_format="%.17g"
    )


def _largest_remainder(total: int, fractions: Sequence[float]) -> np.ndarray:
    """Apportion ``total`` items by ``fractions``; ties go to earlier parts."""
    quotas = np.asarray(fractions, dtype=FLOAT) * total
    sizes = np.floor(quotas + SPLIT_TOLERANCE).astype(np.int64)
    leftover = total - int(sizes.sum())
    order = np.argsort(-(quotas - sizes), kind="stable")
    sizes[order[:leftover]] += 1
    return sizes


def split(dataset: Dataset, spec: SplitSpec) -> Splits:
    """Split ``dataset`` into disjoint train, validation and test sets.

    Stratified splits order the samples of every class by their quantile
    position within the class before cutting, so every class is spread over
    the three parts in proportion to the fractions (within one sample).
    """
    count = len(dataset)
    if count < 3:
        raise SplitError(f"need at least 3 samples to split, got {count}")
    sizes = _largest_remainder(count, spec.fractions)
    if np.any(sizes == 0):
        raise SplitError(
            f"fractions {spec.fractions} leave an empty part for {count} "
            f"samples"
        )
    rng = RandomSource(spec.seed)
    counts = np.bincount(dataset.labels, minlength=dataset.classes)
    stratified = spec.stratified
    if stratified and np.any((counts > 0) & (counts < 3)):
        LOG.warning(
            "Dataset %s has classes with fewer than %d samples, "
            "splitting without stratification",
            dataset.name,
            MIN_STRATIFIED_CLASS_SIZE,
        )
        stratified = False

    if stratified:
        shuffle = rng.permutation(count)
        position = np.empty(count, dtype=FLOAT)
        for label in np.flatnonzero(counts):
            members = shuffle[dataset.labels[shuffle] == label]
            position[members] = (np.arange(members.size) + 0.5) / members.size
        tiebreak = rng.permutation(count)
        order = np.lexsort((tiebreak, position))
    else:
        order = rng.permutation(count)

    cuts = np.cumsum(sizes)[:-1]
    parts = np.split(order, cuts)
    return Splits(
        *(
            dataset.subset(np.sort(part), suffix)
            for part, suffix in zip(parts, (":train", ":val", ":test"))
        )
    )


def zscore_normalize(
    train: Dataset, *others: Dataset
) -> Tuple[Tuple[Dataset, ...], FeatureScaling]:
    """Normalize every dataset with the training set's statistics.

    Constant training features are only centered. Returns the normalized
    datasets (train first) and the statistics.
    """
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    constant = np.ptp(train.features, axis=0) == 0
    mean = np.where(constant, train.features[0], mean)
    std = np.where(constant, 1.0, std)
    scaling = FeatureScaling(mean, std)
    return tuple(scaling.apply(d) for d in (train,) + others), scaling


def _blob_centers(
    classes: int, input_dim: int, separation: float, rng: RandomSource
) -> np.ndarray:
    """Return one center per class at distance ``separation``."""
    if classes <= 2 * input_dim:
        centers = np.zeros((classes, input_dim), dtype=FLOAT)
        for label in range(classes):
            sign = 1.0 if label % 2 == 0 else -1.0
            centers[label, label // 2] = sign * separation
        return centers
    directions = rng.normal(size=(classes, input_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return separation * directions


def make_blobs(
    classes: int,
    per_class: int,
    input_dim: int,
    separation: float,
    seed: int,
    name: Optional[str] = None,
) -> Dataset:
    """Gaussian blobs with unit covariance, one per class.

    Class centers sit on the signed coordinate axes at distance
    ``separation`` from the origin (random directions when there are more
    than ``2 * input_dim`` classes).
    """
    if classes < 2 or per_class < 1 or input_dim < 1:
        raise InvalidInput(
            f"invalid blob sizes: classes={classes}, per_class={per_class}, "
            f"input_dim={input_dim}"
        )
    if not (separation >= 0 and math.isfinite(separation)):
        raise InvalidInput(f"separation must be >= 0: {separation}")
    rng = RandomSource(seed)
    centers = _blob_centers(classes, input_dim, separation, rng.spawn(0))
    noise = rng.spawn(1).normal(size=(classes * per_class, input_dim))
    labels = np.repeat(np.arange(classes), per_class)
    features = centers[labels] + noise
    if name is None:
        name = f"blobs-c{classes}-i{input_dim}-s{separation:g}-seed{seed}"
    return Dataset(features, labels, classes, name)


def make_double_well(sharpness_ratio: float) -> DoubleWell:
    """Return a 1-D two-basin landscape with the given curvature ratio."""
    return DoubleWell(sharpness_ratio)
