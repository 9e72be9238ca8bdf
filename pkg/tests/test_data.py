"""Tests for dataset loading, splitting, normalization and generators."""

import numpy as np
import pytest

from pymixloss import data
from pymixloss.data import Dataset, SplitSpec
from pymixloss.exceptions import DatasetError, InvalidInput, SplitError


@pytest.fixture
def csv_file(tmp_path):
    def write(text, name="data.csv"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write


def balanced(classes, per_class, input_dim=2):
    labels = np.repeat(np.arange(classes), per_class)
    features = np.arange(labels.size * input_dim, dtype=float).reshape(
        labels.size, input_dim
    )
    return Dataset(features, labels, classes, name="balanced")


def test_load_csv_remaps_labels(csv_file):
    dataset = data.load_csv(csv_file("1.0,2.0,5\n3.0,4.0,9\n5.0,6.0,5\n"))
    assert dataset.classes == 2
    np.testing.assert_array_equal(dataset.labels, [0, 1, 0])
    assert dataset.raw_labels == (5, 9)
    assert dataset.name == "data"
    np.testing.assert_array_equal(dataset.features[:, 1], [2.0, 4.0, 6.0])


def test_load_csv_label_column_header_and_delimiter(csv_file):
    path = csv_file("class;a;b\ncat;0.5;1\ndog;1.5;2\ncat;2.5;3\n")
    dataset = data.load_csv(path, label_column=0, delimiter=";", header=True)
    assert dataset.raw_labels == ("cat", "dog")
    np.testing.assert_array_equal(dataset.labels, [0, 1, 0])
    np.testing.assert_array_equal(dataset.features[:, 0], [0.5, 1.5, 2.5])


def test_load_csv_empty_file(csv_file):
    with pytest.raises(DatasetError):
        data.load_csv(csv_file(""))


def test_load_csv_names_bad_cell(csv_file):
    with pytest.raises(DatasetError) as info:
        data.load_csv(csv_file("1.0,2.0,0\n3.0,nan,1\n"))
    assert (info.value.row, info.value.column) == (1, 1)
    assert "row 2, column 2" in str(info.value)

    with pytest.raises(DatasetError) as info:
        data.load_csv(csv_file("1,0\nabc,1\n"))
    assert (info.value.row, info.value.column) == (1, 0)


@pytest.mark.parametrize(
    "text, kwargs",
    [
        ("1,2,0\n1,2,3,1\n", {}),
        ("0,1,2\n1,3\n", {"label_column": 0}),
        ("1,0\n2,0\n", {}),
        ("1\n2\n", {}),
        ("1,2,0\n", {"label_column": 3}),
    ],
)
def test_load_csv_rejects_malformed_files(csv_file, text, kwargs):
    with pytest.raises(DatasetError):
        data.load_csv(csv_file(text), **kwargs)


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(DatasetError):
        data.load_csv(tmp_path / "missing.csv")


def test_write_then_load_preserves_dataset(blobs, tmp_path):
    path = tmp_path / "blobs.csv"
    data.write_csv(blobs, path)
    loaded = data.load_csv(path)
    np.testing.assert_array_equal(loaded.features, blobs.features)
    np.testing.assert_array_equal(loaded.labels, blobs.labels)
    assert loaded.classes == blobs.classes


def test_dataset_validation():
    with pytest.raises(InvalidInput):
        Dataset([[0.0], [1.0]], [0, 2], 2)
    with pytest.raises(InvalidInput):
        Dataset([[np.inf], [1.0]], [0, 1], 2)
    with pytest.raises(InvalidInput):
        Dataset(np.zeros((0, 2)), [], 2)
    with pytest.raises(InvalidInput):
        Dataset([[0.0]], [0], 1)


def test_split_one_of_each_class():
    spec = SplitSpec(1 / 3, 1 / 3, 1 / 3, stratified=True, seed=4)
    for part in data.split(balanced(3, 3), spec):
        assert sorted(part.labels) == [0, 1, 2]


def test_split_sizes():
    parts = data.split(balanced(2, 50), SplitSpec(0.6, 0.2, 0.2))
    assert [len(p) for p in parts] == [60, 20, 20]
    assert parts.train.name == "balanced:train"


def test_split_is_deterministic_and_exhaustive(rng):
    dataset = balanced(3, 17)
    for _ in range(200):
        train = rng.uniform(0.2, 0.8)
        val = rng.uniform(0.05, 0.95 - train)
        spec = SplitSpec(
            train,
            val,
            1.0 - train - val,
            stratified=bool(rng.integers(2)),
            seed=int(rng.integers(1000)),
        )
        try:
            first = data.split(dataset, spec)
        except SplitError:
            continue
        second = data.split(dataset, spec)
        rows = [tuple(p.features[:, 0]) for p in first]
        assert rows == [tuple(p.features[:, 0]) for p in second]
        merged = np.concatenate(rows)
        assert merged.size == len(dataset)
        assert np.unique(merged).size == len(dataset)


def test_stratified_proportions(rng):
    labels = np.array([0] * 50 + [1] * 30 + [2] * 20)
    dataset = Dataset(rng.normal(size=(100, 2)), labels, 3)
    spec = SplitSpec(0.6, 0.2, 0.2, stratified=True, seed=9)
    parts = data.split(dataset, spec)
    for part, fraction in zip(parts, spec.fractions):
        counts = np.bincount(part.labels, minlength=3)
        expected = fraction * np.array([50, 30, 20])
        assert np.all(np.abs(counts - expected) <= 1.0 + 1e-9)


def test_small_classes_fall_back_to_unstratified(caplog):
    dataset = Dataset(np.arange(12.0)[:, None], [0] * 10 + [1] * 2, 2)
    parts = data.split(dataset, SplitSpec(0.5, 0.25, 0.25))
    assert sum(len(p) for p in parts) == 12
    assert "without stratification" in caplog.text


def test_infeasible_splits():
    with pytest.raises(SplitError):
        data.split(balanced(2, 5), SplitSpec(0.98, 0.01, 0.01))
    with pytest.raises(SplitError):
        data.split(Dataset([[0.0], [1.0]], [0, 1], 2), SplitSpec())
    with pytest.raises(SplitError):
        SplitSpec(0.5, 0.5, 0.0)
    with pytest.raises(SplitError):
        SplitSpec(0.6, 0.3, 0.3)


def test_zscore_normalize_examples():
    train = Dataset([[0.0, 7.0], [2.0, 7.0]], [0, 1], 2)
    val = Dataset([[4.0, 8.0]], [0], 2)
    (train_n, val_n), scaling = data.zscore_normalize(train, val)
    np.testing.assert_array_equal(train_n.features[:, 0], [-1.0, 1.0])
    np.testing.assert_array_equal(train_n.features[:, 1], [0.0, 0.0])
    np.testing.assert_array_equal(val_n.features[0], [3.0, 1.0])
    np.testing.assert_array_equal(scaling.mean, [1.0, 7.0])


def test_zscore_normalize_statistics(blobs):
    (normalized,), _ = data.zscore_normalize(blobs)
    assert np.abs(normalized.features.mean(axis=0)).max() <= 1e-10
    np.testing.assert_allclose(
        normalized.features.std(axis=0), 1.0, atol=1e-10
    )


def test_make_blobs():
    first = data.make_blobs(3, 10, 2, 5.0, seed=1)
    second = data.make_blobs(3, 10, 2, 5.0, seed=1)
    np.testing.assert_array_equal(first.features, second.features)
    assert len(first) == 30
    assert first.input_dim == 2
    np.testing.assert_array_equal(np.bincount(first.labels), [10, 10, 10])
    many = data.make_blobs(7, 5, 2, 1.0, seed=1)
    assert many.classes == 7


@pytest.mark.parametrize(
    "args", [(1, 10, 2, 1.0), (2, 0, 2, 1.0), (2, 5, 0, 1.0), (2, 5, 2, -1.0)]
)
def test_make_blobs_rejects_invalid_sizes(args):
    with pytest.raises(InvalidInput):
        data.make_blobs(*args, seed=0)


def test_make_double_well():
    well = data.make_double_well(4.0)
    sharp = well.hessian(well.sharp_minimum)[0, 0]
    wide = well.hessian(well.wide_minimum)[0, 0]
    assert sharp == pytest.approx(4.0 * wide, rel=1e-12)
    assert wide == pytest.approx(1.0)
    assert well.gradient(well.sharp_minimum)[0] == pytest.approx(0.0)
    with pytest.raises(InvalidInput):
        data.make_double_well(0.5)
