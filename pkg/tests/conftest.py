"""Shared pytest fixtures."""

import numpy as np
import pytest

from pymixloss.core import RandomSource
from pymixloss.data import SplitSpec, make_blobs, split
from pymixloss.model import Architecture, init_model


@pytest.fixture
def rng():
    """Seeded numpy generator for randomized property checks."""
    return np.random.default_rng(20240)


@pytest.fixture
def blobs():
    """Three well separated classes in four dimensions."""
    return make_blobs(
        classes=3, per_class=20, input_dim=4, separation=3.0, seed=7
    )


@pytest.fixture
def blob_splits(blobs):
    return split(blobs, SplitSpec(0.6, 0.2, 0.2, stratified=True, seed=1))


@pytest.fixture(params=[Architecture.LINEAR, Architecture.MLP1])
def architecture(request):
    return request.param


@pytest.fixture
def small_model(architecture):
    """Freshly initialized model for 4 features and 3 classes."""
    return init_model(architecture, 4, 3, RandomSource(3))
