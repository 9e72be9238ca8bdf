"""Tests for noise covariance, curvature and the SDE simulator."""

import math

import numpy as np
import pytest

from pymixloss import escape
from pymixloss.core import RandomSource, softmax
from pymixloss.data import Dataset
from pymixloss.escape import (
    CovarianceMatrix,
    DoubleWell,
    EscapeQuantities,
    ModelLandscape,
    NoiseMode,
    QuadraticLandscape,
    SdeConfig,
)
from pymixloss.exceptions import (
    InvalidInput,
    NotPositiveSemidefinite,
    ParameterCapExceeded,
    ShapeMismatch,
)
from pymixloss.losses import CE_WEIGHTS, LossSpec, MixWeights
from pymixloss.model import (
    backward,
    forward,
    init_model,
    per_sample_gradients,
)

MOCK_H = np.diag([1.0, 2.0])


@pytest.fixture
def linear_model(blobs):
    return init_model(
        "linear", blobs.input_dim, blobs.classes, RandomSource(2)
    )


def zero_noise_config(**changes):
    options = dict(
        learning_rate=0.1,
        dt=0.01,
        total_time=0.1,
        noise_mode=NoiseMode.ZERO,
        trajectories=3,
    )
    options.update(changes)
    return SdeConfig(**options)


def test_parameter_cap():
    escape.check_parameter_cap(escape.PARAMETER_CAP)
    with pytest.raises(ParameterCapExceeded):
        escape.check_parameter_cap(escape.PARAMETER_CAP + 1)
    big = init_model("linear", 100, 20, RandomSource(0))
    assert big.parameter_count == 2020
    with pytest.raises(ParameterCapExceeded):
        escape.noise_covariance(big, None, CE_WEIGHTS, 8)
    with pytest.raises(ParameterCapExceeded):
        escape.hessian(big, None, CE_WEIGHTS)


def test_noise_covariance(linear_model, blobs):
    covariance = escape.noise_covariance(linear_model, blobs, CE_WEIGHTS, 4)
    _, grads = per_sample_gradients(
        linear_model, blobs.features, blobs.labels, LossSpec("ce")
    )
    expected = np.cov(grads, rowvar=False, bias=True) / 4
    np.testing.assert_allclose(covariance.matrix, expected, atol=1e-12)
    assert covariance.dim == linear_model.parameter_count
    assert (covariance.batch_size, covariance.samples) == (4, len(blobs))
    assert np.linalg.eigvalsh(covariance.matrix)[0] > -1e-10

    single = escape.noise_covariance(linear_model, blobs, CE_WEIGHTS, 1)
    np.testing.assert_allclose(single.matrix, 4 * covariance.matrix)
    assert single.trace == pytest.approx(4 * covariance.trace)
    with pytest.raises(InvalidInput):
        escape.noise_covariance(linear_model, blobs, CE_WEIGHTS, 0)


def test_noise_covariance_vanishes_without_spread(linear_model, blobs):
    x, y = blobs.features[0], blobs.labels[0]
    single = Dataset(x[None, :], [y], blobs.classes)
    covariance = escape.noise_covariance(linear_model, single, CE_WEIGHTS, 1)
    assert covariance.samples == 1
    np.testing.assert_array_equal(covariance.matrix, 0.0)

    repeated = Dataset(np.tile(x, (6, 1)), [y] * 6, blobs.classes)
    covariance = escape.noise_covariance(
        linear_model, repeated, CE_WEIGHTS, 2
    )
    np.testing.assert_allclose(covariance.matrix, 0.0, atol=1e-15)


@pytest.mark.parametrize("scale", [0.5, 3.0])
def test_noise_covariance_scales_quadratically(linear_model, blobs, scale):
    base = escape.noise_covariance(
        linear_model, blobs, MixWeights(1.0, 2.5), 4
    )
    scaled = escape.noise_covariance(
        linear_model, blobs, MixWeights(scale, 2.5 * scale), 4
    )
    np.testing.assert_allclose(
        scaled.matrix, scale ** 2 * base.matrix, rtol=1e-10, atol=1e-12
    )


def test_covariance_validation():
    with pytest.raises(InvalidInput):
        CovarianceMatrix(np.array([[1.0, 0.5], [0.0, 1.0]]), 1, 1)
    with pytest.raises(NotPositiveSemidefinite):
        CovarianceMatrix(np.diag([1.0, -1.0]), 1, 1)
    with pytest.raises(ShapeMismatch):
        CovarianceMatrix(np.ones((2, 3)), 1, 1)
    # Round-off below the tolerance is accepted.
    CovarianceMatrix(np.diag([1.0, -1e-12]), 1, 1)


def test_psd_sqrt():
    matrix = np.array([[2.0, 1.0], [1.0, 2.0]])
    root = escape.psd_sqrt(matrix)
    np.testing.assert_allclose(root @ root, matrix, atol=1e-12)
    np.testing.assert_allclose(root, root.T)


def test_finite_difference_hessian(rng):
    theta = rng.normal(size=5)
    matrix = escape.fd_hessian(np.sin, theta)
    np.testing.assert_allclose(matrix, -np.diag(np.sin(theta)), atol=1e-7)

    quadratic = np.array([[3.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(
        escape.numerical_hessian(lambda w: quadratic @ w, np.ones(2)),
        quadratic,
        atol=1e-9,
    )


def test_model_hessian_is_symmetric_and_convex(linear_model, blobs):
    curvature = escape.hessian(linear_model, blobs, LossSpec("ce"))
    size = linear_model.parameter_count
    assert curvature.shape == (size, size)
    np.testing.assert_array_equal(curvature, curvature.T)
    assert np.linalg.eigvalsh(curvature)[0] > -1e-6


def test_single_sample_hessian_matches_closed_form(rng):
    model = init_model("linear", 3, 4, RandomSource(5))
    model = model.with_flat(rng.normal(scale=0.5, size=16))
    x = rng.normal(size=3)
    sample = Dataset(x[None, :], [2], 4)
    curvature = escape.hessian(model, sample, LossSpec("ce"))

    probs = softmax(forward(model, x))
    logit_hessian = np.diag(probs) - np.outer(probs, probs)
    # logits = J theta with theta = (w row-major, b)
    jacobian = np.hstack([np.kron(x, np.eye(4)), np.eye(4)])
    np.testing.assert_allclose(
        curvature, jacobian.T @ logit_hessian @ jacobian, atol=1e-5
    )
    np.testing.assert_allclose(
        curvature[:12, :12],
        np.kron(np.outer(x, x), logit_hessian),
        atol=1e-5,
    )


def test_raw_finite_difference_hessian_is_nearly_symmetric(
    linear_model, blobs
):
    def gradient(theta):
        _, grads = backward(
            linear_model.with_flat(theta),
            blobs.features,
            blobs.labels,
            LossSpec("ce"),
        )
        return grads.flat()

    raw = escape.fd_hessian(gradient, linear_model.flat())
    assert np.max(np.abs(raw - raw.T)) <= 1e-5


def test_escaping_efficiency_estimate():
    assert escape.escaping_efficiency_estimate(
        MOCK_H, np.eye(2), 0.05, 0.1
    ) == pytest.approx(0.0075)
    assert escape.escaping_efficiency_estimate(
        MOCK_H, np.eye(2), 0.05, 0.1, include_learning_rate=False
    ) == pytest.approx(0.075)
    covariance = CovarianceMatrix(np.diag([0.5, 0.25]), 1, 1)
    assert escape.escaping_efficiency_estimate(
        MOCK_H, covariance, 2.0, 1.0
    ) == pytest.approx(1.0)
    with pytest.raises(ShapeMismatch):
        escape.escaping_efficiency_estimate(MOCK_H, np.eye(3), 1.0, 1.0)


def test_bound_coefficients():
    quantities = EscapeQuantities(np.eye(2), np.zeros((2, 2)), 0.5)
    assert quantities.trace_term == 2.0
    assert escape.ee_rhs_bound(quantities, 0.0) == 0.0
    # 1 + 3 / 0.5 + (2 / 0.25 + 1 / 0.5) = 17
    assert escape.ee_rhs_bound(quantities, 1.0) == pytest.approx(34.0)
    with pytest.raises(InvalidInput):
        escape.ee_rhs_bound(quantities, -1.0)
    with pytest.raises(InvalidInput):
        EscapeQuantities(np.eye(2), np.zeros((2, 2)), 0.0)
    with pytest.raises(ShapeMismatch):
        EscapeQuantities(np.eye(2), np.zeros((3, 3)), 0.5)


def test_bound_grows_with_beta(linear_model, blobs):
    quantities = escape.escape_quantities(
        linear_model, blobs.features, blobs.labels
    )
    size = linear_model.parameter_count
    assert quantities.f_p.shape == (size, size)
    assert 0.0 < quantities.m_cap <= 1.0
    assert np.linalg.eigvalsh(quantities.f_p)[0] > -1e-10
    bounds = [escape.ee_rhs_bound(quantities, b) for b in (1.0, 2.5, 5.0)]
    if quantities.trace_term > 0:
        assert bounds == sorted(bounds)


def test_single_sample_gradient_outer_product_has_rank_one(
    linear_model, blobs
):
    quantities = escape.escape_quantities(
        linear_model, blobs.features[:1], blobs.labels[:1]
    )
    assert np.linalg.matrix_rank(quantities.f_p) == 1
    several = escape.escape_quantities(
        linear_model, blobs.features[:3], blobs.labels[:3]
    )
    assert np.linalg.matrix_rank(several.f_p) > 1


def test_halving_the_step_keeps_the_endpoint_statistics():
    results = [
        escape.sde_simulate(
            QuadraticLandscape(MOCK_H),
            SdeConfig(
                learning_rate=0.1,
                dt=dt,
                total_time=0.05,
                noise_mode=NoiseMode.FULL_COVARIANCE,
                seed=3,
                trajectories=2000,
            ),
            np.eye(2),
        )
        for dt in (0.01, 0.005)
    ]
    coarse, fine = results
    spread = math.hypot(coarse.stderr, fine.stderr)
    assert abs(
        coarse.escaping_efficiency - fine.escaping_efficiency
    ) <= 4 * spread
    assert fine.times[-1] == pytest.approx(coarse.times[-1])


def test_quadratic_landscape():
    landscape = QuadraticLandscape(MOCK_H, center=[1.0, -1.0])
    np.testing.assert_array_equal(landscape.minimum, [1.0, -1.0])
    assert landscape.value(landscape.minimum) == 0.0
    np.testing.assert_allclose(landscape.gradient([2.0, 0.0]), [1.0, 2.0])
    points = np.array([[2.0, -1.0], [1.0, 0.0]])
    np.testing.assert_allclose(landscape.value(points), [0.5, 1.0])
    np.testing.assert_array_equal(landscape.hessian(), MOCK_H)
    with pytest.raises(NotPositiveSemidefinite):
        QuadraticLandscape(np.diag([1.0, -1.0]))


@pytest.mark.parametrize("ratio", [1.0, 4.0, 10.0])
def test_double_well(ratio):
    well = DoubleWell(ratio)
    for point in (-1.0, well.barrier, 1.0):
        assert well.gradient(np.array([point]))[0] == pytest.approx(
            0.0, abs=1e-12
        )
    wide = well.hessian(well.wide_minimum)[0, 0]
    sharp = well.hessian(well.sharp_minimum)[0, 0]
    assert wide == pytest.approx(1.0)
    assert sharp == pytest.approx(ratio)
    numeric = escape.Landscape.hessian(well, well.sharp_minimum)
    assert numeric[0, 0] == pytest.approx(sharp, rel=1e-6)
    assert well.value(np.array([[0.0], [1.0]])).shape == (2,)


def test_double_well_rejects_ratio_below_one():
    with pytest.raises(InvalidInput):
        DoubleWell(0.5)
    with pytest.raises(InvalidInput):
        DoubleWell(float("inf"))


def test_model_landscape(linear_model, blobs):
    wd = 0.01
    landscape = ModelLandscape(linear_model, blobs, CE_WEIGHTS, wd)
    theta = linear_model.flat()
    value, grads = backward(
        linear_model, blobs.features, blobs.labels, LossSpec("ce")
    )
    np.testing.assert_allclose(
        landscape.gradient(theta), grads.flat() + wd * theta, atol=1e-12
    )
    assert landscape.value(theta) == pytest.approx(
        value + 0.5 * wd * theta @ theta
    )
    assert landscape.gradient(np.stack([theta, theta])).shape == (
        2,
        theta.size,
    )
    expected = escape.hessian(linear_model, blobs, CE_WEIGHTS)
    np.testing.assert_allclose(
        landscape.hessian(),
        expected + wd * np.eye(theta.size),
        atol=1e-6,
    )
    with pytest.raises(InvalidInput):
        ModelLandscape(linear_model, blobs, CE_WEIGHTS, -1.0)


def test_diffusion_matrix():
    sigma = np.diag([1.0, 3.0])
    zero = escape.diffusion_matrix(None, 0.5, NoiseMode.ZERO, 2)
    np.testing.assert_array_equal(zero, np.zeros((2, 2)))
    isotropic = escape.diffusion_matrix(sigma, 0.5, "isotropic", 2)
    np.testing.assert_allclose(isotropic, np.eye(2))
    full = escape.diffusion_matrix(sigma, 0.5, NoiseMode.FULL_COVARIANCE, 2)
    np.testing.assert_allclose(full @ full.T, 0.5 * sigma, atol=1e-12)
    with pytest.raises(InvalidInput):
        escape.diffusion_matrix(None, 0.5, NoiseMode.FULL_COVARIANCE, 2)
    with pytest.raises(ShapeMismatch):
        escape.diffusion_matrix(sigma, 0.5, NoiseMode.FULL_COVARIANCE, 3)


@pytest.mark.parametrize(
    "changes",
    [
        {"learning_rate": 0.0},
        {"dt": 0.0},
        {"total_time": 0.001},
        {"trajectories": 0},
        {"chunk_size": 0},
        {"noise_mode": "loud"},
    ],
)
def test_invalid_sde_config(changes):
    with pytest.raises((InvalidInput, ValueError)):
        zero_noise_config(**changes)


def test_sde_steps():
    assert zero_noise_config(total_time=0.05, dt=0.005).steps == 10
    assert zero_noise_config(total_time=0.1, dt=0.03).steps == 3


def test_zero_noise_at_the_minimum_stays_put():
    landscape = QuadraticLandscape(MOCK_H)
    result = escape.sde_simulate(landscape, zero_noise_config())
    assert result.escaping_efficiency == 0.0
    np.testing.assert_array_equal(result.mean_excess, np.zeros(11))
    np.testing.assert_allclose(result.times, np.arange(11) * 0.01)


def test_zero_noise_is_gradient_flow():
    landscape = QuadraticLandscape(np.eye(2))
    cfg = zero_noise_config()
    result = escape.sde_simulate(landscape, cfg, start=[1.0, 0.0])
    expected = 0.5 * 0.99 ** 20 - 0.5
    assert result.escaping_efficiency == pytest.approx(expected, rel=1e-12)
    assert np.all(np.diff(result.mean_excess) < 0)


def test_trajectories_do_not_depend_on_chunking():
    landscape = QuadraticLandscape(MOCK_H)
    changes = dict(noise_mode=NoiseMode.FULL_COVARIANCE, trajectories=7)
    small = escape.sde_simulate(
        landscape, zero_noise_config(chunk_size=2, **changes), np.eye(2)
    )
    large = escape.sde_simulate(
        landscape, zero_noise_config(**changes), np.eye(2)
    )
    np.testing.assert_allclose(small.excess, large.excess, rtol=1e-12)
    assert small.stderr == pytest.approx(large.stderr)
    single = escape.sde_simulate(
        landscape, zero_noise_config(trajectories=1)
    )
    assert math.isnan(single.stderr)


@pytest.mark.slow
def test_simulation_matches_the_linear_estimate():
    cfg = SdeConfig(
        learning_rate=0.1,
        dt=0.005,
        total_time=0.05,
        noise_mode=NoiseMode.FULL_COVARIANCE,
        seed=11,
        trajectories=4000,
    )
    result = escape.sde_simulate(QuadraticLandscape(MOCK_H), cfg, np.eye(2))
    estimate = escape.escaping_efficiency_estimate(
        MOCK_H, np.eye(2), cfg.total_time, cfg.learning_rate
    )
    assert estimate == pytest.approx(0.0075)
    assert result.escaping_efficiency == pytest.approx(estimate, rel=0.25)


def test_mixed_loss_noise_differs_from_cross_entropy(linear_model, blobs):
    ce = escape.noise_covariance(linear_model, blobs, CE_WEIGHTS, 8)
    mixed = escape.noise_covariance(
        linear_model, blobs, MixWeights(1.0, 2.5), 8
    )
    assert ce.dim == mixed.dim
    assert not np.allclose(ce.matrix, mixed.matrix)
