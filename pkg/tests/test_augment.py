import numpy as np
import pytest

from pcattack import autodiff as ad
from pcattack.augment import (
    AugmentConfig,
    DimConfig,
    GradientEstimator,
    SimConfig,
    TimConfig,
    compose,
    diverse_input_matrix,
    dim_gradient,
    example_rngs,
    gaussian_kernel,
    sim_gradient,
    tim_gradient,
    tim_smooth,
)

from .conftest import LinearModel


@pytest.fixture(scope="module")
def batch(test_set):
    return test_set.images[:8], test_set.labels[:8]


def plain(model, x, y):
    return ad.loss_gradient(model, x, y)


def test_dim_p0_identity(small_cnn, batch):
    x, y = batch
    g = dim_gradient(small_cnn, x, y, DimConfig(probability=0.0), example_rngs(1, range(8)))
    assert np.array_equal(g, plain(small_cnn, x, y))


def test_dim_identity_transform_matrix():
    # drawn size S padded to S at offset 0 composes to the identity
    assert np.array_equal(diverse_input_matrix(28, 28, 28, 0), np.eye(28))


def test_dim_deterministic_and_fires(small_cnn, batch):
    x, y = batch
    cfg = DimConfig(probability=1.0)
    a = dim_gradient(small_cnn, x, y, cfg, example_rngs(5, range(8)))
    b = dim_gradient(small_cnn, x, y, cfg, example_rngs(5, range(8)))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, plain(small_cnn, x, y))


def test_dim_per_example_independent_of_batch(small_cnn, batch):
    x, y = batch
    cfg = DimConfig(probability=0.5)
    full = dim_gradient(small_cnn, x, y, cfg, example_rngs(5, range(8)))
    part = dim_gradient(small_cnn, x[3:5], y[3:5], cfg, example_rngs(5, [3, 4]))
    assert np.allclose(full[3:5], part, rtol=1e-12, atol=1e-15)


def test_dim_matrix_matches_transform():
    # resize 28 -> 30, pad to 31 at offset 1, resize back to 28
    m = diverse_input_matrix(28, 30, 31, 1)
    assert m.shape == (28, 28)
    ones = m @ np.ones(28)
    assert np.all(ones <= 1 + 1e-12) and np.all(ones >= 0)


@pytest.mark.parametrize("size", [3, 7, 15])
def test_gaussian_kernel_unit_mass(size):
    k = gaussian_kernel(size, size / 3)
    assert abs(k.sum() - 1.0) <= 1e-12
    assert np.array_equal(k, k.T) and np.array_equal(k, k[::-1]) and np.array_equal(k, np.rot90(k))
    assert k.argmax() == (size * size) // 2


def test_gaussian_kernel_single_tap_and_errors():
    assert gaussian_kernel(1, 0.3).tolist() == [[1.0]]
    with pytest.raises(ValueError):
        gaussian_kernel(4, 1.0)
    with pytest.raises(ValueError):
        gaussian_kernel(3, 0.0)


def test_tim_size1_identity(small_cnn, batch):
    x, y = batch
    assert np.array_equal(tim_gradient(small_cnn, x, y, TimConfig(kernel_size=1)), plain(small_cnn, x, y))


def test_tim_constant_interior_and_mass():
    g = np.ones((1, 1, 20, 20))
    out = tim_smooth(g, gaussian_kernel(7, 7 / 3))
    assert np.allclose(out[..., 3:-3, 3:-3], 1.0, atol=1e-12)
    r = np.random.default_rng(0).normal(size=(2, 1, 20, 20))
    assert np.abs(tim_smooth(r, gaussian_kernel(7, 2.0))).sum() <= np.abs(r).sum() + 1e-9


def test_tim_linear_and_rejects_big_kernel():
    r = np.random.default_rng(1).normal(size=(1, 1, 10, 10))
    k = gaussian_kernel(5, 1.0)
    assert np.allclose(tim_smooth(3.5 * r, k), 3.5 * tim_smooth(r, k), rtol=1e-12)
    with pytest.raises(ValueError):
        tim_smooth(r, gaussian_kernel(11, 1.0))


def test_tim_per_channel():
    g = np.zeros((1, 2, 9, 9))
    g[0, 0, 4, 4] = 1.0
    out = tim_smooth(g, gaussian_kernel(3, 1.0))
    assert np.array_equal(out[0, 1], np.zeros((9, 9)))
    assert np.allclose(out[0, 0, 3:6, 3:6], gaussian_kernel(3, 1.0))


def test_sim_m1_identity(small_cnn, batch):
    x, y = batch
    assert np.array_equal(sim_gradient(small_cnn, x, y, SimConfig(copies=1)), plain(small_cnn, x, y))


def test_sim_linear_model():
    w = np.zeros((4, 2))
    w[:, 1] = [0.5, -1.0, 2.0, 0.25]
    m = LinearModel(w, b=[0.0, 0.0])
    x = np.array([[0.2, 0.3, 0.1, 0.4]])
    g = sim_gradient(m, x, np.array([0]), SimConfig(copies=5))
    # for label 0 the gradient is p1 * w[:, 1]; scaling x only changes p1
    expect = np.mean([ad.loss_gradient(m, x / 2**i, np.array([0])) for i in range(5)], axis=0)
    assert np.allclose(g, expect, rtol=1e-14)
    assert np.all(np.sign(g) == np.sign(w[:, 1]))


def test_composed_identities(small_cnn, batch):
    x, y = batch
    est = compose(SimConfig(copies=1), DimConfig(probability=0.0), TimConfig(kernel_size=1))
    assert np.array_equal(est(small_cnn, x, y, example_rngs(0, range(8))), plain(small_cnn, x, y))
    assert np.array_equal(GradientEstimator()(small_cnn, x, y), plain(small_cnn, x, y))


def test_composed_stack_deterministic(small_cnn, batch):
    x, y = batch
    est = compose(SimConfig(copies=2), DimConfig(), TimConfig())
    a = est(small_cnn, x, y, example_rngs(3, range(8)))
    b = est(small_cnn, x, y, example_rngs(3, range(8)))
    assert np.array_equal(a, b)
    assert est.passes_per_query == 2


def test_composition_order(small_cnn, batch):
    # SIM outermost, DIM on each copy, TIM on the aggregate
    x, y = batch
    dim, sim, tim = DimConfig(probability=1.0), SimConfig(copies=3), TimConfig(kernel_size=5)
    est = GradientEstimator(AugmentConfig(dim=dim, tim=tim, sim=sim))
    got = est(small_cnn, x, y, example_rngs(9, range(8)))
    rngs = example_rngs(9, range(8))
    acc = sum(dim_gradient(small_cnn, x / 2.0**i, y, dim, rngs) for i in range(3)) / 3
    assert np.array_equal(got, tim_smooth(acc, gaussian_kernel(5, 5 / 3)))


def test_config_validation():
    with pytest.raises(ValueError):
        DimConfig(probability=1.5)
    with pytest.raises(ValueError):
        DimConfig(max_expand_ratio=1.0)
    with pytest.raises(ValueError):
        TimConfig(kernel_size=4)
    with pytest.raises(ValueError):
        SimConfig(copies=0)
    with pytest.raises(TypeError):
        compose("dim")


def test_dim_needs_generators(small_cnn, batch):
    with pytest.raises(ValueError):
        compose(DimConfig())(small_cnn, *batch)
