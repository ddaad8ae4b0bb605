import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from kinbm.core import (CovarianceSpec, PathSample, RandomSource, RoughIncrement, chen_compose, chen_inverse,
                        generators, rescale_increment, rescale_to_sigma)
from kinbm.roughpath import lift_piecewise_linear, riemann_lift

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def increments(d=3):
    return st.tuples(arrays(float, d, elements=finite), arrays(float, (d, d), elements=finite)).map(
        lambda t: RoughIncrement(*t))


def _close(a, b, rel=1e-12):
    scale = max(1.0, np.abs(a.second).max(), np.abs(b.second).max(), np.abs(a.delta).max())
    return (np.abs(a.delta - b.delta).max() <= rel * scale and np.abs(a.second - b.second).max() <= rel * scale)


# -- CovarianceSpec -----------------------------------------------------------

def test_covariance_spec_matrices():
    spec = CovarianceSpec.from_sigma_diag([1, 4, 9])
    np.testing.assert_allclose(spec.alphas, [1, 2, 3])
    np.testing.assert_allclose(spec.sigma, np.diag([1, 4, 9]))
    np.testing.assert_allclose(spec.sqrt_matrix, np.diag([1, 2, 3]))
    assert spec.dim == 3 and not spec.is_isotropic
    assert CovarianceSpec.isotropic(4, 2.0).is_isotropic


@pytest.mark.parametrize("alphas", [[1.0], [1.0, 0.0], [1.0, -2.0], [1.0, np.inf], [np.nan, 1.0]])
def test_covariance_spec_rejects_invalid(alphas):
    with pytest.raises(ValueError):
        CovarianceSpec(np.array(alphas))


def test_covariance_spec_is_immutable():
    spec = CovarianceSpec.from_sigma_diag([1, 4])
    with pytest.raises(ValueError):
        spec.alphas[0] = 5.0


# -- Chen composition -----------------------------------------------------------

def test_identity_is_neutral():
    b = RoughIncrement(np.array([1.0, 2.0]), np.array([[0.3, 1.0], [-1.0, 2.0]]))
    e = RoughIncrement.identity(2)
    assert _close(chen_compose(e, b), b) and _close(chen_compose(b, e), b)


def test_l_shaped_pair_of_segments():
    r = chen_compose(RoughIncrement.segment([1.0, 0.0]), RoughIncrement.segment([0.0, 1.0]))
    np.testing.assert_allclose(r.delta, [1, 1])
    np.testing.assert_allclose(r.second, [[0.5, 1.0], [0.0, 0.5]], atol=1e-15)
    # cross-check against the brute-force left-Riemann oracle
    path = PathSample(np.array([0.0, 1.0, 2.0]), np.array([[0, 0], [1, 0], [1, 1]], dtype=float))
    np.testing.assert_allclose(riemann_lift(path, 500).second, r.second, atol=1e-12)


def test_doubling_a_segment():
    u, t = np.array([0.6, -0.8]), 1.7
    a = RoughIncrement.segment(t * u)
    r = a @ a
    np.testing.assert_allclose(r.delta, 2 * t * u)
    np.testing.assert_allclose(r.second, 2 * t * t * np.outer(u, u), atol=1e-14)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        chen_compose(RoughIncrement.identity(2), RoughIncrement.identity(3))
    with pytest.raises(ValueError):
        RoughIncrement(np.zeros(2), np.zeros((3, 3)))


@given(increments(), increments(), increments())
def test_chen_associativity(a, b, c):
    assert _close((a @ b) @ c, a @ (b @ c))


@given(increments())
def test_chen_inverse(a):
    e = RoughIncrement.identity(3)
    assert _close(a @ chen_inverse(a), e, rel=1e-12) and _close(chen_inverse(a) @ a, e, rel=1e-12)


@given(st.lists(arrays(float, 2, elements=finite), min_size=1, max_size=8))
def test_segment_products_are_geometric(ws):
    acc = RoughIncrement.identity(2)
    for w in ws:
        acc = acc @ RoughIncrement.segment(w)
    scale = max(1.0, float(np.abs(acc.delta).max()) ** 2)
    assert acc.symmetric_defect() <= 1e-12 * scale


def test_batched_increments():
    w = np.random.default_rng(1).standard_normal((5, 3))
    a, b = RoughIncrement.segment(w), RoughIncrement.segment(w[::-1])
    r = a @ b
    for i in range(5):
        ri = RoughIncrement.segment(w[i]) @ RoughIncrement.segment(w[4 - i])
        np.testing.assert_allclose(r.second[i], ri.second)


def test_rescale_increment_scaling():
    r = RoughIncrement.segment(np.array([2.0, 0.0]))
    s = rescale_increment(r, 2.0)
    np.testing.assert_allclose(s.delta, [0.5, 0])
    np.testing.assert_allclose(s.second, r.second / 16)


# -- RandomSource -----------------------------------------------------------------

def test_same_key_same_stream():
    a = RandomSource(7, 3).generator.standard_normal(100)
    b = RandomSource(7, 3).generator.standard_normal(100)
    np.testing.assert_array_equal(a, b)
    src = RandomSource(7, 3)
    first = src.generator.standard_normal(5)
    np.testing.assert_array_equal(src.fresh().generator.standard_normal(5), first)


def test_distinct_streams_are_uncorrelated():
    x = RandomSource(7, 0).generator.standard_normal(200_000)
    y = RandomSource(7, 1).generator.standard_normal(200_000)
    z = RandomSource(8, 0).generator.standard_normal(200_000)
    assert not np.array_equal(x[:10], y[:10])
    for u in (y, z):
        assert abs(np.corrcoef(x, u)[0, 1]) < 4 / np.sqrt(len(x))


def test_trajectory_streams_do_not_collide_across_purposes():
    ids = {RandomSource.for_trajectory(1, t, p).stream for t in range(50) for p in range(4)}
    assert len(ids) == 200
    with pytest.raises(ValueError):
        RandomSource.for_trajectory(1, 2 ** 40)
    with pytest.raises(ValueError):
        RandomSource(-1)


def test_generators_offset():
    g = generators(3, 4, purpose=2, start=10)
    h = RandomSource.for_trajectory(3, 12, 2).generator
    np.testing.assert_array_equal(g[2].standard_normal(3), h.standard_normal(3))


# -- PathSample and rescaling -----------------------------------------------------------

def test_path_sample_validation():
    with pytest.raises(ValueError):
        PathSample(np.array([0.0, 0.0]), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        PathSample(np.array([0.0, 1.0]), np.zeros((3, 2)))


def test_from_velocities_is_left_riemann():
    v = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    p = PathSample.from_velocities(v, 0.5)
    np.testing.assert_allclose(p.points, [[0, 0], [0.5, 0], [0.5, 0.5], [0, 0.5]])
    np.testing.assert_allclose(p(0.75), [0.5, 0.25])


def test_rescale_identity_at_unit_sigma():
    g = np.random.default_rng(0)
    p = PathSample(np.linspace(0, 1, 11), np.cumsum(g.standard_normal((11, 2)), 0))
    r = rescale_to_sigma(p, 1.0)
    np.testing.assert_allclose(r.points, p.points - p.points[0], atol=1e-14)


def test_rescale_linear_path():
    u = np.array([0.6, 0.8])
    t = np.linspace(0, 16, 17)
    p = PathSample(t, t[:, None] * u)
    r = rescale_to_sigma(p, 2.0, horizon=1.0, n_points=5)
    np.testing.assert_allclose(r.points, 4 * r.times[:, None] * u, atol=1e-13)


def test_rescale_constant_path():
    p = PathSample(np.linspace(0, 5, 6), np.ones((6, 3)))
    r = rescale_to_sigma(p, 1.3)
    assert np.all(r.points == 0)


def test_rescale_needs_enough_horizon():
    p = PathSample(np.linspace(0, 10, 11), np.zeros((11, 2)))
    with pytest.raises(ValueError):
        rescale_to_sigma(p, 2.0, horizon=1.0)


def test_lift_of_sample_is_deterministic():
    a = lift_piecewise_linear(PathSample(np.arange(4.0), np.arange(12.0).reshape(4, 3) ** 1.5)).total()
    b = lift_piecewise_linear(PathSample(np.arange(4.0), np.arange(12.0).reshape(4, 3) ** 1.5)).total()
    np.testing.assert_array_equal(a.second, b.second)
