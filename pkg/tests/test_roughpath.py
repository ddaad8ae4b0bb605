"""Level-2 lifts, Levy areas and the dyadic moment report."""
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from kinbm import PathSample, RoughIncrement, chen_compose, chen_inverse, levy_area, lift_piecewise_linear
from kinbm.core import generators
from kinbm.roughpath import compose_all, ensemble_from_increments, moment_scaling_report, riemann_lift

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def path_of(points):
    points = np.asarray(points, dtype=float)
    return PathSample(np.arange(len(points), dtype=float), points)


paths = st.integers(2, 12).flatmap(
    lambda n: st.integers(1, 3).flatmap(lambda d: arrays(np.float64, (n, d), elements=finite))).map(path_of)


def test_l_shape_area_is_half():
    lp = lift_piecewise_linear(path_of([[0, 0], [1, 0], [1, 1]]))
    A = levy_area(lp.total())
    assert A[0, 1] == pytest.approx(0.5, abs=1e-15)
    assert A[1, 0] == pytest.approx(-0.5, abs=1e-15)


@pytest.mark.parametrize("orient, area", [(1, 1.0), (-1, -1.0)])
def test_unit_square_loop(orient, area):
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]], dtype=float)
    if orient < 0:
        pts = pts[::-1]
    tot = lift_piecewise_linear(path_of(pts)).total()
    np.testing.assert_allclose(tot.delta, 0.0, atol=1e-15)
    # the enclosed signed area, with a vanishing symmetric part since the loop closes
    assert levy_area(tot)[0, 1] == pytest.approx(area, abs=1e-14)
    np.testing.assert_allclose(tot.second + tot.second.T, 0.0, atol=1e-14)


@given(paths)
def test_lift_is_geometric(p):
    lp = lift_piecewise_linear(p)
    assert lp.total().symmetric_defect() < 1e-9 * (1 + np.abs(p.points).max() ** 2)
    np.testing.assert_allclose(lp.total().delta, p.points[-1] - p.points[0], atol=1e-12)


@given(paths, st.data())
def test_between_satisfies_chen(p, data):
    lp = lift_piecewise_linear(p)
    n = len(lp)
    i = data.draw(st.integers(0, n))
    j = data.draw(st.integers(i, n))
    k = data.draw(st.integers(j, n))
    lhs = lp.between(i, k)
    rhs = chen_compose(lp.between(i, j), lp.between(j, k))
    np.testing.assert_allclose(lhs.delta, rhs.delta, atol=1e-10)
    np.testing.assert_allclose(lhs.second, rhs.second, atol=1e-9)
    # and the area alone is additive up to the cross term
    cross = 0.5 * (np.outer(lp.between(i, j).delta, lp.between(j, k).delta)
                   - np.outer(lp.between(j, k).delta, lp.between(i, j).delta))
    np.testing.assert_allclose(levy_area(lhs), levy_area(lp.between(i, j)) + levy_area(lp.between(j, k)) + cross,
                               atol=1e-9)


@given(paths)
def test_cumulative_matches_cell_composition(p):
    lp = lift_piecewise_linear(p)
    comp = compose_all(lp.cell(k) for k in range(len(lp)))
    np.testing.assert_allclose(comp.second, lp.total().second, atol=1e-9)


@given(paths)
def test_time_reversal_inverts(p):
    fwd = lift_piecewise_linear(p).total()
    rev = lift_piecewise_linear(path_of(p.points[::-1])).total()
    inv = chen_inverse(fwd)
    np.testing.assert_allclose(rev.delta, inv.delta, atol=1e-10)
    np.testing.assert_allclose(rev.second, inv.second, atol=1e-9)


@given(paths, st.data())
def test_flip_and_permutation_equivariance(p, data):
    d = p.dim
    perm = np.array(data.draw(st.permutations(range(d))))
    signs = np.array(data.draw(st.lists(st.sampled_from([-1.0, 1.0]), min_size=d, max_size=d)))
    M = np.diag(signs)[perm]
    base = lift_piecewise_linear(p).total()
    moved = lift_piecewise_linear(path_of(p.points @ M.T)).total()
    np.testing.assert_allclose(moved.delta, M @ base.delta, atol=1e-10)
    np.testing.assert_allclose(moved.second, M @ base.second @ M.T, atol=1e-9)


@given(arrays(np.float64, (5, 2), elements=finite))
def test_levy_area_exactly_antisymmetric(pts):
    A = levy_area(lift_piecewise_linear(path_of(pts)).total())
    assert np.array_equal(A, -A.T)


def test_riemann_oracle_agrees():
    rng = np.random.default_rng(0)
    for d in (2, 3):
        pts = np.cumsum(rng.standard_normal((15, d)), axis=0)
        p = PathSample(np.sort(rng.uniform(0, 5, 15)) + np.arange(15), pts)
        exact = lift_piecewise_linear(p).total()
        ref = riemann_lift(p, refine=500)
        np.testing.assert_allclose(ref.delta, exact.delta, atol=1e-12)
        np.testing.assert_allclose(ref.second, exact.second, atol=1e-9)


def test_ensemble_from_increments_matches_lift():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((3, 24, 2)) * 0.1
    ens = ensemble_from_increments(w, 0.25, 4)
    for i in range(3):
        lp = lift_piecewise_linear(PathSample(0.25 * np.arange(25), np.vstack([0 * w[i, :1], np.cumsum(w[i], 0)])))
        r = ens.increment(1, 5)
        ref = lp.between(4, 20)
        np.testing.assert_allclose(r.delta[i], ref.delta, atol=1e-12)
        np.testing.assert_allclose(r.second[i], ref.second, atol=1e-12)
    with pytest.raises(ValueError):
        ensemble_from_increments(w, 0.25, 5)


def _brownian_ensemble(n, K, cell_steps, d=2, seed=7):
    h = 1.0 / K
    w = np.stack([g.standard_normal((K, d)) for g in generators(seed, n)]) * np.sqrt(h)
    return ensemble_from_increments(w, h, cell_steps)


def test_moment_report_flat_on_brownian_control():
    rep = moment_scaling_report({1.0: _brownian_ensemble(2000, 1024, 16)}, exponents=(2, 4), levels=range(1, 7))
    assert not rep["underpowered"]
    # Brownian increments are exactly self-similar, so every ratio sits at its scale-free value
    for key, a in (("level1", 2), ("level1", 4), ("level2", 2)):
        assert rep[key][a]["spread_all"] < 1.2
    # |X2|^4 is an eighth-order functional and the report takes a max over up to 64 windows
    assert rep["level2"][4]["spread_all"] < 2.0
    r = np.array(rep["level1"][2]["ratios"])
    assert np.all(np.abs(r - 2.0) < 0.2)  # E|B_t|^2 = d t


def test_moment_report_detects_ballistic_scaling():
    K, n = 1024, 4
    w = np.tile(np.array([1.0, 0.0]) / K, (n, K, 1))
    rep = moment_scaling_report({1.0: ensemble_from_increments(w, 1.0 / K, 16)}, exponents=(2,), levels=range(1, 7))
    assert rep["underpowered"]
    # |dX|^2 / dt = dt for a straight line: the spread over six dyadic levels is 2^5
    assert rep["level1"][2]["spread_all"] == pytest.approx(32.0, rel=1e-9)


def test_moment_report_rejects_bad_grids():
    ens = _brownian_ensemble(10, 96, 16)  # 6 cells do not split into 4 equal windows
    with pytest.raises(ValueError):
        moment_scaling_report({1.0: ens}, levels=range(1, 3))
    with pytest.raises(ValueError):
        moment_scaling_report({2.0: _brownian_ensemble(10, 64, 1)})  # horizon 1 != sigma^4


def test_segment_identity():
    r = RoughIncrement.segment(np.array([1.0, 2.0]))
    np.testing.assert_allclose(levy_area(r), 0.0)
    assert r.symmetric_defect() == 0.0
