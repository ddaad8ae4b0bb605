"""Estimators and limit-law diagnostics on models with known answers."""
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from kinbm import (ConstantVelocity, CovarianceSpec, MarkovWalk, OrnsteinUhlenbeck, RandomFlight, SphereDiffusion,
                   Spin2D, WalkInterp, sample_stationary, stationary_density)
from kinbm.core import generators
from kinbm.healpix import SpherePartition
from kinbm.roughpath import ensemble_from_increments
from kinbm.stats import (EstimationError, autocovariance, autocovariance_from_samples, estimate_gamma_autocov,
                         estimate_gamma_ensemble, estimate_mixing_time, gamma_from_endpoints, gaussianity_check,
                         increment_independence_check, levy_area_drift, levy_drift_estimate, moment_bound_check,
                         truncation_lag, tv_binned, tv_distance_to_density)

OU = OrnsteinUhlenbeck(CovarianceSpec.from_sigma_diag([1.0, 4.0, 9.0]))

# (model, horizon, max_lag, spacing, h): lag windows long enough for the truncation rule
ZOO = {
    # the mixing-time fit reports the slowest of three coordinates; per-coordinate noise is
    # about 2% (ou, T=3.2e4) and 2.5% (flight, T=3.2e4), so the flight gets the longer run
    "ou": (OU, 32000, 20.0, 2e-2, 1e-2),
    "random_flight": (RandomFlight(3), 100000, 20.0, 2e-2, 1e-2),
    "spin2d": (Spin2D(1.0), 8000, 20.0, 2e-2, 1e-2),
    "walk_interp": (WalkInterp(2), 4000, 10.0, 2e-2, 1e-2),
    "markov_walk": (MarkovWalk.lazy_axis(3, 0.5), 20000, 20.0, 5e-2, 1e-2),
    "sphere": (SphereDiffusion(CovarianceSpec.isotropic(3)), 5000, 20.0, 2e-2, 1e-3),
}
_AC = {}


def zoo_autocov(name):
    if name not in _AC:
        m, T, lag, sp, h = ZOO[name]
        _AC[name] = autocovariance(m, T, lag, seed=5, h=h, spacing=sp)
    return ZOO[name][0], _AC[name]


@pytest.mark.parametrize("name", sorted(ZOO))
def test_autocovariance_matches_closed_form(name):
    model, ac = zoo_autocov(name)
    exact = model.exact_autocovariance(ac.lags)
    z = np.abs(ac.values - exact) / ac.se
    # several hundred correlated lags per coordinate: allow the max of a few hundred normals
    assert z.max() < 4.5
    assert np.abs(ac.values[0] - exact[0]).max() < 0.05 * exact[0].max()


@pytest.mark.parametrize("name", sorted(ZOO))
def test_gamma_autocov_matches_closed_form(name):
    model, ac = zoo_autocov(name)
    g = estimate_gamma_autocov(ac, tail=model.exponential_tail)
    z = (g.gamma - model.exact_gamma()) / g.se
    assert np.abs(z).max() < 3.5, (g.gamma, g.se, model.exact_gamma())


def test_gamma_from_endpoints_on_gaussian():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((20000, 3)) * np.sqrt([1.0, 4.0, 9.0])
    g = gamma_from_endpoints(x)
    assert np.all(np.abs(g.gamma - [1, 4, 9]) < 4 * g.se)
    # for Gaussian data the CLT error of a variance is sqrt(2/n) var
    np.testing.assert_allclose(g.se, np.sqrt(2 / 20000) * np.array([1, 4, 9]), rtol=0.05)


def test_gamma_ensemble_ou():
    est = estimate_gamma_ensemble(OU, sigma=10 ** 0.5, n_traj=2000, seed=3, h=1e-2)
    # the finite-horizon variance is Sigma (1 - (1 - e^{-T}) / T) at T = sigma^4
    target = np.array([1.0, 4.0, 9.0]) * (1 - (1 - np.exp(-10.0)) / 10.0)
    assert np.all(np.abs(est.gamma - target) < 4 * est.se)


@pytest.mark.parametrize("name, method, tau, rel", [
    ("ou", "log", 1.0, 0.05),
    ("random_flight", "log", 1.0, 0.05),
    ("spin2d", "envelope", 2.0, 0.10),
])
def test_mixing_time(name, method, tau, rel):
    _, ac = zoo_autocov(name)
    fit = estimate_mixing_time(ac, method=method)
    assert fit.tau == pytest.approx(tau, rel=rel)
    assert fit.r2 > 0.9


def test_truncation_lag_waits_out_oscillation():
    lags = np.linspace(0, 40, 801)
    vals = np.cos(2 * lags) * np.exp(-lags / 4)
    se = np.full_like(vals, 0.01)
    L = truncation_lag(vals, se)
    # the first zero of cos is at pi/4; the look-ahead waits until the peaks stay below 3 SE,
    # i.e. until within half a period of where the envelope crosses 0.03
    assert lags[L] > 4 * np.log(1 / 0.03) - np.pi / 2
    assert truncation_lag(np.ones(50), np.full(50, 0.01)) is None


def test_autocov_rejects_short_horizon():
    with pytest.raises(EstimationError):
        autocovariance_from_samples(np.zeros((100, 2)), 0.1, 5.0)


def test_estimators_deterministic():
    a = autocovariance(OU, 2000, 10.0, seed=9, h=1e-2, spacing=2e-2, n_batches=20)
    b = autocovariance(OU, 2000, 10.0, seed=9, h=1e-2, spacing=2e-2, n_batches=20)
    np.testing.assert_array_equal(a.matrix, b.matrix)
    ga, gb = estimate_gamma_autocov(a), estimate_gamma_autocov(b)
    np.testing.assert_array_equal(ga.gamma, gb.gamma)
    np.testing.assert_array_equal(ga.se, gb.se)


def test_flip_symmetric_models_have_null_cross_covariances():
    _, ac = zoo_autocov("random_flight")
    off = ac.matrix.copy()
    off[:, np.arange(3), np.arange(3)] = 0
    se = ac.batch_matrix.std(axis=0, ddof=1) / np.sqrt(ac.n_batches)
    iu = ~np.eye(3, dtype=bool)
    assert (np.abs(off[:, iu]) / se[:, iu]).max() < 5.0
    # while spin2d rotates, so its cross-covariance is non-zero and equals the closed form
    model, ac = zoo_autocov("spin2d")
    cross = ac.matrix[:, 0, 1]
    assert np.abs(cross).max() > 0.1
    np.testing.assert_allclose(cross, model.exact_cross_covariance(ac.lags), atol=0.04)


# --- TV distance -------------------------------------------------------------

probs = st.integers(2, 30).flatmap(
    lambda n: arrays(np.float64, n, elements=st.floats(0, 1)).filter(lambda a: a.sum() > 1e-6).map(lambda a: a / a.sum()))


@given(probs, st.data())
def test_tv_is_a_metric(p, data):
    n = len(p)
    q = data.draw(arrays(np.float64, n, elements=st.floats(0, 1)).filter(lambda a: a.sum() > 1e-6))
    r = data.draw(arrays(np.float64, n, elements=st.floats(0, 1)).filter(lambda a: a.sum() > 1e-6))
    q, r = q / q.sum(), r / r.sum()
    assert tv_binned(p, p) == 0.0
    assert 0.0 <= tv_binned(p, q) <= 1.0 + 1e-12
    assert tv_binned(p, q) == pytest.approx(tv_binned(q, p))
    assert tv_binned(p, r) <= tv_binned(p, q) + tv_binned(q, r) + 1e-12


def test_tv_small_for_exact_sampler_and_large_against_uniform():
    spec = CovarianceSpec.from_sigma_diag([1.0, 4.0, 9.0])
    rng = np.random.default_rng(2)
    x = sample_stationary(spec, rng, size=400000)
    dens = lambda th: stationary_density(th, spec)
    assert tv_distance_to_density(x, dens) <= 0.02
    u = rng.standard_normal((400000, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    assert tv_distance_to_density(u, dens) >= 0.1
    assert tv_distance_to_density(u, lambda th: np.ones(len(th))) <= 0.02


def test_tv_partition_masses_are_probabilities():
    spec = CovarianceSpec.from_sigma_diag([1.0, 4.0, 9.0])
    for part in (SpherePartition(3), SpherePartition(2)):
        m = part.masses(lambda th: np.ones(len(th)))
        np.testing.assert_allclose(m, 1.0 / part.nbins)
    m = SpherePartition(3).masses(lambda th: stationary_density(th, spec))
    assert m.sum() == pytest.approx(1.0) and m.min() > 0


# --- Gaussian limit and independence ---------------------------------------------

def test_gaussianity_check():
    rng = np.random.default_rng(4)
    good = gaussianity_check(rng.standard_normal((20000, 3)) @ np.diag([1, 2, 3]))
    assert good["skew_ok"] and good["kurtosis_ok"] and good["joint_ok"]
    bad = gaussianity_check(rng.exponential(size=(20000, 3)))
    assert not bad["skew_ok"] and not bad["kurtosis_ok"]
    flat = gaussianity_check(rng.uniform(-1, 1, (20000, 3)))
    assert not flat["kurtosis_ok"] and not flat["joint_ok"]


def _brownian(n=4000, K=256, cell_steps=4, seed=1):
    w = np.stack([g.standard_normal((K, 2)) for g in generators(seed, n)]) / np.sqrt(K)
    return ensemble_from_increments(w, 1.0 / K, cell_steps)


def test_independence_check_passes_on_brownian_control():
    rep = increment_independence_check(_brownian(), 1.0, [((0.0, 0.25), (0.25, 0.5)), ((0.0, 0.5), (0.5, 1.0))])
    assert rep["passed"]


def test_independence_check_detects_ballistic_dependence():
    from kinbm import simulate_ensemble
    # at sigma = 1 the flight velocity persists over the unit mixing time, so adjacent increments correlate
    ens = simulate_ensemble(RandomFlight(2), 4000, 1e-2, 20, 5, seed=2)
    rep = increment_independence_check(ens, 1.0, [((0.0, 0.1), (0.1, 0.2))])
    assert not rep["passed"] and rep["max_z"] > 10
    with pytest.raises(ValueError):
        increment_independence_check(ens, 1.0, [((0.0, 0.2), (0.1, 0.3))])


def test_levy_drift_spin_matches_quadrature():
    m = Spin2D(1.0)
    rep = levy_drift_estimate(m, sigma=10 ** 0.25, horizon=1.0, n_traj=3000, seed=6, h=1e-2)
    exact = m.exact_levy_drift(10.0)
    assert abs(rep["mean"][0, 1] - exact) < 4 * rep["se"][0, 1]
    assert rep["mean"][0, 1] == pytest.approx(-rep["mean"][1, 0])


def test_levy_drift_vanishes_without_rotation():
    ens = _brownian()
    rep = levy_area_drift(ens, 1.0)
    assert abs(rep["mean"][0, 1]) < 4 * rep["se"][0, 1]


# --- moment bounds ----------------------------------------------------------

def test_moment_bound_stable_for_mixing_model():
    rep = moment_bound_check(RandomFlight(2), 2, [8.0, 16.0, 32.0, 64.0], n_traj=2000, seed=8, h=1e-2)
    assert not rep["growth_flag"]
    # x_T / sqrt(T) -> N(0, gamma I) with gamma = 1 in d = 2, so E|x_T|^4 / T^2 -> d (d + 2) = 8
    assert rep["ratio"][-1] == pytest.approx(8.0 * (1 - 1 / 64) ** 2, rel=0.1)


def test_moment_bound_flags_ballistic_control():
    rep = moment_bound_check(ConstantVelocity([1.0, 0.0]), 2, [1.0, 2.0, 4.0, 8.0], n_traj=4, seed=0, h=1e-2)
    assert rep["growth_flag"]
    assert rep["log_slope_upper"] == pytest.approx(2.0, abs=1e-6)


def test_moment_bound_rejects_non_multiples():
    with pytest.raises(ValueError):
        moment_bound_check(OU, 1, [1.0, 1.5], n_traj=2, seed=0)
