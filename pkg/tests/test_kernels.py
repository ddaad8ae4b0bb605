"""Compiled kernels agree with the numpy fallback."""
import numpy as np
import pytest

from kinbm import _backend, _fallback
from kinbm.core import generators
from kinbm.geometry import Sphere2

compiled = _backend.compiled
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def _sphere_inputs(n=5, d=3, seed=3):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    alphas = np.sqrt(np.array([1.0, 4.0, 9.0]))[:d]
    return v, alphas, alphas ** 2, float((alphas ** 2).sum())


def _run_sphere(mod, n_steps=400, thin=7, h=1e-3):
    v, a, a2, tr = _sphere_inputs()
    n, d = v.shape
    dx, xx = np.zeros((n, d)), np.zeros((n, d, d))
    vel = np.empty((n, -(-n_steps // thin), d))
    bad = mod.sphere_em(v, a, a2, tr, h, n_steps, generators(11, n, purpose=1), thin, dx, xx, vel)
    return bad, v, dx, xx, vel


@needs_compiled
def test_sphere_em_matches_fallback():
    got = _run_sphere(compiled)
    ref = _run_sphere(_fallback)
    assert got[0] == ref[0] == -1
    for g, r in zip(got[1:], ref[1:]):
        np.testing.assert_allclose(g, r, rtol=0, atol=1e-12)


@needs_compiled
def test_sphere_em_reports_bad_trajectory_identically():
    v, a, a2, tr = _sphere_inputs()
    res = []
    for mod in (compiled, _fallback):
        vv = v.copy()
        vv[2] = np.nan  # a non-finite state must be reported, not propagated
        n, d = vv.shape
        res.append(mod.sphere_em(vv, a, a2, tr, 1e-3, 5, generators(1, n), 1, np.zeros((n, d)),
                                 np.zeros((n, d, d))))
    assert res[0] == res[1] == 2


def _drivers(kind, n=4, K=30, seed=5):
    rng = np.random.default_rng(seed)
    w = 0.3 * rng.standard_normal((n, K, 2))
    q = 0.2 * rng.standard_normal((n, 2))
    if kind == 2:
        q[:, 1] = 1.0 + np.abs(q[:, 1])
        w *= 0.3
    lam = {0: np.ones(n), 1: 2 / (1 + (q * q).sum(1)), 2: 1 / q[:, 1]}[kind]
    e = np.eye(2)[None] / lam[:, None, None]
    return np.ascontiguousarray(q), np.ascontiguousarray(e), w


@needs_compiled
@pytest.mark.parametrize("kind", [0, 1, 2])
def test_develop_conformal2d_matches_fallback(kind):
    q, e, w = _drivers(kind)
    out = []
    for mod in (compiled, _fallback):
        qq, ee, ch = q.copy(), e.copy(), np.zeros(len(q), dtype=np.int64)
        status, mdef = mod.develop_conformal2d(kind, qq, ee, ch, w, 4, 1e-10, 2.0)
        out.append((status, mdef, qq, ee, ch))
    (s1, d1, q1, e1, c1), (s2, d2, q2, e2, c2) = out
    assert s1 == s2 == -1
    np.testing.assert_array_equal(c1, c2)
    np.testing.assert_allclose(q1, q2, atol=1e-12)
    np.testing.assert_allclose(e1, e2, atol=1e-12)
    assert abs(d1 - d2) < 1e-12


@needs_compiled
def test_sphere_chart_switch_exercised_identically():
    q, e, w = _drivers(1, K=200)
    w *= 3.0  # long drivers cross the equator, so both charts are visited
    embedded, charts = [], []
    for mod in (compiled, _fallback):
        qq, ee, ch = q.copy(), e.copy(), np.zeros(len(q), dtype=np.int64)
        mod.develop_conformal2d(1, qq, ee, ch, w, 4, 1e-10, 2.0)
        embedded.append(Sphere2().embed(qq, ch))
        charts.append(ch)
    np.testing.assert_array_equal(charts[0], charts[1])
    np.testing.assert_allclose(embedded[0], embedded[1], atol=1e-10)


def test_backend_name_consistent():
    assert _backend.NAME == ("cython" if _backend.COMPILED else "numpy")
    assert _backend.kernels is (compiled if compiled is not None else _fallback)
