"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeats 3] [--quick]

Both backends get identical inputs and random streams; the script checks that
they agree before reporting the best-of-``repeats`` wall time and the speed-up.
"""
import argparse
import time

import numpy as np

from kinbm import _backend, _fallback
from kinbm.core import generators
from kinbm.geometry import Frame, Hyperbolic2, Sphere2


def sphere_case(n, n_steps, thin=10, h=1e-3):
    a2 = np.array([1.0, 4.0, 9.0])

    def run(mod):
        rng = np.random.default_rng(0)
        v = rng.standard_normal((n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        dx, xx = np.zeros((n, 3)), np.zeros((n, 3, 3))
        vel = np.empty((n, -(-n_steps // thin), 3))
        mod.sphere_em(v, np.sqrt(a2), a2, float(a2.sum()), h, n_steps, generators(1, n, purpose=1), thin, dx, xx, vel)
        return v

    return f"sphere_em n={n} steps={n_steps}", run


def develop_case(model, q0, n, K, n_sub=4):
    w = np.random.default_rng(1).standard_normal((n, K, 2)) * (0.5 / np.sqrt(K))
    z0 = Frame.orthonormal_at(model, np.array(q0))
    switch = getattr(model, "switch_radius", 2.0)

    def run(mod):
        q = np.tile(z0.q, (n, 1))
        e = np.tile(z0.e, (n, 1, 1))
        chart = np.zeros(n, dtype=np.int64)
        mod.develop_conformal2d(model._kernel_kind, q, e, chart, w, n_sub, 1e-10, switch)
        return q

    return f"develop {type(model).__name__} n={n} segments={K}", run


def best_time(fn, mod, repeats):
    out, best = None, np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(mod)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="small sizes, for a smoke run")
    args = ap.parse_args(argv)
    if _backend.compiled is None:
        raise SystemExit("compiled extension not built (or KINBM_PURE_PYTHON is set); nothing to compare")
    s = 0.1 if args.quick else 1.0
    cases = [sphere_case(int(200 * s), 2000), sphere_case(int(2000 * s), 500),
             develop_case(Sphere2(), [0.0, 0.0], int(500 * s), 400),
             develop_case(Hyperbolic2(), [0.0, 1.0], int(500 * s), 400)]
    print(f"{'case':44s} {'cython s':>10s} {'numpy s':>10s} {'speed-up':>9s}")
    for name, fn in cases:
        tc, oc = best_time(fn, _backend.compiled, args.repeats)
        tp, op = best_time(fn, _fallback, args.repeats)
        np.testing.assert_allclose(oc, op, atol=1e-10)
        print(f"{name:44s} {tc:10.4f} {tp:10.4f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
