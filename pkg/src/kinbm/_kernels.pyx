# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Two kernels live here: the projected Euler-Maruyama stepper for the sphere
velocity (with on-the-fly level-2 accumulation of the integrated path) and
the RK4 Cartan development for the conformally flat 2-d built-in manifolds.
``kinbm._fallback`` implements the same contracts in numpy; the two must
agree to rounding, and the sphere stepper consumes exactly the same normal
variates as ``Generator.standard_normal``.
"""
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport sqrt, isfinite, fabs
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal

import numpy as np

DEF MAXD = 32

cdef bitgen_t* _bitgen(object generator) except NULL:
    capsule = generator.bit_generator.capsule
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


def sphere_em(double[:, ::1] v, double[::1] a, double[::1] a2, double tr,
              double h, Py_ssize_t n_steps, list generators, Py_ssize_t thin,
              double[:, ::1] dx, double[:, :, ::1] xx, vel=None):
    """Advance ``v`` (n, d) in place by ``n_steps`` projected EM steps.

    ``dx``/``xx`` receive the level-2 lift of the piecewise-linear path with
    segment increments ``h * v_k``. If ``vel`` is given, it receives the
    velocity before every ``thin``-th step. Returns -1, or the index of the
    first trajectory whose state became non-finite.
    """
    cdef Py_ssize_t n = v.shape[0], d = v.shape[1]
    cdef Py_ssize_t i, k, j, p
    cdef double sqrt_h = sqrt(h)
    cdef double q, s, nrm
    cdef double dW[MAXD]
    cdef double vn[MAXD]
    cdef double S[MAXD]
    cdef double w[MAXD]
    cdef bitgen_t* bg
    cdef double[:, :, ::1] vout
    cdef bint record = vel is not None
    cdef Py_ssize_t bad = -1
    if d > MAXD:
        raise ValueError("dimension too large for the compiled kernel")
    if len(generators) != n:
        raise ValueError("one generator per trajectory is required")
    if record:
        vout = vel
    for i in range(n):
        bg = _bitgen(generators[i])
        for j in range(d):
            S[j] = 0.0
            dx[i, j] = 0.0
            for p in range(d):
                xx[i, j, p] = 0.0
        with nogil:
            for k in range(n_steps):
                if record and k % thin == 0:
                    for j in range(d):
                        vout[i, k // thin, j] = v[i, j]
                for j in range(d):
                    dW[j] = sqrt_h * random_standard_normal(bg)
                q = 0.0
                s = 0.0
                for j in range(d):
                    q = q + a2[j] * v[i, j] * v[i, j]
                    s = s + a[j] * v[i, j] * dW[j]
                for j in range(d):
                    w[j] = h * v[i, j]
                for j in range(d):
                    for p in range(d):
                        xx[i, j, p] += S[j] * w[p] + 0.5 * w[j] * w[p]
                for j in range(d):
                    S[j] += w[j]
                for j in range(d):
                    vn[j] = v[i, j] + (-0.5 * v[i, j] * ((a2[j] + tr) - 2.0 * q)) * h \
                        + (a[j] * dW[j] - v[i, j] * s)
                nrm = 0.0
                for j in range(d):
                    nrm = nrm + vn[j] * vn[j]
                nrm = sqrt(nrm)
                if not isfinite(nrm) or nrm == 0.0:
                    bad = i
                    break
                for j in range(d):
                    v[i, j] = vn[j] / nrm
        for j in range(d):
            dx[i, j] = S[j]
        if bad >= 0:
            return bad
    return -1


cdef inline void _grad_phi(int kind, double x, double y, double* gx, double* gy) noexcept nogil:
    cdef double r2
    if kind == 1:
        r2 = x * x + y * y
        gx[0] = -2.0 * x / (1.0 + r2)
        gy[0] = -2.0 * y / (1.0 + r2)
    elif kind == 2:
        gx[0] = 0.0
        gy[0] = -1.0 / y
    else:
        gx[0] = 0.0
        gy[0] = 0.0


cdef inline double _lambda2(int kind, double x, double y) noexcept nogil:
    cdef double r2
    if kind == 1:
        r2 = x * x + y * y
        return 4.0 / ((1.0 + r2) * (1.0 + r2))
    elif kind == 2:
        return 1.0 / (y * y)
    return 1.0


cdef inline void _hlift(int kind, double* z, double d0, double d1, double* out) noexcept nogil:
    # z = (q0, q1, e00, e01, e10, e11), e[k][l] = z[2 + 2k + l]
    cdef double gx, gy, a0, a1, b0, b1, ga, gb, ab
    cdef int l
    _grad_phi(kind, z[0], z[1], &gx, &gy)
    a0 = z[2] * d0 + z[3] * d1
    a1 = z[4] * d0 + z[5] * d1
    out[0] = a0
    out[1] = a1
    ga = gx * a0 + gy * a1
    for l in range(2):
        b0 = z[2 + l]
        b1 = z[4 + l]
        gb = gx * b0 + gy * b1
        ab = a0 * b0 + a1 * b1
        out[2 + l] = -(a0 * gb + b0 * ga - ab * gx)
        out[4 + l] = -(a1 * gb + b1 * ga - ab * gy)


cdef inline double _defect(int kind, double* z) noexcept nogil:
    cdef double lam2 = _lambda2(kind, z[0], z[1])
    cdef double g00 = lam2 * (z[2] * z[2] + z[4] * z[4]) - 1.0
    cdef double g11 = lam2 * (z[3] * z[3] + z[5] * z[5]) - 1.0
    cdef double g01 = lam2 * (z[2] * z[3] + z[4] * z[5])
    cdef double m = fabs(g00)
    if fabs(g11) > m:
        m = fabs(g11)
    if fabs(g01) > m:
        m = fabs(g01)
    return m


cdef inline void _gram_schmidt(int kind, double* z) noexcept nogil:
    cdef double lam2 = _lambda2(kind, z[0], z[1])
    cdef double n0 = sqrt(lam2 * (z[2] * z[2] + z[4] * z[4]))
    z[2] /= n0
    z[4] /= n0
    cdef double c = lam2 * (z[2] * z[3] + z[4] * z[5])
    z[3] -= c * z[2]
    z[5] -= c * z[4]
    cdef double n1 = sqrt(lam2 * (z[3] * z[3] + z[5] * z[5]))
    z[3] /= n1
    z[5] /= n1


cdef inline void _invert_chart(double* z) noexcept nogil:
    # q -> q / |q|^2, frame pushed forward by the Jacobian (|q|^2 I - 2 q q^T) / |q|^4
    cdef double x = z[0], y = z[1]
    cdef double r2 = x * x + y * y
    cdef double r4 = r2 * r2
    cdef double j00 = (r2 - 2.0 * x * x) / r4
    cdef double j01 = -2.0 * x * y / r4
    cdef double j11 = (r2 - 2.0 * y * y) / r4
    cdef double e00 = z[2], e01 = z[3], e10 = z[4], e11 = z[5]
    z[0] = x / r2
    z[1] = y / r2
    z[2] = j00 * e00 + j01 * e10
    z[3] = j00 * e01 + j01 * e11
    z[4] = j01 * e00 + j11 * e10
    z[5] = j01 * e01 + j11 * e11


def develop_conformal2d(int kind, double[:, ::1] q, double[:, :, ::1] e,
                        long[::1] chart, double[:, :, ::1] w, Py_ssize_t n_sub,
                        double reorth_tol, double switch_radius):
    """RK4 development of piecewise-linear drivers on a 2-d conformal model.

    ``kind``: 0 euclidean, 1 stereographic sphere (two-chart atlas, switches
    when ``|q| > switch_radius``), 2 upper half-plane. ``w`` holds the (n, K, 2)
    segment increments; each segment is integrated with ``n_sub`` RK4 steps.
    State arrays are updated in place. Returns ``(status, max_defect)`` where
    status is -1 or the index of the first trajectory that left the chart.
    """
    cdef Py_ssize_t n = q.shape[0], K = w.shape[1]
    cdef Py_ssize_t i, k, s, c
    cdef double z[6]
    cdef double zt[6]
    cdef double k1[6]
    cdef double k2[6]
    cdef double k3[6]
    cdef double k4[6]
    cdef double d0, d1, dft, max_defect = 0.0
    cdef double sw2 = switch_radius * switch_radius
    cdef long status = -1
    with nogil:
        for i in range(n):
            z[0] = q[i, 0]
            z[1] = q[i, 1]
            z[2] = e[i, 0, 0]
            z[3] = e[i, 0, 1]
            z[4] = e[i, 1, 0]
            z[5] = e[i, 1, 1]
            for k in range(K):
                d0 = w[i, k, 0] / n_sub
                d1 = w[i, k, 1] / n_sub
                for s in range(n_sub):
                    _hlift(kind, z, d0, d1, k1)
                    for c in range(6):
                        zt[c] = z[c] + 0.5 * k1[c]
                    _hlift(kind, zt, d0, d1, k2)
                    for c in range(6):
                        zt[c] = z[c] + 0.5 * k2[c]
                    _hlift(kind, zt, d0, d1, k3)
                    for c in range(6):
                        zt[c] = z[c] + k3[c]
                    _hlift(kind, zt, d0, d1, k4)
                    for c in range(6):
                        z[c] = z[c] + (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]) / 6.0
                    if kind == 1 and z[0] * z[0] + z[1] * z[1] > sw2:
                        _invert_chart(z)
                        chart[i] = 1 - chart[i]
                    if kind == 2 and not (z[1] > 0.0):
                        status = i
                        break
                    if not (isfinite(z[0]) and isfinite(z[1])):
                        status = i
                        break
                    dft = _defect(kind, z)
                    if dft > max_defect:
                        max_defect = dft
                    if dft > reorth_tol:
                        _gram_schmidt(kind, z)
                if status >= 0:
                    break
            q[i, 0] = z[0]
            q[i, 1] = z[1]
            e[i, 0, 0] = z[2]
            e[i, 0, 1] = z[3]
            e[i, 1, 0] = z[4]
            e[i, 1, 1] = z[5]
            if status >= 0:
                break
    return status, max_defect
