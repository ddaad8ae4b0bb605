"""Pure numpy implementations of the compiled kernels.

Same signatures and in-place semantics as ``kinbm._kernels``. The sphere
stepper draws its normals per trajectory in the same order as the compiled
loop, so both produce the same trajectories up to rounding of the level-2
accumulation (which is reordered here into one einsum per call).
"""
import numpy as np

from .core import _signature_into_rows as _signature_into


def sphere_em(v, a, a2, tr, h, n_steps, generators, thin, dx, xx, vel=None):
    n, d = v.shape
    if len(generators) != n:
        raise ValueError("one generator per trajectory is required")
    sqrt_h = np.sqrt(h)
    noise = np.empty((n, n_steps, d))
    for i, g in enumerate(generators):
        noise[i] = g.standard_normal((n_steps, d))
    noise *= sqrt_h
    w = np.empty((n, n_steps, d))
    x = v.copy()
    bad = -1
    for k in range(n_steps):
        w[:, k] = h * x
        dW = noise[:, k]
        q = np.zeros(n)
        s = np.zeros(n)
        for j in range(d):
            q = q + a2[j] * x[:, j] * x[:, j]
            s = s + a[j] * x[:, j] * dW[:, j]
        xn = x + (-0.5 * x * ((a2 + tr) - 2.0 * q[:, None])) * h + (a * dW - x * s[:, None])
        nrm = np.zeros(n)
        for j in range(d):
            nrm = nrm + xn[:, j] * xn[:, j]
        nrm = np.sqrt(nrm)
        ok = np.isfinite(nrm) & (nrm != 0.0)
        if not ok.all():
            bad = int(np.flatnonzero(~ok)[0])
            break
        x = xn / nrm[:, None]
    v[...] = x
    _signature_into(w, dx, xx)
    if vel is not None:
        vel[...] = w[:, ::thin] / h
    return bad


def _grad_phi(kind, q):
    if kind == 1:
        return -2.0 * q / (1.0 + (q * q).sum(axis=1))[:, None]
    if kind == 2:
        g = np.zeros_like(q)
        g[:, 1] = -1.0 / q[:, 1]
        return g
    return np.zeros_like(q)


def _lambda2(kind, q):
    if kind == 1:
        return 4.0 / (1.0 + (q * q).sum(axis=1)) ** 2
    if kind == 2:
        return 1.0 / q[:, 1] ** 2
    return np.ones(len(q))


def _hlift(kind, q, e, delta):
    gp = _grad_phi(kind, q)
    a = np.einsum("nkl,nl->nk", e, delta)
    ga = (gp * a).sum(axis=1)
    gb = np.einsum("nk,nkl->nl", gp, e)
    ab = np.einsum("nk,nkl->nl", a, e)
    de = -(a[:, :, None] * gb[:, None, :] + e * ga[:, None, None] - ab[:, None, :] * gp[:, :, None])
    return a, de


def _defect(kind, q, e):
    gram = _lambda2(kind, q)[:, None, None] * np.einsum("nki,nkj->nij", e, e)
    return np.abs(gram - np.eye(2)).max(axis=(1, 2))


def _gram_schmidt(kind, q, e):
    lam2 = _lambda2(kind, q)
    e0 = e[:, :, 0] / np.sqrt(lam2 * (e[:, :, 0] ** 2).sum(axis=1))[:, None]
    c = lam2 * (e0 * e[:, :, 1]).sum(axis=1)
    e1 = e[:, :, 1] - c[:, None] * e0
    e1 = e1 / np.sqrt(lam2 * (e1 ** 2).sum(axis=1))[:, None]
    return np.stack([e0, e1], axis=2)


def _invert(q, e):
    r2 = (q * q).sum(axis=1)
    jac = (r2[:, None, None] * np.eye(2) - 2.0 * q[:, :, None] * q[:, None, :]) / (r2 ** 2)[:, None, None]
    return q / r2[:, None], np.einsum("nij,njl->nil", jac, e)


def develop_conformal2d(kind, q, e, chart, w, n_sub, reorth_tol, switch_radius):
    n, K = w.shape[:2]
    z_q = q.copy()
    z_e = e.copy()
    status = -1
    max_defect = 0.0
    alive = np.ones(n, dtype=bool)
    for k in range(K):
        delta = w[:, k] / n_sub
        for _ in range(n_sub):
            a1, b1 = _hlift(kind, z_q, z_e, delta)
            a2, b2 = _hlift(kind, z_q + 0.5 * a1, z_e + 0.5 * b1, delta)
            a3, b3 = _hlift(kind, z_q + 0.5 * a2, z_e + 0.5 * b2, delta)
            a4, b4 = _hlift(kind, z_q + a3, z_e + b3, delta)
            z_q = z_q + (a1 + 2.0 * a2 + 2.0 * a3 + a4) / 6.0
            z_e = z_e + (b1 + 2.0 * b2 + 2.0 * b3 + b4) / 6.0
            if kind == 1:
                far = (z_q * z_q).sum(axis=1) > switch_radius ** 2
                if far.any():
                    z_q[far], z_e[far] = _invert(z_q[far], z_e[far])
                    chart[far] = 1 - chart[far]
            bad = ~np.isfinite(z_q).all(axis=1)
            if kind == 2:
                bad |= ~(z_q[:, 1] > 0.0)
            if bad.any():
                status = int(np.flatnonzero(bad)[0])
                alive[status:] = False
                break
            dft = _defect(kind, z_q, z_e)
            max_defect = max(max_defect, float(dft.max()))
            redo = dft > reorth_tol
            if redo.any():
                z_e[redo] = _gram_schmidt(kind, z_q[redo], z_e[redo])
        if status >= 0:
            break
    q[alive] = z_q[alive]
    e[alive] = z_e[alive]
    return status, max_defect
