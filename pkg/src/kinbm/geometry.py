"""Manifold models, horizontal lifts and Cartan development on the orthonormal frame bundle.

Frames are stored as ``(q, e)`` with ``q`` the chart coordinates and ``e`` a
d x d matrix whose column ``l`` is the frame vector ``e_l``. Everything
below is batched over a leading trajectory axis; single frames are batches
of one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .core import CovarianceSpec, NumericalError, PathSample, RandomSource

__all__ = [
    "ManifoldModel", "Euclidean", "Sphere2", "Hyperbolic2", "ConformalFlat",
    "Frame", "FramePath", "horizontal_lift", "develop", "develop_time_dependent",
    "develop_increments", "develop_brownian", "orthonormality_defect", "make_manifold",
]

FD_STEP = 1e-5


class ManifoldModel:
    """Chart-level description of a Riemannian manifold (possibly with a time-dependent metric).

    Subclasses provide ``metric``; Christoffel symbols default to central
    finite differences of the metric. All methods accept batched points
    ``q`` of shape (n, d).
    """

    name = "abstract"
    time_dependent = False
    dim: int
    _kernel_kind = None  # compiled fast path for 2-d conformal models

    def metric(self, t, q):
        raise NotImplementedError

    def metric_time_derivative(self, t, q):
        q = np.atleast_2d(q)
        return np.zeros((len(q), self.dim, self.dim))

    def in_domain(self, q):
        return np.all(np.isfinite(q), axis=-1)

    def christoffel(self, t, q):
        """``G[n, k, i, j] = Gamma^k_ij`` by central differences of the metric (step 1e-5)."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        n, d = q.shape
        dg = np.empty((n, d, d, d))  # dg[n, l, i, j] = d_l g_ij
        for l in range(d):
            step = np.zeros(d)
            step[l] = FD_STEP
            dg[:, l] = (self.metric(t, q + step) - self.metric(t, q - step)) / (2 * FD_STEP)
        ginv = np.linalg.inv(self.metric(t, q))
        # Gamma^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)
        lower = 0.5 * (np.einsum("nijl->nlij", dg) + np.einsum("njil->nlij", dg) - dg)
        return np.einsum("nkl,nlij->nkij", ginv, lower)

    def contract(self, t, q, a, b):
        """``Gamma^k_ij a^i b^j`` for batched vectors ``a`` (n, d) and ``b`` (n, d, m) -> (n, d, m)."""
        G = self.christoffel(t, q)
        return np.einsum("nkij,ni,njm->nkm", G, a, b)

    # chart handling (single-chart models never switch)
    def chart_switch(self, q, e, chart):
        return q, e, chart

    def embed(self, q, chart=None):
        return np.asarray(q, dtype=float)

    def distance(self, qa, qb, chart_a=None, chart_b=None):
        return np.linalg.norm(np.asarray(qa) - np.asarray(qb), axis=-1)

    def params(self):
        return {}


class _Conformal(ManifoldModel):
    """``g = lambda(q)^2 delta`` with closed-form Christoffels from ``grad log lambda``."""

    def grad_phi(self, q):
        raise NotImplementedError

    def lambda2(self, q):
        raise NotImplementedError

    def metric(self, t, q):
        q = np.atleast_2d(q)
        return self.lambda2(q)[:, None, None] * np.eye(self.dim)

    def christoffel(self, t, q):
        q = np.atleast_2d(np.asarray(q, dtype=float))
        gp = self.grad_phi(q)
        I = np.eye(self.dim)
        # Gamma^k_ij = delta^k_i d_j phi + delta^k_j d_i phi - delta_ij d_k phi
        return (np.einsum("ki,nj->nkij", I, gp) + np.einsum("kj,ni->nkij", I, gp)
                - np.einsum("ij,nk->nkij", I, gp))

    def contract(self, t, q, a, b):
        gp = self.grad_phi(np.atleast_2d(q))
        ga = (gp * a).sum(axis=1)
        gb = np.einsum("nk,nkm->nm", gp, b)
        ab = np.einsum("nk,nkm->nm", a, b)
        return a[:, :, None] * gb[:, None, :] + b * ga[:, None, None] - gp[:, :, None] * ab[:, None, :]


class Euclidean(_Conformal):
    name = "euclidean"

    def __init__(self, dim: int = 2):
        self.dim = dim
        if dim == 2:
            self._kernel_kind = 0

    def grad_phi(self, q):
        return np.zeros_like(q, dtype=float)

    def lambda2(self, q):
        return np.ones(len(q))

    def params(self):
        return {"dim": self.dim}


class Sphere2(_Conformal):
    """Unit 2-sphere in stereographic coordinates, two charts.

    Chart 0 projects from the north pole: ``P = (2q, |q|^2 - 1) / (1 + |q|^2)``,
    so its origin is the south pole. Chart 1 projects from the south pole,
    ``P = (2q, 1 - |q|^2) / (1 + |q|^2)``. Both carry the metric
    ``4 / (1 + |q|^2)^2 delta``, and the transition is the inversion
    ``q -> q / |q|^2``. Development switches chart when ``|q| > switch_radius``.
    """

    name = "sphere2"
    _kernel_kind = 1
    dim = 2

    def __init__(self, switch_radius: float = 2.0):
        if switch_radius <= 1.0:
            raise ValueError("switch radius must exceed 1 so the charts overlap")
        self.switch_radius = float(switch_radius)

    def grad_phi(self, q):
        return -2.0 * q / (1.0 + (q * q).sum(axis=1))[:, None]

    def lambda2(self, q):
        return 4.0 / (1.0 + (q * q).sum(axis=1)) ** 2

    @staticmethod
    def invert(q, e):
        """Chart transition applied to points and frames."""
        r2 = (q * q).sum(axis=1)
        jac = (r2[:, None, None] * np.eye(2) - 2.0 * q[:, :, None] * q[:, None, :]) / (r2 ** 2)[:, None, None]
        return q / r2[:, None], np.einsum("nij,njl->nil", jac, e)

    def chart_switch(self, q, e, chart):
        far = (q * q).sum(axis=1) > self.switch_radius ** 2
        if far.any():
            q, e, chart = q.copy(), e.copy(), chart.copy()
            q[far], e[far] = self.invert(q[far], e[far])
            chart[far] = 1 - chart[far]
        return q, e, chart

    def embed(self, q, chart=None):
        q = np.atleast_2d(np.asarray(q, dtype=float))
        chart = np.zeros(len(q), dtype=int) if chart is None else np.asarray(chart).reshape(-1)
        r2 = (q * q).sum(axis=1)
        sign = np.where(chart == 0, 1.0, -1.0)
        return np.concatenate([2 * q, (sign * (r2 - 1))[:, None]], axis=1) / (1 + r2)[:, None]

    def from_embedding(self, p, chart=0):
        """Chart coordinates of unit vectors ``p`` in the given chart."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        z = p[:, 2] if chart == 0 else -p[:, 2]
        return p[:, :2] / (1 - z)[:, None]

    def distance(self, qa, qb, chart_a=None, chart_b=None):
        pa, pb = self.embed(qa, chart_a), self.embed(qb, chart_b)
        chord = np.linalg.norm(pa - pb, axis=-1)
        return 2.0 * np.arcsin(np.clip(chord / 2, 0.0, 1.0))

    def params(self):
        return {"switch_radius": self.switch_radius}


class Hyperbolic2(_Conformal):
    """Upper half-plane ``y > 0`` with ``g = delta / y^2``. Single chart; reaching y <= 0 is fatal."""

    name = "hyperbolic2"
    _kernel_kind = 2
    dim = 2

    def grad_phi(self, q):
        g = np.zeros_like(q, dtype=float)
        g[:, 1] = -1.0 / q[:, 1]
        return g

    def lambda2(self, q):
        return 1.0 / q[:, 1] ** 2

    def in_domain(self, q):
        return np.isfinite(q).all(axis=-1) & (q[..., 1] > 0)

    def distance(self, qa, qb, chart_a=None, chart_b=None):
        qa, qb = np.atleast_2d(qa), np.atleast_2d(qb)
        dd = ((qa - qb) ** 2).sum(axis=1)
        return np.arccosh(1.0 + dd / (2.0 * qa[:, 1] * qb[:, 1]))


class ConformalFlat(ManifoldModel):
    """``g_t = c(t)^2 delta`` on R^d; flat at every time, so all Christoffels vanish."""

    name = "conformal_flat"
    time_dependent = True

    def __init__(self, c=None, dc=None, dim: int = 2, rate: float = 0.5):
        # default c(t) = exp(rate * t)
        self.dim = dim
        self.rate = rate
        self.c = c or (lambda t: np.exp(rate * t))
        self.dc = dc or (lambda t: rate * np.exp(rate * t))

    def metric(self, t, q):
        q = np.atleast_2d(q)
        return np.broadcast_to(self.c(t) ** 2 * np.eye(self.dim), (len(q), self.dim, self.dim)).copy()

    def metric_time_derivative(self, t, q):
        q = np.atleast_2d(q)
        return np.broadcast_to(2 * self.c(t) * self.dc(t) * np.eye(self.dim), (len(q), self.dim, self.dim)).copy()

    def christoffel(self, t, q):
        q = np.atleast_2d(q)
        return np.zeros((len(q), self.dim, self.dim, self.dim))

    def contract(self, t, q, a, b):
        return np.zeros_like(b)

    def params(self):
        return {"dim": self.dim, "rate": self.rate}


MANIFOLD_NAMES = ("euclidean", "sphere2", "hyperbolic2", "conformal_flat")


def make_manifold(name: str, **kw) -> ManifoldModel:
    if name == "euclidean":
        return Euclidean(kw.get("dim", 2))
    if name == "sphere2":
        return Sphere2(kw.get("switch_radius", 2.0))
    if name == "hyperbolic2":
        return Hyperbolic2()
    if name == "conformal_flat":
        return ConformalFlat(dim=kw.get("dim", 2), rate=kw.get("rate", 0.5))
    raise ValueError(f"unknown manifold {name!r}; choose from {MANIFOLD_NAMES}")


# ---------------------------------------------------------------------------
# frames

@dataclass
class Frame:
    q: np.ndarray
    e: np.ndarray
    chart: int = 0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.e = np.asarray(self.e, dtype=float)

    @classmethod
    def orthonormal_at(cls, model: ManifoldModel, q, t: float = 0.0, chart: int = 0) -> "Frame":
        """The frame ``g^{-1/2}`` at ``q`` (diagonal metrics give an axis-aligned frame)."""
        g = model.metric(t, np.atleast_2d(q))[0]
        w, v = np.linalg.eigh(g)
        return cls(np.asarray(q, dtype=float), v @ np.diag(w ** -0.5) @ v.T, chart)


@dataclass
class FramePath:
    times: np.ndarray
    q: np.ndarray
    e: np.ndarray
    chart: np.ndarray
    max_defect: float
    meta: dict = field(default_factory=dict)

    def final(self) -> Frame:
        return Frame(self.q[-1], self.e[-1], int(self.chart[-1]))


def orthonormality_defect(model: ManifoldModel, t, q, e):
    """``max_ij |g(e_i, e_j) - delta_ij|`` per trajectory."""
    g = model.metric(t, np.atleast_2d(q))
    gram = np.einsum("nki,nkl,nlj->nij", e, g, e)
    return np.abs(gram - np.eye(e.shape[-1])).max(axis=(1, 2))


def _gram_schmidt(model, t, q, e):
    g = model.metric(t, q)
    out = np.empty_like(e)
    d = e.shape[-1]
    for l in range(d):
        v = e[:, :, l].copy()
        for m in range(l):
            c = np.einsum("nk,nkj,nj->n", v, g, out[:, :, m])
            v -= c[:, None] * out[:, :, m]
        nrm = np.sqrt(np.einsum("nk,nkj,nj->n", v, g, v))
        out[:, :, l] = v / nrm[:, None]
    return out


def horizontal_lift(model: ManifoldModel, t, z: Frame, w):
    """Tangent ``(dq, de)`` of the horizontal lift of ``w`` at frame ``z``.

    ``dq = e w`` and ``de_l^k = -Gamma^k_ij (e w)^i e_l^j``.
    """
    q = np.atleast_2d(z.q)
    if not model.in_domain(q).all():
        raise NumericalError("point outside the chart domain", {"q": z.q.tolist()})
    e = np.asarray(z.e, dtype=float)[None]
    a = np.einsum("nkl,nl->nk", e, np.atleast_2d(w))
    de = -model.contract(t, q, a, e)
    return a[0], de[0]


def _vector_field(model, t, q, e, xdot):
    a = np.einsum("nkl,nl->nk", e, xdot)
    de = -model.contract(t, q, a, e)
    if model.time_dependent:
        # vertical correction: de_i -= 1/2 sum_j gdot(e_i, e_j) e_j
        gd = model.metric_time_derivative(t, q)
        m = np.einsum("nki,nkl,nlj->nij", e, gd, e)
        de = de - 0.5 * np.einsum("nkj,nij->nki", e, m)
    return a, de


def develop_increments(model: ManifoldModel, q0, e0, w, dt=None, t0: float = 0.0, n_sub: int = 1,
                       chart=None, reorth_tol: float = 1e-10, record_every: int | None = 1,
                       use_kernel: bool = True):
    """RK4 development of batched piecewise-linear drivers.

    ``w`` (n, K, d) are the segment increments and ``dt`` (K,) the segment
    durations (needed for time-dependent metrics; defaults to 1/K each).
    Each segment is integrated with ``n_sub`` RK4 steps. Returns
    ``(q, e, chart, max_defect)`` recorded after every ``record_every``
    segments (index 0 is the start), or only the final state when
    ``record_every`` is None.
    """
    q = np.array(np.atleast_2d(q0), dtype=float)
    e = np.array(e0, dtype=float).reshape(len(q), model.dim, model.dim)
    w = np.asarray(w, dtype=float)
    n, K, d = w.shape
    chart = np.zeros(n, dtype=np.int64) if chart is None else np.array(chart, dtype=np.int64).reshape(n)
    dt = np.full(K, 1.0 / K) if dt is None else np.asarray(dt, dtype=float)
    rec = record_every or K
    marks = list(range(0, K, rec)) + [K]
    rq, re_, rc = [q.copy()], [e.copy()], [chart.copy()]
    max_def = 0.0
    fast = use_kernel and model._kernel_kind is not None and not model.time_dependent
    t = t0
    for a, b in zip(marks[:-1], marks[1:]):
        if fast:
            switch = getattr(model, "switch_radius", 2.0)
            status, mdef = _backend.kernels.develop_conformal2d(
                model._kernel_kind, q, e, chart, np.ascontiguousarray(w[:, a:b]), n_sub, reorth_tol, switch)
            if status >= 0:
                raise NumericalError("development left the chart domain", {"trajectory": int(status), "segment": a})
            max_def = max(max_def, mdef)
        else:
            for k in range(a, b):
                q, e, chart, mdef = _rk4_segment(model, t, q, e, chart, w[:, k], dt[k], n_sub, reorth_tol)
                t += dt[k]
                max_def = max(max_def, mdef)
        if record_every is not None or b == K:
            rq.append(q.copy())
            re_.append(e.copy())
            rc.append(chart.copy())
    if record_every is None:
        return q, e, chart, max_def
    return np.stack(rq, 1), np.stack(re_, 1), np.stack(rc, 1), max_def


def _rk4_segment(model, t, q, e, chart, wk, dtk, n_sub, reorth_tol):
    h = dtk / n_sub
    xdot = wk / dtk
    max_def = 0.0
    for _ in range(n_sub):
        a1, b1 = _vector_field(model, t, q, e, xdot)
        a2, b2 = _vector_field(model, t + h / 2, q + 0.5 * h * a1, e + 0.5 * h * b1, xdot)
        a3, b3 = _vector_field(model, t + h / 2, q + 0.5 * h * a2, e + 0.5 * h * b2, xdot)
        a4, b4 = _vector_field(model, t + h, q + h * a3, e + h * b3, xdot)
        q = q + h * (a1 + 2 * a2 + 2 * a3 + a4) / 6
        e = e + h * (b1 + 2 * b2 + 2 * b3 + b4) / 6
        t = t + h
        q, e, chart = model.chart_switch(q, e, chart)
        bad = ~model.in_domain(q)
        if bad.any():
            raise NumericalError("development left the chart domain",
                                 {"trajectory": int(np.flatnonzero(bad)[0]), "time": float(t)})
        dft = orthonormality_defect(model, t, q, e)
        max_def = max(max_def, float(dft.max()))
        redo = dft > reorth_tol
        if redo.any():
            e = e.copy()
            e[redo] = _gram_schmidt(model, t, q[redo], e[redo])
    return q, e, chart, max_def


def develop(model: ManifoldModel, z0: Frame, path: PathSample, h: float | None = None,
            reorth_tol: float = 1e-10, use_kernel: bool = True) -> FramePath:
    """Cartan development of a piecewise-linear path; output on the path's grid.

    Each segment gets ``ceil(duration / h)`` RK4 steps (one if ``h`` is None).
    """
    w = np.diff(path.points, axis=0)
    dt = np.diff(path.times)
    if h is None:
        n_sub = 1
    else:
        n_sub = max(1, int(np.ceil(dt.max() / h - 1e-9)))
    q, e, chart, mdef = develop_increments(model, z0.q, z0.e[None], w[None], dt=dt, t0=float(path.times[0]),
                                           n_sub=n_sub, chart=[z0.chart], reorth_tol=reorth_tol,
                                           use_kernel=use_kernel)
    return FramePath(path.times.copy(), q[0], e[0], chart[0], mdef, {"manifold": model.name, "n_sub": n_sub})


def develop_time_dependent(model: ManifoldModel, z0: Frame, path: PathSample, h: float | None = None,
                           reorth_tol: float = 1e-10) -> FramePath:
    """Development with the vertical correction for a time-dependent metric.

    For static models this reduces exactly to :func:`develop` (numpy path).
    """
    return develop(model, z0, path, h=h, reorth_tol=reorth_tol, use_kernel=False)


def develop_brownian(model: ManifoldModel, z0: Frame, spec: CovarianceSpec, horizon: float, h: float,
                     n_traj: int, seed: int, record_times=None, reorth_tol: float = 1e-10,
                     purpose: int = 3):
    """Stratonovich-Heun development of Brownian motion with covariance ``spec.sigma``.

    Returns ``(times, q (n, R, d), e (n, R, d, d), chart (n, R))`` at
    ``record_times`` (default: the final time only). Trajectory ``i`` draws
    from stream ``(seed, purpose, i)``.
    """
    if model.time_dependent:
        raise ValueError("Brownian development is provided for static metrics")
    d = model.dim
    n_steps = int(round(horizon / h))
    record_times = [horizon] if record_times is None else list(record_times)
    rec_steps = {int(round(t / h)): t for t in record_times}
    gens = [RandomSource.for_trajectory(seed, i, purpose).generator for i in range(n_traj)]
    noise = np.empty((n_traj, n_steps, d))
    for i, g in enumerate(gens):
        noise[i] = g.standard_normal((n_steps, d))
    noise *= np.sqrt(h) * spec.alphas
    q = np.tile(np.asarray(z0.q, dtype=float), (n_traj, 1))
    e = np.tile(np.asarray(z0.e, dtype=float), (n_traj, 1, 1))
    chart = np.full(n_traj, z0.chart, dtype=np.int64)
    out_q, out_e, out_c, out_t = [], [], [], []
    if 0 in rec_steps:
        out_q.append(q.copy()); out_e.append(e.copy()); out_c.append(chart.copy()); out_t.append(0.0)
    max_def = 0.0
    for k in range(n_steps):
        dB = noise[:, k]
        a1, b1 = _vector_field(model, 0.0, q, e, dB)
        a2, b2 = _vector_field(model, 0.0, q + a1, e + b1, dB)
        q = q + 0.5 * (a1 + a2)
        e = e + 0.5 * (b1 + b2)
        q, e, chart = model.chart_switch(q, e, chart)
        if not model.in_domain(q).all():
            raise NumericalError("Brownian development left the chart domain", {"step": k})
        dft = orthonormality_defect(model, 0.0, q, e)
        max_def = max(max_def, float(dft.max()))
        redo = dft > reorth_tol
        if redo.any():
            e[redo] = _gram_schmidt(model, 0.0, q[redo], e[redo])
        if (k + 1) in rec_steps:
            out_q.append(q.copy()); out_e.append(e.copy()); out_c.append(chart.copy())
            out_t.append(rec_steps[k + 1])
    return np.array(out_t), np.stack(out_q, 1), np.stack(out_e, 1), np.stack(out_c, 1)
