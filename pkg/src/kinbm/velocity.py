"""Velocity processes: the anisotropic sphere diffusion and a zoo of alternatives.

Every model implements :class:`VelocityModel`. States are batched as float
arrays of shape ``(n, k)`` (one row per trajectory) and each model consumes a
fixed number of standard normals per time step, drawn per trajectory from
that trajectory's own generator. Results therefore depend only on the seed,
the trajectory id and the step grid, never on how trajectories are batched.
"""
from __future__ import annotations

import functools
import math

import numpy as np
from scipy import integrate, signal, special

from . import _backend
from .core import CovarianceSpec, NumericalError, RandomSource, _signature_into_rows

__all__ = [
    "step_sphere_velocity",
    "step_euclidean_lift",
    "stationary_density",
    "stationary_normalizer",
    "angular_gaussian_density",
    "sample_stationary",
    "VelocityModel",
    "SphereDiffusion",
    "RandomFlight",
    "Spin2D",
    "WalkInterp",
    "MarkovWalk",
    "OrnsteinUhlenbeck",
    "ConstantVelocity",
    "make_model",
    "MODEL_NAMES",
]

MAX_REJECTIONS = 10 ** 6


def _as_generator(rng):
    if isinstance(rng, RandomSource):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RandomSource or numpy Generator, got {type(rng)!r}")


# ---------------------------------------------------------------------------
# single-step integrators

def sphere_drift(v, spec: CovarianceSpec):
    """Ito drift of the sphere velocity at unit noise intensity."""
    v = np.asarray(v, dtype=float)
    a2 = spec.sigma_diag
    q = (a2 * v * v).sum(axis=-1, keepdims=True)
    return -0.5 * v * ((a2 + a2.sum()) - 2.0 * q)


def step_sphere_velocity(v, spec: CovarianceSpec, h: float, rng=None, dW=None):
    """One projected Euler-Maruyama step; works on ``(d,)`` or ``(n, d)``.

    The Wiener increment ``dW`` may be given explicitly (coupling tests);
    otherwise it is drawn from ``rng``.
    """
    v = np.asarray(v, dtype=float)
    if h <= 0:
        raise ValueError("step size must be positive")
    a = spec.alphas
    if dW is None:
        dW = math.sqrt(h) * _as_generator(rng).standard_normal(v.shape)
    with np.errstate(invalid="ignore", over="ignore"):
        s = (a * v * dW).sum(axis=-1, keepdims=True)
        vn = v + sphere_drift(v, spec) * h + (a * dW - v * s)
        nrm = np.linalg.norm(vn, axis=-1, keepdims=True)
    if not np.all(np.isfinite(nrm)) or np.any(nrm == 0):
        raise NumericalError("sphere step produced a non-finite state; reduce h", {"h": h})
    return vn / nrm


def step_euclidean_lift(u, spec: CovarianceSpec, h: float, rng=None, dW=None, tol: float = 1e-12):
    """One Euler-Maruyama step of the Euclidean lift whose projection is the sphere diffusion."""
    u = np.asarray(u, dtype=float)
    if h <= 0:
        raise ValueError("step size must be positive")
    a = spec.alphas
    if dW is None:
        dW = math.sqrt(h) * _as_generator(rng).standard_normal(u.shape)
    r2 = (u * u).sum(axis=-1, keepdims=True)
    un = u + 0.5 * (-u * r2 + a * a * u) * h + a * np.sqrt(r2) * dW
    nrm = np.linalg.norm(un, axis=-1)
    if not np.all(np.isfinite(nrm)) or np.any(nrm <= tol):
        raise NumericalError("lift reached the origin; restart with a smaller step", {"h": h})
    return un


# ---------------------------------------------------------------------------
# invariant law

@functools.lru_cache(maxsize=64)
def _normalizer(alphas: tuple) -> float:
    # E_unif |A^-1 theta|^{-p}, p = d - 1, via |x|^{-p} = Gamma(p/2)^-1 int t^{p/2-1} e^{-t|x|^2} dt
    # applied to a standard Gaussian g = |g| theta, with t = s^2.
    a2 = np.asarray(alphas) ** 2
    d = len(a2)
    p = d - 1

    def f(s):
        return 2.0 * s ** (p - 1) * np.prod(1.0 + 2.0 * s * s / a2) ** -0.5

    val, _ = integrate.quad(f, 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)
    tail, _ = integrate.quad(f, 1.0, np.inf, epsabs=0, epsrel=1e-13, limit=200)
    moment_ag = (val + tail) / special.gamma(p / 2)  # E|A^-1 g|^{-p}
    moment_g = 2.0 ** (-p / 2) * special.gamma((d - p) / 2) / special.gamma(d / 2)  # E|g|^{-p}
    return float(moment_ag / moment_g)


def stationary_normalizer(spec: CovarianceSpec) -> float:
    """``C_A = int |A^-1 theta|^{1-d} dtheta`` against the uniform probability on the sphere."""
    if spec.is_isotropic:
        return float(spec.alphas[0] ** (spec.dim - 1))
    return _normalizer(tuple(spec.alphas))


def _inv_norm(theta, spec):
    theta = np.asarray(theta, dtype=float)
    return np.linalg.norm(theta / spec.alphas, axis=-1)


def stationary_density(theta, spec: CovarianceSpec, normalized: bool = True):
    """Density of the invariant law with respect to the uniform probability on the sphere."""
    val = _inv_norm(theta, spec) ** (1 - spec.dim)
    return val / stationary_normalizer(spec) if normalized else val


def angular_gaussian_density(theta, spec: CovarianceSpec, normalized: bool = True):
    """Density of ``A g / |A g|`` for standard Gaussian ``g``; normalised exactly by ``det A``."""
    val = _inv_norm(theta, spec) ** (-spec.dim)
    return val / float(np.prod(spec.alphas)) if normalized else val


def sample_stationary(spec: CovarianceSpec, rng, size: int | None = None):
    """Exact draws from the invariant law by rejection from the uniform law.

    Accepts a uniform proposal ``theta`` with probability
    ``(alpha_max |A^-1 theta|)^{1-d}``, which is at most one.
    """
    g = _as_generator(rng)
    d = spec.dim
    amax = spec.alphas.max()
    if size is None:
        for _ in range(MAX_REJECTIONS):
            z = g.standard_normal(d)
            th = z / np.linalg.norm(z)
            if g.random() < (amax * _inv_norm(th, spec)) ** (1 - d):
                return th
        raise NumericalError("rejection sampler exceeded its iteration cap", {"cap": MAX_REJECTIONS})
    out = []
    got = 0
    rate = stationary_normalizer(spec) * amax ** (1 - d)
    tries = 0
    while got < size:
        m = int(1.1 * (size - got) / rate) + 16
        z = g.standard_normal((m, d))
        th = z / np.linalg.norm(z, axis=1, keepdims=True)
        keep = g.random(m) < (amax * _inv_norm(th, spec)) ** (1 - d)
        out.append(th[keep])
        got += int(keep.sum())
        tries += m
        if tries > MAX_REJECTIONS * max(size, 1):
            raise NumericalError("rejection sampler exceeded its iteration cap", {"cap": MAX_REJECTIONS})
    return np.concatenate(out)[:size]


# ---------------------------------------------------------------------------
# model contract

class VelocityModel:
    """A stationary velocity process read through a bounded map.

    Subclasses define ``dim``, ``state_width``, ``noise_width`` and
    implement ``sample_stationary``, ``read`` and ``_advance_noise``.
    Outputs of ``advance`` are velocities at the start of each step, so the
    integrated path over one step of length ``h`` is ``h * velocity``.
    """

    name = "abstract"
    flip_symmetric = True
    # autocovariance decays exponentially, so a fitted exponential tail is appropriate
    exponential_tail = True
    dim: int
    state_width: int
    noise_width: int

    # -- contract -----------------------------------------------------------
    def sample_stationary(self, rng) -> np.ndarray:
        raise NotImplementedError

    def read(self, states) -> np.ndarray:
        raise NotImplementedError

    def _advance_noise(self, states, h, noise):
        """Vectorised update from pre-drawn normals ``noise`` (n, K, width).

        Returns ``(new_states, velocities (n, K, d))``.
        """
        raise NotImplementedError

    def exact_autocovariance(self, lags):
        """Closed-form ``E[v_0^i v_t^i]`` with shape ``(len(lags), d)``, or None."""
        return None

    def exact_gamma(self):
        return None

    def params(self) -> dict:
        return {}

    def default_step(self) -> float:
        return 1e-3

    def flip(self, states, i: int):
        """Image of states under negating velocity coordinate ``i`` (flip-symmetric models)."""
        raise NotImplementedError

    # -- generic machinery ----------------------------------------------------
    def initial_states(self, rngs) -> np.ndarray:
        return np.array([self.sample_stationary(g) for g in map(_as_generator, rngs)], dtype=float).reshape(
            len(rngs), self.state_width
        )

    def draw_noise(self, rngs, n_steps):
        noise = np.empty((len(rngs), n_steps, self.noise_width))
        for i, g in enumerate(rngs):
            noise[i] = _as_generator(g).standard_normal((n_steps, self.noise_width))
        return noise

    def step(self, state, h, rng):
        """Single-trajectory step from a ``(state_width,)`` state."""
        st, _ = self.advance(np.asarray(state, dtype=float)[None], h, 1, [rng])
        return st[0]

    def advance(self, states, h, n_steps, rngs, thin: int = 1):
        """Advance a batch by ``n_steps``; returns ``(states, velocities[:, ::thin])``."""
        states = np.array(states, dtype=float)
        noise = self.draw_noise(rngs, n_steps)
        states, vel = self._advance_noise(states, h, noise)
        return states, vel[:, ::thin]

    def advance_lifted(self, states, h, n_steps, rngs, thin: int | None = None):
        """Advance and return the level-2 lift of the integrated path over the window.

        Returns ``(states, dx (n, d), xx (n, d, d), vel or None)``.
        """
        states = np.array(states, dtype=float)
        noise = self.draw_noise(rngs, n_steps)
        states, vel = self._advance_noise(states, h, noise)
        n, d = len(states), self.dim
        dx = np.empty((n, d))
        xx = np.empty((n, d, d))
        _signature_into_rows(h * vel, dx, xx)
        return states, dx, xx, (vel[:, ::thin] if thin else None)


def _forward_fill(initial, events, values):
    """Sequence ``s_0 = initial``, ``s_{k+1} = values[k] if events[k] else s_k``.

    Returns ``(s_0..s_{K-1}, s_K)`` for batched inputs ``events`` (n, K) and
    ``values`` (n, K, w).
    """
    n, K = events.shape
    idx = np.where(events, np.arange(K), -1)
    np.maximum.accumulate(idx, axis=1, out=idx)
    filled = np.take_along_axis(values, np.maximum(idx, 0)[:, :, None], axis=1)
    filled = np.where((idx >= 0)[:, :, None], filled, initial[:, None, :])
    seq = np.concatenate([initial[:, None, :], filled[:, :-1]], axis=1)
    return seq, filled[:, -1]


# ---------------------------------------------------------------------------
# sphere diffusion

class SphereDiffusion(VelocityModel):
    """Unit-norm velocity driven by anisotropic noise projected on the tangent space."""

    name = "sphere"

    def __init__(self, spec: CovarianceSpec):
        self.spec = spec
        self.dim = spec.dim
        self.state_width = spec.dim
        self.noise_width = spec.dim
        self._a = np.array(spec.alphas)
        self._a2 = np.array(spec.sigma_diag)
        self._tr = float(self._a2.sum())

    def params(self):
        return {"sigma_diag": self.spec.sigma_diag.tolist()}

    def default_step(self):
        return 1e-3 / max(1.0, float(self._a2.max()))

    def sample_stationary(self, rng):
        return sample_stationary(self.spec, rng)

    def read(self, states):
        return np.asarray(states, dtype=float)

    def flip(self, states, i):
        out = np.array(states, dtype=float)
        out[..., i] *= -1
        return out

    def _kernel(self, states, h, n_steps, rngs, thin, record, kernels=None):
        kernels = kernels or _backend.kernels
        v = np.ascontiguousarray(states, dtype=float).copy()
        n, d = v.shape
        dx = np.zeros((n, d))
        xx = np.zeros((n, d, d))
        vel = np.empty((n, -(-n_steps // thin), d)) if record else None
        gens = [_as_generator(g) for g in rngs]
        bad = kernels.sphere_em(v, self._a, self._a2, self._tr, float(h), int(n_steps), gens, int(thin), dx, xx, vel)
        if bad >= 0:
            raise NumericalError("sphere step produced a non-finite state; reduce h",
                                 {"h": h, "trajectory": int(bad)})
        return v, dx, xx, vel

    def advance(self, states, h, n_steps, rngs, thin=1):
        v, _, _, vel = self._kernel(states, h, n_steps, rngs, thin, True)
        return v, vel

    def advance_lifted(self, states, h, n_steps, rngs, thin=None):
        return self._kernel(states, h, n_steps, rngs, thin or 1, bool(thin))

    def _advance_noise(self, states, h, noise):
        v = np.array(states, dtype=float)
        n, K, d = noise.shape
        vel = np.empty((n, K, d))
        dW = math.sqrt(h) * noise
        for k in range(K):
            vel[:, k] = v
            v = step_sphere_velocity(v, self.spec, h, dW=dW[:, k])
        return v, vel

    def exact_autocovariance(self, lags):
        if not self.spec.is_isotropic:
            return None
        d, a2 = self.dim, self._a2[0]
        c = np.exp(-a2 * (d - 1) * np.asarray(lags, dtype=float) / 2) / d
        return np.repeat(c[:, None], d, axis=1)

    def exact_gamma(self):
        if not self.spec.is_isotropic:
            return None
        d = self.dim
        return np.full(d, 4.0 / (d * (d - 1) * self._a2[0]))


# ---------------------------------------------------------------------------
# zoo

class RandomFlight(VelocityModel):
    """Velocity uniform on the sphere, refreshed at the jump times of a Poisson clock.

    On a grid the jump indicator per step is exact: a jump occurs with
    probability ``1 - exp(-rate h)`` and the post-jump direction is uniform
    regardless of how many jumps happened inside the step.
    """

    name = "random_flight"

    def __init__(self, dim: int, rate: float = 1.0):
        if dim < 2 or rate <= 0:
            raise ValueError("need dim >= 2 and a positive rate")
        self.dim = dim
        self.rate = float(rate)
        self.state_width = dim
        self.noise_width = dim + 1

    def params(self):
        return {"dim": self.dim, "rate": self.rate}

    def sample_stationary(self, rng):
        z = _as_generator(rng).standard_normal(self.dim)
        return z / np.linalg.norm(z)

    def read(self, states):
        return np.asarray(states, dtype=float)

    def flip(self, states, i):
        out = np.array(states, dtype=float)
        out[..., i] *= -1
        return out

    def _advance_noise(self, states, h, noise):
        thresh = special.ndtri(math.exp(-self.rate * h))
        jump = noise[:, :, 0] > thresh
        dirs = noise[:, :, 1:] / np.linalg.norm(noise[:, :, 1:], axis=2, keepdims=True)
        vel, last = _forward_fill(states, jump, dirs)
        return last, vel

    def exact_autocovariance(self, lags):
        c = np.exp(-self.rate * np.asarray(lags, dtype=float)) / self.dim
        return np.repeat(c[:, None], self.dim, axis=1)

    def exact_gamma(self):
        return np.full(self.dim, 2.0 / (self.dim * self.rate))


class Spin2D(VelocityModel):
    """``v = (cos th, sin th)`` with ``d th = dt + dW``. Not flip-symmetric, by design."""

    name = "spin2d"
    flip_symmetric = False

    def __init__(self, omega: float = 1.0):
        self.omega = float(omega)
        self.dim = 2
        self.state_width = 1
        self.noise_width = 1

    def params(self):
        return {"omega": self.omega}

    def sample_stationary(self, rng):
        return np.array([2 * np.pi * _as_generator(rng).random()])

    def read(self, states):
        th = np.asarray(states, dtype=float)[..., 0]
        return np.stack([np.cos(th), np.sin(th)], axis=-1)

    def _advance_noise(self, states, h, noise):
        inc = self.omega * h + math.sqrt(h) * noise[:, :, 0]
        th = states[:, :1] + np.concatenate([np.zeros((len(states), 1)), np.cumsum(inc, axis=1)], axis=1)
        vel = self.read(th[:, :-1, None])
        return np.mod(th[:, -1:], 2 * np.pi), vel

    def exact_autocovariance(self, lags):
        t = np.asarray(lags, dtype=float)
        c = 0.5 * np.cos(self.omega * t) * np.exp(-t / 2)
        return np.repeat(c[:, None], 2, axis=1)

    def exact_cross_covariance(self, lags):
        """``E[v_0^1 v_t^2]``."""
        t = np.asarray(lags, dtype=float)
        return 0.5 * np.sin(self.omega * t) * np.exp(-t / 2)

    def exact_gamma(self):
        w = self.omega
        return np.full(2, 0.5 / (0.25 + w * w))

    def exact_levy_drift(self, sigma4: float, t: float = 1.0):
        """``E[A^12]`` of the rescaled lift over ``[0, t]``."""
        w = self.omega
        f = lambda s: 0.5 * max(t - s / sigma4, 0.0) * math.sin(w * s) * math.exp(-s / 2)
        val, _ = integrate.quad(f, 0.0, sigma4 * t, limit=500)
        return val


_WALK_LAWS = {
    # name: (map from normals, per-coordinate second moment as a function of d)
    "uniform": (lambda z: 2.0 * special.ndtr(z) - 1.0, lambda d: 1.0 / 3.0),
    "rademacher": (lambda z: np.where(z >= 0, 1.0, -1.0), lambda d: 1.0),
    "sphere": (lambda z: z / np.linalg.norm(z, axis=-1, keepdims=True), lambda d: 1.0 / d),
}


def _crossings(r0, h, K):
    """Cell boundaries hit during ``K`` steps from remaining times ``r0`` (cells of length 1).

    ``hit[:, k]`` marks a resample at the end of step ``k``; ``r`` is the new
    remaining time.
    """
    t_end = h * np.arange(1, K + 1)
    count = np.where(t_end[None, :] >= r0[:, None], np.floor(t_end[None, :] - r0[:, None]) + 1, 0.0)
    prev = np.concatenate([np.zeros((len(r0), 1)), count[:, :-1]], axis=1)
    hit = count > prev
    r = r0 - h * K + count[:, -1]
    return hit, r


class WalkInterp(VelocityModel):
    """Piecewise-constant velocity, resampled i.i.d. at the integers (plus a uniform phase).

    State columns: ``[remaining time in cell, Y_1..Y_d]``.
    """

    name = "walk_interp"
    exponential_tail = False  # autocovariance vanishes beyond lag 1

    def __init__(self, dim: int, law: str = "uniform"):
        if law not in _WALK_LAWS:
            raise ValueError(f"unknown law {law!r}; choose from {sorted(_WALK_LAWS)}")
        self.dim = dim
        self.law = law
        self.state_width = dim + 1
        self.noise_width = dim
        self._map, m2 = _WALK_LAWS[law]
        self.second_moment = m2(dim)

    def params(self):
        return {"dim": self.dim, "law": self.law}

    def sample_stationary(self, rng):
        g = _as_generator(rng)
        r = 1.0 - g.random()
        return np.concatenate([[r], self._map(g.standard_normal(self.dim))])

    def read(self, states):
        return np.asarray(states, dtype=float)[..., 1:]

    def flip(self, states, i):
        out = np.array(states, dtype=float)
        out[..., 1 + i] *= -1
        return out

    def _advance_noise(self, states, h, noise):
        n, K, _ = noise.shape
        hit, r = _crossings(states[:, 0], h, K)
        vel, last = _forward_fill(states[:, 1:], hit, self._map(noise))
        return np.concatenate([r[:, None], last], axis=1), vel

    def exact_autocovariance(self, lags):
        t = np.asarray(lags, dtype=float)
        c = self.second_moment * np.clip(1.0 - t, 0.0, None)
        return np.repeat(c[:, None], self.dim, axis=1)

    def exact_gamma(self):
        return np.full(self.dim, self.second_moment)


class MarkovWalk(VelocityModel):
    """Velocity read from a finite Markov chain that jumps at the integers (uniform phase).

    ``points`` (m, d) are the velocity values, ``kernel`` (m, m) the transition
    matrix. State columns: ``[remaining time in cell, state index]``.
    """

    name = "markov_walk"

    def __init__(self, points, kernel):
        points = np.asarray(points, dtype=float)
        kernel = np.asarray(kernel, dtype=float)
        m = len(points)
        if kernel.shape != (m, m) or np.any(kernel < 0) or not np.allclose(kernel.sum(axis=1), 1.0):
            raise ValueError("kernel must be a row-stochastic (m, m) matrix")
        self.points = points
        self.kernel = kernel
        self.dim = points.shape[1]
        self.state_width = 2
        self.noise_width = 1
        self._cum = np.cumsum(kernel, axis=1)
        self._cum[:, -1] = 1.0
        w, vecs = np.linalg.eig(kernel.T)
        pi = np.real(vecs[:, np.argmin(np.abs(w - 1))])
        self.pi = pi / pi.sum()
        self._cum_pi = np.cumsum(self.pi)
        self._cum_pi[-1] = 1.0

    @classmethod
    def lazy_axis(cls, dim: int, stay: float = 0.5) -> "MarkovWalk":
        """Chain on ``{+-e_i}``: keep the state w.p. ``stay``, else draw uniformly among all 2d."""
        pts = np.vstack([np.eye(dim), -np.eye(dim)])
        m = 2 * dim
        kern = stay * np.eye(m) + (1.0 - stay) / m
        mw = cls(pts, kern)
        mw.stay = stay
        return mw

    def params(self):
        return {"points": self.points.tolist(), "kernel": self.kernel.tolist()}

    def sample_stationary(self, rng):
        g = _as_generator(rng)
        r = 1.0 - g.random()
        return np.array([r, float(np.searchsorted(self._cum_pi, g.random(), side="right"))])

    def read(self, states):
        return self.points[np.asarray(states)[..., 1].astype(int)]

    def flip(self, states, i):
        # map each point to the point with coordinate i negated
        target = self.points.copy()
        target[:, i] *= -1
        lookup = np.array([np.flatnonzero(np.all(self.points == t, axis=1))[0] for t in target])
        out = np.array(states, dtype=float)
        out[..., 1] = lookup[out[..., 1].astype(int)]
        return out

    def _advance_noise(self, states, h, noise):
        n, K, _ = noise.shape
        hit, r = _crossings(states[:, 0], h, K)
        u = special.ndtr(noise[:, :, 0])
        idx = states[:, 1].astype(int)
        vel_idx = np.empty((n, K), dtype=int)
        # jumps are sparse; walk through them in time order, all trajectories at once
        cur = idx.copy()
        start = 0
        steps = np.flatnonzero(hit.any(axis=0))
        for k in steps:
            vel_idx[:, start:k + 1] = cur[:, None]
            rows = np.flatnonzero(hit[:, k])
            cur[rows] = (self._cum[cur[rows]] <= u[rows, k, None]).sum(axis=1)
            start = k + 1
        vel_idx[:, start:] = cur[:, None]
        return np.stack([r, cur.astype(float)], axis=1), self.points[vel_idx]

    def _lag_covariance(self, n_max):
        c = np.empty((n_max + 1, self.dim))
        pk = np.eye(len(self.points))
        for k in range(n_max + 1):
            c[k] = np.einsum("a,ai,ab,bi->i", self.pi, self.points, pk, self.points)
            pk = pk @ self.kernel
        return c

    def exact_autocovariance(self, lags):
        t = np.asarray(lags, dtype=float)
        fl = np.floor(t).astype(int)
        frac = (t - fl)[:, None]
        c = self._lag_covariance(int(fl.max()) + 1)
        return (1 - frac) * c[fl] + frac * c[fl + 1]

    def exact_gamma(self):
        # 2 int C = c(0) + 2 sum_{n>=1} c(n), summed until the geometric tail is negligible
        c = self._lag_covariance(2000)
        return c[0] + 2.0 * c[1:].sum(axis=0)


class OrnsteinUhlenbeck(VelocityModel):
    """``dv = -v dt + dB`` with ``B`` of covariance Sigma; advanced by its exact AR(1) transition."""

    name = "ou"

    def __init__(self, spec: CovarianceSpec):
        self.spec = spec
        self.dim = spec.dim
        self.state_width = spec.dim
        self.noise_width = spec.dim

    def params(self):
        return {"sigma_diag": self.spec.sigma_diag.tolist()}

    def sample_stationary(self, rng):
        return _as_generator(rng).standard_normal(self.dim) * np.sqrt(self.spec.sigma_diag / 2)

    def read(self, states):
        return np.asarray(states, dtype=float)

    def flip(self, states, i):
        out = np.array(states, dtype=float)
        out[..., i] *= -1
        return out

    def _advance_noise(self, states, h, noise):
        rho = math.exp(-h)
        scale = np.sqrt((1 - rho * rho) * self.spec.sigma_diag / 2)
        x = noise * scale
        n, K, d = noise.shape
        x[:, 0] += rho * states
        y = signal.lfilter([1.0], [1.0, -rho], x, axis=1)
        vel = np.concatenate([states[:, None, :], y[:, :-1]], axis=1)
        return y[:, -1], vel

    def exact_autocovariance(self, lags):
        t = np.asarray(lags, dtype=float)
        return np.exp(-t)[:, None] * (self.spec.sigma_diag / 2)[None, :]

    def exact_gamma(self):
        return self.spec.sigma_diag.copy()


class ConstantVelocity(VelocityModel):
    """Deterministic ``v = u`` (unit vector); the negative control for moment bounds."""

    name = "constant"
    flip_symmetric = False
    exponential_tail = False

    def __init__(self, direction):
        u = np.asarray(direction, dtype=float)
        self.direction = u / np.linalg.norm(u)
        self.dim = len(u)
        self.state_width = self.dim
        self.noise_width = 0

    def params(self):
        return {"direction": self.direction.tolist()}

    def sample_stationary(self, rng):
        return self.direction.copy()

    def read(self, states):
        return np.asarray(states, dtype=float)

    def _advance_noise(self, states, h, noise):
        n, K, _ = noise.shape
        vel = np.broadcast_to(states[:, None, :], (n, K, self.dim)).copy()
        return states.copy(), vel

    def exact_autocovariance(self, lags):
        return np.broadcast_to(self.direction ** 2, (len(lags), self.dim)).copy()


MODEL_NAMES = ("sphere", "random_flight", "spin2d", "walk_interp", "markov_walk", "ou", "constant")


def make_model(name: str, sigma_diag=None, dim: int | None = None, **kw) -> VelocityModel:
    """Build a model from a name and plain parameters (used by the CLI)."""
    if name in ("sphere", "ou"):
        if sigma_diag is None:
            sigma_diag = [1.0] * (dim or 3)
        spec = CovarianceSpec.from_sigma_diag(sigma_diag)
        return SphereDiffusion(spec) if name == "sphere" else OrnsteinUhlenbeck(spec)
    dim = dim or (len(sigma_diag) if sigma_diag is not None else 3)
    if name == "random_flight":
        return RandomFlight(dim, rate=kw.get("rate", 1.0))
    if name == "spin2d":
        return Spin2D(kw.get("omega", 1.0))
    if name == "walk_interp":
        return WalkInterp(dim, kw.get("law", "uniform"))
    if name == "markov_walk":
        return MarkovWalk.lazy_axis(dim, kw.get("stay", 0.5))
    if name == "constant":
        return ConstantVelocity(kw.get("direction", [1.0] + [0.0] * (dim - 1)))
    raise ValueError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
