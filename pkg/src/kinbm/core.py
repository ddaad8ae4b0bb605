"""Shared numeric types: anisotropy, rough increments, random streams, paths."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CovarianceSpec",
    "RoughIncrement",
    "RandomSource",
    "PathSample",
    "chen_compose",
    "chen_inverse",
    "rescale_to_sigma",
    "rescale_increment",
    "NumericalError",
]


class NumericalError(RuntimeError):
    """A simulation or integration produced non-finite or out-of-domain values."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CovarianceSpec:
    """Diagonal noise covariance ``Sigma = diag(alpha_i^2)`` with ``A = diag(alpha_i)``."""

    alphas: np.ndarray

    def __post_init__(self):
        alphas = _frozen(np.atleast_1d(self.alphas))
        if alphas.ndim != 1 or len(alphas) < 2:
            raise ValueError("need at least two alphas")
        if not np.all(np.isfinite(alphas)) or np.any(alphas <= 0):
            raise ValueError(f"alphas must be positive and finite, got {alphas}")
        object.__setattr__(self, "alphas", alphas)

    @classmethod
    def from_sigma_diag(cls, diag) -> "CovarianceSpec":
        diag = np.asarray(diag, dtype=float)
        if np.any(diag <= 0):
            raise ValueError("covariance diagonal must be positive")
        return cls(np.sqrt(diag))

    @classmethod
    def isotropic(cls, dim: int, alpha: float = 1.0) -> "CovarianceSpec":
        return cls(np.full(dim, float(alpha)))

    @property
    def dim(self) -> int:
        return len(self.alphas)

    @property
    def sigma_diag(self) -> np.ndarray:
        return self.alphas ** 2

    @property
    def sigma(self) -> np.ndarray:
        return np.diag(self.sigma_diag)

    @property
    def sqrt_matrix(self) -> np.ndarray:
        return np.diag(self.alphas)

    @property
    def is_isotropic(self) -> bool:
        return bool(np.all(self.alphas == self.alphas[0]))

    def __eq__(self, other):
        return isinstance(other, CovarianceSpec) and np.array_equal(self.alphas, other.alphas)

    def __hash__(self):
        return hash(tuple(self.alphas))


@dataclass(frozen=True)
class RoughIncrement:
    """An element ``(delta, second)`` of the step-2 truncated tensor algebra.

    Leading axes are allowed, so a single instance can carry a batch of
    increments: ``delta`` has shape ``(..., d)`` and ``second`` ``(..., d, d)``.
    """

    delta: np.ndarray
    second: np.ndarray

    def __post_init__(self):
        delta = _frozen(self.delta)
        second = _frozen(self.second)
        d = delta.shape[-1]
        if second.shape != delta.shape + (d,):
            raise ValueError(f"shape mismatch: delta {delta.shape}, second {second.shape}")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "second", second)

    @classmethod
    def identity(cls, dim: int) -> "RoughIncrement":
        return cls(np.zeros(dim), np.zeros((dim, dim)))

    @classmethod
    def segment(cls, w) -> "RoughIncrement":
        """Exact lift of a straight segment with increment ``w``."""
        w = np.asarray(w, dtype=float)
        return cls(w, 0.5 * w[..., :, None] * w[..., None, :])

    @property
    def dim(self) -> int:
        return self.delta.shape[-1]

    @property
    def levy_area(self) -> np.ndarray:
        return 0.5 * (self.second - np.swapaxes(self.second, -1, -2))

    def __matmul__(self, other: "RoughIncrement") -> "RoughIncrement":
        return chen_compose(self, other)

    def symmetric_defect(self) -> float:
        """``max |Sym(X) - delta (x) delta / 2|``; zero for geometric lifts."""
        sym = 0.5 * (self.second + np.swapaxes(self.second, -1, -2))
        ref = 0.5 * self.delta[..., :, None] * self.delta[..., None, :]
        return float(np.max(np.abs(sym - ref), initial=0.0))


def chen_compose(a: RoughIncrement, b: RoughIncrement) -> RoughIncrement:
    """Group law: ``(a.dx + b.dx, a.X + b.X + a.dx (x) b.dx)``."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return RoughIncrement(
        a.delta + b.delta,
        a.second + b.second + a.delta[..., :, None] * b.delta[..., None, :],
    )


def chen_inverse(a: RoughIncrement) -> RoughIncrement:
    return RoughIncrement(-a.delta, -a.second + a.delta[..., :, None] * a.delta[..., None, :])


def _signature_into_rows(w, dx, xx):
    """Level-2 lift of a batch of piecewise-linear paths with segment increments ``w`` (n, K, d)."""
    before = np.cumsum(w, axis=1) - w
    xx[...] = np.einsum("nki,nkj->nij", before, w) + 0.5 * np.einsum("nki,nkj->nij", w, w)
    dx[...] = w.sum(axis=1)


def rescale_increment(r: RoughIncrement, sigma: float) -> RoughIncrement:
    """Space scaling of a unit-speed increment to the ``X^sigma`` time scale."""
    s2 = float(sigma) ** -2
    return RoughIncrement(s2 * r.delta, s2 * s2 * r.second)


# Stream ids are split into a purpose tag (high bits) and a trajectory index.
_PURPOSE_SHIFT = 40


@dataclass
class RandomSource:
    """Counter-based random stream keyed by ``(seed, stream)``.

    Backed by numpy's Philox, whose 128-bit key is exactly the pair. Distinct
    stream ids give independent streams; the same pair always reproduces the
    same draws. One instance per trajectory, never shared.
    """

    seed: int
    stream: int = 0
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("seed", "stream"):
            val = int(getattr(self, name))
            if not 0 <= val < 2 ** 64:
                raise ValueError(f"{name} must fit in an unsigned 64-bit integer")
            setattr(self, name, val)

    @classmethod
    def for_trajectory(cls, seed: int, trajectory: int, purpose: int = 0) -> "RandomSource":
        if not 0 <= trajectory < 2 ** _PURPOSE_SHIFT:
            raise ValueError("trajectory id out of range")
        return cls(seed, (int(purpose) << _PURPOSE_SHIFT) | int(trajectory))

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            key = np.array([self.seed, self.stream], dtype=np.uint64)
            self._gen = np.random.Generator(np.random.Philox(key=key))
        return self._gen

    def fresh(self) -> "RandomSource":
        """A new source replaying the same stream from its start."""
        return RandomSource(self.seed, self.stream)


def generators(seed: int, n: int, purpose: int = 0, start: int = 0) -> list:
    """Per-trajectory generators for trajectory ids ``start .. start + n - 1``."""
    return [RandomSource.for_trajectory(seed, start + i, purpose).generator for i in range(n)]


@dataclass(frozen=True)
class PathSample:
    """Piecewise-linear path through ``points`` at strictly increasing ``times``."""

    times: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        times = _frozen(self.times)
        points = _frozen(self.points)
        if times.ndim != 1 or len(times) < 2:
            raise ValueError("need at least two time points")
        if points.ndim != 2 or points.shape[0] != len(times):
            raise ValueError("points must have shape (len(times), d)")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "points", points)

    @classmethod
    def from_velocities(cls, velocities, h: float, x0=None, t0: float = 0.0) -> "PathSample":
        """Integrate piecewise-constant velocities (one per step of length ``h``)."""
        velocities = np.asarray(velocities, dtype=float)
        n, d = velocities.shape
        x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
        pts = np.vstack([x0, x0 + np.cumsum(h * velocities, axis=0)])
        return cls(t0 + h * np.arange(n + 1), pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, self.times, self.points[:, j]) for j in range(self.dim)], axis=-1)

    def increments(self) -> np.ndarray:
        return np.diff(self.points, axis=0)


def rescale_to_sigma(path: PathSample, sigma: float, horizon: float | None = None,
                     n_points: int | None = None) -> PathSample:
    """``t -> sigma^-2 (x_{sigma^4 t} - x_0)`` on a uniform grid over ``[0, horizon]``.

    ``path`` is a unit-speed path; its piecewise-linear interpolant is
    evaluated exactly. By default the horizon is the whole input span and the
    grid keeps the input's number of points.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    s4 = float(sigma) ** 4
    span = path.horizon
    if horizon is None:
        horizon = span / s4
    if s4 * horizon > span * (1 + 1e-12):
        raise ValueError(
            f"input horizon {span} too short for target horizon {horizon} at sigma={sigma}"
        )
    if n_points is None:
        n_points = len(path.times)
    t = np.linspace(0.0, horizon, n_points)
    pts = (path(path.times[0] + s4 * t) - path.points[0]) / sigma ** 2
    return PathSample(t, pts)
