"""Estimators: autocovariance, limit covariance, mixing time, TV distance and limit-law checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ensemble import Ensemble, simulate_chains, simulate_ensemble
from .healpix import SpherePartition
from .velocity import VelocityModel

Z95 = 1.959963984540054


class EstimationError(ValueError):
    """The data do not support the requested estimate (e.g. no decay below noise)."""


# ---------------------------------------------------------------------------
# autocovariance

@dataclass
class AutocovEstimate:
    """``E[v_0^i v_t^j]`` on a lag grid, with batch-means standard errors.

    ``matrix`` has shape (L, d, d); ``values``/``se`` are its diagonal.
    ``batch_matrix`` keeps the per-batch estimates used for every CI derived
    from this object.
    """

    lags: np.ndarray
    matrix: np.ndarray
    batch_matrix: np.ndarray
    n_samples: int
    meta: dict = field(default_factory=dict)

    @property
    def spacing(self):
        return float(self.lags[1] - self.lags[0])

    @property
    def values(self):
        return np.einsum("lii->li", self.matrix)

    @property
    def batch_values(self):
        return np.einsum("blii->bli", self.batch_matrix)

    @property
    def n_batches(self):
        return self.batch_matrix.shape[0]

    @property
    def se(self):
        return self.batch_values.std(axis=0, ddof=1) / np.sqrt(self.n_batches)

    @property
    def envelope(self):
        """Row norms ``sqrt(sum_j C_ij^2)``; smooth for rotating velocities."""
        return np.sqrt((self.matrix ** 2).sum(axis=2))

    @property
    def envelope_se(self):
        env_b = np.sqrt((self.batch_matrix ** 2).sum(axis=3))
        return env_b.std(axis=0, ddof=1) / np.sqrt(self.n_batches)


def _lagged_products(x, n_lags):
    """``sum_k x_k^i x_{k+l}^j`` for l < n_lags, via FFT. ``x`` is (N, d)."""
    N, d = x.shape
    m = 1 << int(np.ceil(np.log2(N + n_lags)))
    f = np.fft.rfft(x, n=m, axis=0)
    out = np.empty((n_lags, d, d))
    for i in range(d):
        for j in range(d):
            out[:, i, j] = np.fft.irfft(np.conj(f[:, i]) * f[:, j], n=m)[:n_lags]
    return out


def autocovariance_from_samples(vel, spacing: float, max_lag: float, n_batches: int = 50) -> AutocovEstimate:
    """Time-average estimator from stationary velocity samples.

    ``vel`` is (N, d) or (chains, N, d) sampled every ``spacing``. Values use
    every available pair, ``(1/(N-l)) sum_k v_k v_{k+l}`` pooled over chains;
    standard errors come from ``n_batches`` non-overlapping batches.
    """
    vel = np.asarray(vel, dtype=float)
    if vel.ndim == 2:
        vel = vel[None]
    C, N, d = vel.shape
    n_lags = int(round(max_lag / spacing)) + 1
    per_chain = max(1, n_batches // C)
    blen = N // per_chain
    if blen < 4 * n_lags:
        raise EstimationError(f"horizon too short: batches of {blen} samples for {n_lags} lags")
    total = np.zeros((n_lags, d, d))
    batches = []
    for c in range(C):
        total += _lagged_products(vel[c], n_lags)
        for b in range(per_chain):
            seg = vel[c, b * blen:(b + 1) * blen]
            batches.append(_lagged_products(seg, n_lags) / (blen - np.arange(n_lags))[:, None, None])
    counts = C * (N - np.arange(n_lags))
    mat = total / counts[:, None, None]
    lags = spacing * np.arange(n_lags)
    return AutocovEstimate(lags, mat, np.array(batches), C * N,
                           {"spacing": spacing, "n_chains": C, "batch_len": blen})


def autocovariance(model: VelocityModel, horizon: float, max_lag: float, seed: int, h: float | None = None,
                   spacing: float | None = None, n_chains: int = 1, n_batches: int = 50,
                   start=None, burn_in: float = 0.0) -> AutocovEstimate:
    """Simulate ``n_chains`` chains of length ``horizon`` each and estimate the autocovariance."""
    h = model.default_step() if h is None else h
    spacing = spacing or max(h, 1e-2)
    thin = max(1, int(round(spacing / h)))
    n_steps = int(round(horizon / h))
    if max_lag * 4 * max(1, n_batches // n_chains) > horizon:
        raise EstimationError("horizon too short relative to the requested lags")
    vel = simulate_chains(model, n_chains, h, n_steps, thin, seed, start=start,
                          burn_in_steps=int(round(burn_in / h)))
    ac = autocovariance_from_samples(vel, thin * h, max_lag, n_batches)
    ac.meta.update({"model": model.name, "h": h, "horizon": horizon, "seed": seed})
    return ac


# ---------------------------------------------------------------------------
# limit covariance

@dataclass
class GammaEstimate:
    gamma: np.ndarray
    se: np.ndarray
    method: str
    extras: dict = field(default_factory=dict)

    @property
    def ci(self):
        """95% half-widths."""
        return Z95 * self.se

    def agrees_with(self, other: "GammaEstimate", z: float = Z95):
        """Per-coordinate agreement within the joint CI ``z * sqrt(se_a^2 + se_b^2)``."""
        joint = z * np.sqrt(self.se ** 2 + other.se ** 2)
        return np.abs(self.gamma - other.gamma) <= joint


def truncation_lag(values, se, start: int = 1):
    """First lag index where ``|C| < 2 SE`` and ``|C| < 3 SE`` over ``[l, 2l]``.

    The look-ahead keeps an oscillating correlation from being cut at its
    first zero crossing.
    """
    L = len(values)
    small2 = np.abs(values) < 2 * se
    small3 = np.abs(values) < 3 * se
    for l in range(start, L):
        if small2[l] and small3[l:min(L, 2 * l + 1)].all() and 2 * l < L:
            return l
    return None


def _gamma_coordinate(lags, vals, se, tail, fallback_lag=None):
    dt = lags[1] - lags[0]
    L = truncation_lag(vals, se)
    if L is None:
        if fallback_lag is None:
            return None
        L = fallback_lag
    core = 2.0 * np.trapezoid(vals[:L + 1], dx=dt)
    t_add, t_bound = 0.0, float("nan")
    try:
        fit = _fit_log_linear(lags, vals, se)
        a, tau = fit["prefactor"], fit["tau"]
        if tail:
            t_add = 2.0 * a * tau * np.exp(-lags[L] / tau)
        t_bound = 2.0 * tau * (abs(vals[L]) + 2 * se[L])
    except EstimationError:
        pass
    return core + t_add, L, t_add, t_bound


def estimate_gamma_autocov(ac: AutocovEstimate, tail: bool = True, n_boot: int = 200) -> GammaEstimate:
    """``gamma_i = 2 int_0^inf C_ii``: trapezoid up to the truncation lag plus an exponential tail.

    The standard error is a bootstrap over batches of the whole procedure
    (truncation choice and tail fit included); a plain batch-means error on
    the truncated integral misses that variability and runs about 25% low.
    A replicate whose truncation rule finds no lag reuses the lag of the
    point estimate; ``extras["boot_fallback"]`` records how often. The
    bootstrap draws from its own fixed generator.
    """
    vals, se, bvals = ac.values, ac.se, ac.batch_values
    nb, d = len(bvals), vals.shape[1]
    gam = np.empty(d)
    gse = np.empty(d)
    lags_used, tails, bounds, fallbacks = [], [], [], []
    for i in range(d):
        res = _gamma_coordinate(ac.lags, vals[:, i], se[:, i], tail)
        if res is None:
            raise EstimationError(f"autocovariance of coordinate {i} does not decay below noise in the lag window; "
                                  "lengthen max_lag (the look-ahead needs twice the truncation lag) or the horizon")
        gam[i], L, t_add, t_bound = res
        rng = np.random.default_rng(i)
        boot, n_fb = [], 0
        for _ in range(n_boot):
            sub = bvals[rng.integers(0, nb, nb), :, i]
            sub_se = sub.std(axis=0, ddof=1) / np.sqrt(nb)
            n_fb += truncation_lag(sub.mean(axis=0), sub_se) is None
            boot.append(_gamma_coordinate(ac.lags, sub.mean(axis=0), sub_se, tail, fallback_lag=L)[0])
        gse[i] = np.std(boot, ddof=1)
        fallbacks.append(n_fb / n_boot)
        lags_used.append(float(ac.lags[L]))
        tails.append(float(t_add))
        bounds.append(float(t_bound))
    return GammaEstimate(gam, gse, "autocov-integral",
                         {"truncation_lag": lags_used, "tail": tails, "tail_bound": bounds, "n_boot": n_boot,
                          "boot_fallback": fallbacks})


def gamma_from_endpoints(x1) -> GammaEstimate:
    """Covariance of ``X^sigma_1`` across trajectories, with CLT standard errors."""
    x1 = np.asarray(x1, dtype=float)
    n, d = x1.shape
    mean = x1.mean(axis=0)
    c = x1 - mean
    var = (c * c).mean(axis=0) * n / (n - 1)
    m4 = (c ** 4).mean(axis=0)
    se = np.sqrt(np.maximum(m4 - var ** 2, 0.0) / n)
    prod = c[:, :, None] * c[:, None, :]
    cov = prod.mean(axis=0) * n / (n - 1)
    cov_se = prod.std(axis=0, ddof=1) / np.sqrt(n)
    return GammaEstimate(var, se, "ensemble-variance",
                         {"mean": mean, "mean_se": x1.std(axis=0, ddof=1) / np.sqrt(n),
                          "cov": cov, "cov_se": cov_se, "n": n})


def offdiagonal_z(est: GammaEstimate):
    """Largest ``|cov_ij| / se_ij`` over ``i < j``."""
    cov, se = est.extras["cov"], est.extras["cov_se"]
    iu = np.triu_indices(cov.shape[0], 1)
    return float(np.max(np.abs(cov[iu]) / se[iu]))


def estimate_gamma_ensemble(model: VelocityModel, sigma: float, n_traj: int, seed: int, h: float | None = None,
                            start=None, burn_in: float = 0.0, n_cells: int = 1) -> GammaEstimate:
    """Variance of ``X^sigma_1 = sigma^-2 x_{sigma^4}`` over independent trajectories."""
    h = model.default_step() if h is None else h
    steps = int(round(sigma ** 4 / h))
    if steps % n_cells:
        raise ValueError("cell count must divide the step count")
    ens = simulate_ensemble(model, n_traj, h, n_cells, steps // n_cells, seed, start=start,
                            burn_in_steps=int(round(burn_in / h)))
    est = gamma_from_endpoints(ens.positions[:, -1] / sigma ** 2)
    est.extras["ensemble"] = ens
    return est


# ---------------------------------------------------------------------------
# mixing time

@dataclass
class MixingFit:
    tau: float
    prefactor: float
    r2: float
    per_coordinate: list = field(default_factory=list)


def _fit_log_linear(lags, vals, se, min_points: int = 5):
    """Weighted least squares of ``log|C|`` on lag, over the lags before ``|C|`` first drops below 3 SE."""
    keep = np.abs(vals) >= 3 * se
    stop = np.argmin(keep) if not keep.all() else len(keep)
    t = lags[:stop]
    y = np.abs(vals[:stop])
    if len(t) < min_points:
        raise EstimationError(f"only {len(t)} lags above noise; need {min_points}")
    # inverse-variance weights for log|C|: var(log C) ~ (SE / C)^2. Weights built from
    # the noisy |C| favour upward fluctuations and flatten the slope, so they are
    # rebuilt from the fitted curve and the fit repeated.
    sef = np.maximum(se[:stop], 1e-300)
    ly = np.log(y)
    w = y / sef
    for _ in range(3):
        slope, icpt = np.polyfit(t, ly, 1, w=w)
        w = np.exp(icpt + slope * t) / sef
    if slope >= 0:
        raise EstimationError("autocovariance is not decaying")
    resid = ly - (slope * t + icpt)
    wm = np.average(ly, weights=w * w)
    ss = (w * w * (ly - wm) ** 2).sum()
    r2 = 1.0 - (w * w * resid ** 2).sum() / ss if ss > 0 else 1.0
    return {"tau": -1.0 / slope, "prefactor": float(np.exp(icpt)), "r2": float(r2), "n_points": len(t)}


def estimate_mixing_time(ac: AutocovEstimate, method: str = "log", start_lag: float = 0.0) -> MixingFit:
    """Fit ``C(t) ~ c exp(-t / tau)`` per coordinate; the reported tau is the slowest.

    ``method="envelope"`` fits the row norm of the cross-covariance matrix,
    which removes the oscillation of rotating velocities.
    """
    if method == "log":
        vals, se = ac.values, ac.se
    elif method == "envelope":
        vals, se = ac.envelope, ac.envelope_se
    else:
        raise ValueError(f"unknown method {method!r}")
    i0 = int(round(start_lag / ac.spacing))
    fits = [_fit_log_linear(ac.lags[i0:], vals[i0:, i], se[i0:, i]) for i in range(vals.shape[1])]
    worst = max(fits, key=lambda f: f["tau"])
    return MixingFit(worst["tau"], worst["prefactor"], worst["r2"], fits)


# ---------------------------------------------------------------------------
# invariant-law distances

def tv_binned(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return 0.5 * float(np.abs(p - q).sum())


def tv_distance_to_density(samples, density, partition: SpherePartition | None = None) -> float:
    """``1/2 sum_bins |empirical mass - density mass|`` on a fixed equal-area partition."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empty sample")
    partition = partition or SpherePartition(samples.shape[-1])
    return tv_binned(partition.histogram(samples), partition.masses(density))


# ---------------------------------------------------------------------------
# limit-law checks

def _moments(x):
    n = len(x)
    c = x - x.mean(axis=0)
    m2 = (c ** 2).mean(axis=0)
    skew = (c ** 3).mean(axis=0) / m2 ** 1.5
    kurt = (c ** 4).mean(axis=0) / m2 ** 2
    return skew, kurt, np.sqrt(6.0 * (n - 2) / ((n + 1) * (n + 3))), np.sqrt(24.0 / n)


def gaussianity_check(x1, kurt_band=(2.85, 3.15), z: float = 3.0) -> dict:
    """Skewness, kurtosis and a whitened fourth-moment check of a sample of ``X_1``."""
    x1 = np.asarray(x1, dtype=float)
    n, d = x1.shape
    skew, kurt, se_skew, se_kurt = _moments(x1)
    c = x1 - x1.mean(axis=0)
    cov = c.T @ c / (n - 1)
    w = np.linalg.cholesky(np.linalg.inv(cov))
    r2 = ((c @ w) ** 2).sum(axis=1)
    m4 = r2 ** 2
    target = d * (d + 2)
    m4_se = m4.std(ddof=1) / np.sqrt(n)
    return {
        "n": n,
        "skewness": skew.tolist(),
        "skewness_se": float(se_skew),
        "kurtosis": kurt.tolist(),
        "kurtosis_se": float(se_kurt),
        "joint_fourth_moment": float(m4.mean()),
        "joint_fourth_moment_target": float(target),
        "joint_fourth_moment_se": float(m4_se),
        "skew_ok": bool(np.all(np.abs(skew) <= z * se_skew)),
        "kurtosis_ok": bool(np.all((kurt >= kurt_band[0]) & (kurt <= kurt_band[1]))),
        "joint_ok": bool(abs(m4.mean() - target) <= z * m4_se),
    }


def increment_independence_check(ens: Ensemble, sigma: float, pairs, clip: float = 3.0, z: float = 3.0) -> dict:
    """Covariances of bounded functionals of two disjoint increments of ``X^sigma``.

    ``pairs`` lists ``((s1, t1), (s2, t2))`` in rescaled time, aligned to the
    cell grid. For each coordinate pair (i, j) the clipped coordinates and
    their squares are tested for zero covariance; clipping is at ``clip``
    standard deviations.
    """
    s4 = float(sigma) ** 4
    cell = ens.cell_time / s4
    results = []
    worst = 0.0
    for (s1, t1), (s2, t2) in pairs:
        if not (s1 < t1 <= s2 < t2):
            raise ValueError("intervals must be ordered and disjoint")
        idx = [int(round(u / cell)) for u in (s1, t1, s2, t2)]
        a = ens.increment(idx[0], idx[1], sigma).delta
        b = ens.increment(idx[2], idx[3], sigma).delta
        fa = _bounded_features(a, clip)
        fb = _bounded_features(b, clip)
        ca = fa - fa.mean(axis=0)
        cb = fb - fb.mean(axis=0)
        prod = ca[:, :, None] * cb[:, None, :]
        zs = np.abs(prod.mean(axis=0)) / (prod.std(axis=0, ddof=1) / np.sqrt(len(a)))
        # same-kind pairs only: linear-linear and square-square
        d = a.shape[1]
        mask = np.zeros_like(zs, dtype=bool)
        mask[:d, :d] = True
        mask[d:, d:] = True
        zmax = float(zs[mask].max())
        worst = max(worst, zmax)
        results.append({"intervals": [[s1, t1], [s2, t2]], "max_z": zmax, "n_tests": int(mask.sum())})
    return {"pairs": results, "max_z": worst, "passed": worst <= z}


def _bounded_features(x, clip):
    sd = x.std(axis=0, ddof=1)
    xc = np.clip(x, -clip * sd, clip * sd)
    return np.concatenate([xc, xc ** 2], axis=1)


def levy_area_drift(ens: Ensemble, sigma: float, t: float = 1.0) -> dict:
    """Ensemble mean of the Levy area of ``X^sigma`` over ``[0, t]``, divided by ``t``."""
    c1 = int(round(t * sigma ** 4 / ens.cell_time))
    area = ens.increment(0, c1, sigma).levy_area / t
    n = len(area)
    return {"mean": area.mean(axis=0), "se": area.std(axis=0, ddof=1) / np.sqrt(n), "t": t, "n": n}


def levy_drift_estimate(model: VelocityModel, sigma: float, horizon: float, n_traj: int, seed: int,
                        h: float | None = None) -> dict:
    h = model.default_step() if h is None else h
    steps = int(round(sigma ** 4 * horizon / h))
    ens = simulate_ensemble(model, n_traj, h, 1, steps, seed)
    return levy_area_drift(ens, sigma, horizon)


def moment_bound_check(model: VelocityModel, n: int, horizons, n_traj: int, seed: int, h: float | None = None,
                       growth_slope: float = 0.25) -> dict:
    """``E|int_0^T v dt|^{2n} / T^n`` over a ladder of horizons (multiples of the smallest)."""
    h = model.default_step() if h is None else h
    horizons = np.asarray(sorted(horizons), dtype=float)
    base = horizons[0]
    mult = horizons / base
    if not np.allclose(mult, np.round(mult)):
        raise ValueError("horizons must be integer multiples of the smallest one")
    cell_steps = int(round(base / h))
    ens = simulate_ensemble(model, n_traj, h, int(round(mult[-1])), cell_steps, seed)
    ratios, coord = [], []
    for T, m in zip(horizons, np.round(mult).astype(int)):
        x = ens.positions[:, m]
        ratios.append(float((np.linalg.norm(x, axis=1) ** (2 * n)).mean() / T ** n))
        coord.append(((np.abs(x) ** (2 * n)).mean(axis=0) / T ** n).tolist())
    upper = len(horizons) // 2
    slope = float(np.polyfit(np.log(horizons[upper:]), np.log(ratios[upper:]), 1)[0]) if len(horizons) - upper >= 2 else 0.0
    return {"n": n, "horizons": horizons.tolist(), "ratio": ratios, "ratio_per_coordinate": coord,
            "log_slope_upper": slope, "growth_flag": slope > growth_slope}


__all__ = [
    "AutocovEstimate", "GammaEstimate", "MixingFit", "EstimationError",
    "autocovariance", "autocovariance_from_samples", "estimate_gamma_autocov", "estimate_gamma_ensemble",
    "gamma_from_endpoints", "offdiagonal_z", "estimate_mixing_time", "truncation_lag",
    "tv_binned", "tv_distance_to_density", "gaussianity_check", "increment_independence_check",
    "levy_area_drift", "levy_drift_estimate", "moment_bound_check",
]
