"""Level-2 lifts of piecewise-linear paths, Levy areas and dyadic moment diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PathSample, RoughIncrement, chen_compose
from .ensemble import Ensemble

__all__ = ["LiftedPath", "lift_piecewise_linear", "levy_area", "moment_scaling_report",
           "ensemble_from_increments", "riemann_lift"]

MIN_ENSEMBLE = 1000


@dataclass(frozen=True)
class LiftedPath:
    """A path with its per-cell increments and the running lift from ``t_0``."""

    base: PathSample
    increments: RoughIncrement  # batched over the N cells
    cumulative: RoughIncrement  # batched over the N + 1 grid points

    def __len__(self):
        return len(self.base.times) - 1

    def cell(self, k: int) -> RoughIncrement:
        return RoughIncrement(self.increments.delta[k], self.increments.second[k])

    def between(self, i: int, j: int) -> RoughIncrement:
        """Increment over grid points ``[i, j]``, composed cell by cell."""
        if not 0 <= i <= j <= len(self):
            raise ValueError("grid index out of range")
        w = self.increments.delta[i:j]
        p = np.cumsum(w, axis=0) - w
        second = self.increments.second[i:j].sum(axis=0) + np.einsum("ki,kj->ij", p, w)
        return RoughIncrement(w.sum(axis=0), second)

    def total(self) -> RoughIncrement:
        return RoughIncrement(self.cumulative.delta[-1], self.cumulative.second[-1])


def lift_piecewise_linear(path: PathSample) -> LiftedPath:
    """Exact level-2 lift: each segment ``w`` contributes ``(w, w (x) w / 2)``, cells joined by Chen."""
    w = np.diff(path.points, axis=0)
    cells = RoughIncrement.segment(w)
    p = np.cumsum(w, axis=0) - w  # x_k - x_0 at the start of each cell
    run = np.cumsum(cells.second + p[:, :, None] * w[:, None, :], axis=0)
    d = path.dim
    cum_second = np.concatenate([np.zeros((1, d, d)), run])
    cum_delta = path.points - path.points[0]
    return LiftedPath(path, cells, RoughIncrement(cum_delta, cum_second))


def levy_area(r: RoughIncrement) -> np.ndarray:
    """Antisymmetric part ``(X - X^T) / 2``; exactly antisymmetric by construction."""
    s = np.asarray(r.second)
    a = 0.5 * (s - np.swapaxes(s, -1, -2))
    return 0.5 * (a - np.swapaxes(a, -1, -2))


def _left_riemann(path, m):
    # split every segment into m equal pieces and take left-point sums
    t = np.concatenate([np.linspace(a, b, m, endpoint=False) for a, b in zip(path.times[:-1], path.times[1:])]
                       + [path.times[-1:]])
    x = path(t) - path.points[0]
    return x[-1], np.einsum("ki,kj->ij", x[:-1], np.diff(x, axis=0))


def riemann_lift(path: PathSample, refine: int = 2000) -> RoughIncrement:
    """Brute-force oracle for ``int (x_u - x_s) (x) dx_u`` from left Riemann sums.

    On a piecewise-linear path the left-sum error with ``m`` pieces per
    segment is exactly ``-(1/2m) sum_k w_k (x) w_k``, so the Richardson
    combination ``2 S_{2m} - S_m`` removes it; what remains is rounding.
    """
    delta, s1 = _left_riemann(path, refine)
    _, s2 = _left_riemann(path, 2 * refine)
    return RoughIncrement(delta, 2.0 * s2 - s1)


def ensemble_from_increments(w, h: float, cell_steps: int) -> Ensemble:
    """Wrap fine segment increments ``w`` (n, K, d) into an :class:`Ensemble` on cells of ``cell_steps``."""
    w = np.asarray(w, dtype=float)
    n, K, d = w.shape
    if K % cell_steps:
        raise ValueError("cell size must divide the number of segments")
    nc = K // cell_steps
    wc = w.reshape(n, nc, cell_steps, d)
    before = np.cumsum(wc, axis=2) - wc
    sec = np.einsum("ncki,nckj->ncij", before, wc) + 0.5 * np.einsum("ncki,nckj->ncij", wc, wc)
    pos = np.concatenate([np.zeros((n, 1, d)), np.cumsum(wc.sum(axis=2), axis=1)], axis=1)
    return Ensemble(h, cell_steps, pos, sec, np.zeros((n, 0)))


def moment_scaling_report(ensembles: dict, exponents=(2, 4, 8), levels=range(1, 7)) -> dict:
    """Dyadic moment ratios of rescaled paths over ``[0, 1]``.

    ``ensembles`` maps ``sigma`` to an :class:`Ensemble` whose unit-speed
    horizon is ``sigma^4`` and whose cells are no coarser than the finest
    dyadic level. For level ``j`` (scale ``2^-j``) the report gives the
    maximum over the ``2^j`` windows of ``E|dX|^a / 2^{-j a/2}`` and
    ``E|X2|^a / 2^{-j a}`` (Frobenius norm for the level-2 term).
    """
    sigmas = sorted(ensembles)
    levels = list(levels)
    exps = list(exponents)
    lvl1 = np.empty((len(exps), len(sigmas), len(levels)))
    lvl2 = np.empty_like(lvl1)
    underpowered = False
    for si, s in enumerate(sigmas):
        ens = ensembles[s]
        underpowered |= ens.n < MIN_ENSEMBLE
        cells_per_unit = ens.n_cells
        if abs(ens.cell_time * ens.n_cells - s ** 4) > 1e-9 * s ** 4:
            raise ValueError(f"ensemble for sigma={s} does not cover the rescaled horizon [0, 1]")
        for li, j in enumerate(levels):
            width = cells_per_unit // 2 ** j
            if width * 2 ** j != cells_per_unit or width == 0:
                raise ValueError(f"cell grid does not resolve level {j}")
            dt = 2.0 ** -j
            m1 = np.zeros(len(exps))
            m2 = np.zeros(len(exps))
            for k in range(2 ** j):
                r = ens.increment(k * width, (k + 1) * width, s)
                n1 = np.linalg.norm(r.delta, axis=1)
                n2 = np.linalg.norm(r.second, axis=(1, 2))
                for ai, a in enumerate(exps):
                    m1[ai] = max(m1[ai], (n1 ** a).mean() / dt ** (a / 2))
                    m2[ai] = max(m2[ai], (n2 ** a).mean() / dt ** a)
            lvl1[:, si, li] = m1
            lvl2[:, si, li] = m2
    report = {"sigmas": sigmas, "levels": levels, "scales": [2.0 ** -j for j in levels], "exponents": exps,
              "level1": {}, "level2": {}, "underpowered": bool(underpowered)}
    for ai, a in enumerate(exps):
        for key, arr in (("level1", lvl1[ai]), ("level2", lvl2[ai])):
            report[key][a] = {
                "ratios": arr.tolist(),
                "spread_across_scales": (arr.max(axis=1) / arr.min(axis=1)).tolist(),
                "spread_across_sigma": (arr.max(axis=0) / arr.min(axis=0)).tolist(),
                "spread_all": float(arr.max() / arr.min()),
                "sup_by_sigma": arr.max(axis=1).tolist(),
            }
    return report


def compose_all(incs) -> RoughIncrement:
    """Left-to-right Chen product of a sequence of increments."""
    it = iter(incs)
    acc = next(it)
    for r in it:
        acc = chen_compose(acc, r)
    return acc
