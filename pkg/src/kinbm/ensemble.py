"""Ensembles of integrated (and lifted) velocity paths recorded on a cell grid."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import NumericalError, RandomSource, RoughIncrement
from .velocity import VelocityModel

log = logging.getLogger(__name__)

# purpose tags keep the random streams of different tasks apart under one seed
PURPOSE_ENSEMBLE = 1
PURPOSE_CHAIN = 2
PURPOSE_BROWNIAN = 3
PURPOSE_SAMPLES = 4


@dataclass
class Ensemble:
    """Unit-speed paths of ``n`` trajectories recorded every ``cell_steps`` steps.

    ``positions[:, c]`` is ``x`` at the start of cell ``c`` (``x_0 = 0``) and
    ``cell_second[:, c]`` the level-2 term of the path over cell ``c``.
    """

    h: float
    cell_steps: int
    positions: np.ndarray
    cell_second: np.ndarray
    final_states: np.ndarray
    velocities: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def n_cells(self):
        return self.cell_second.shape[1]

    @property
    def dim(self):
        return self.positions.shape[2]

    @property
    def cell_time(self):
        return self.h * self.cell_steps

    @property
    def times(self):
        return self.cell_time * np.arange(self.n_cells + 1)

    def increment(self, c0: int, c1: int, sigma: float = 1.0) -> RoughIncrement:
        """Rough increment over cells ``[c0, c1)``, rescaled to ``X^sigma``."""
        if not 0 <= c0 <= c1 <= self.n_cells:
            raise ValueError("cell range out of bounds")
        p = self.positions[:, c0:c1 + 1] - self.positions[:, c0:c0 + 1]
        w = np.diff(p, axis=1)
        second = self.cell_second[:, c0:c1].sum(axis=1) + np.einsum("nci,ncj->nij", p[:, :-1], w)
        s2 = float(sigma) ** -2
        return RoughIncrement(s2 * p[:, -1], s2 * s2 * second)

    def rescaled_positions(self, sigma: float):
        """``(times, X^sigma)`` on the cell grid: ``t -> sigma^-2 x_{sigma^4 t}``."""
        s4 = float(sigma) ** 4
        return self.times / s4, self.positions / sigma ** 2


def _block_run(model, states, gens, h, n_cells, cell_steps, vel_thin):
    n, d = len(states), model.dim
    pos = np.zeros((n, n_cells + 1, d))
    sec = np.empty((n, n_cells, d, d))
    vels = [] if vel_thin else None
    for c in range(n_cells):
        states, dx, xx, vel = model.advance_lifted(states, h, cell_steps, gens, thin=vel_thin)
        pos[:, c + 1] = pos[:, c] + dx
        sec[:, c] = xx
        if vel_thin:
            vels.append(vel)
    return states, pos, sec, (np.concatenate(vels, axis=1) if vel_thin else None)


def simulate_ensemble(model: VelocityModel, n_traj: int, h: float, n_cells: int, cell_steps: int,
                      seed: int, start=None, burn_in_steps: int = 0, block: int = 500,
                      vel_thin: int | None = None, max_halvings: int = 3,
                      purpose: int = PURPOSE_ENSEMBLE) -> Ensemble:
    """Run ``n_traj`` independent trajectories over ``n_cells * cell_steps`` steps.

    ``start`` is None for exact stationary starts, or a fixed initial state
    (one row, broadcast). Trajectory ``i`` uses stream ``(seed, purpose, i)``.
    On a non-finite state the whole run restarts with ``h / 2`` (and twice the
    steps per cell), at most ``max_halvings`` times.
    """
    for attempt in range(max_halvings + 1):
        try:
            return _simulate(model, n_traj, h, n_cells, cell_steps, seed, start, burn_in_steps,
                             block, vel_thin, purpose)
        except NumericalError as err:
            if attempt == max_halvings:
                raise
            log.warning("non-finite state at h=%g (%s); retrying with h/2", h, err.diagnostics)
            h, cell_steps, burn_in_steps = h / 2, cell_steps * 2, burn_in_steps * 2
            vel_thin = vel_thin * 2 if vel_thin else None


def _simulate(model, n_traj, h, n_cells, cell_steps, seed, start, burn_in_steps, block, vel_thin, purpose):
    d = model.dim
    positions = np.empty((n_traj, n_cells + 1, d))
    second = np.empty((n_traj, n_cells, d, d))
    final = np.empty((n_traj, model.state_width))
    vel_all = None
    for b0 in range(0, n_traj, block):
        b1 = min(n_traj, b0 + block)
        gens = [RandomSource.for_trajectory(seed, i, purpose).generator for i in range(b0, b1)]
        if start is None:
            states = model.initial_states(gens)
        else:
            states = np.tile(np.asarray(start, dtype=float).reshape(1, -1), (b1 - b0, 1))
        if burn_in_steps:
            states, _ = model.advance(states, h, burn_in_steps, gens, thin=burn_in_steps)
        states, pos, sec, vel = _block_run(model, states, gens, h, n_cells, cell_steps, vel_thin)
        positions[b0:b1] = pos
        second[b0:b1] = sec
        final[b0:b1] = states
        if vel is not None:
            if vel_all is None:
                vel_all = np.empty((n_traj,) + vel.shape[1:])
            vel_all[b0:b1] = vel
    meta = {"model": model.name, "params": model.params(), "n_traj": n_traj, "h": h,
            "cell_steps": cell_steps, "n_cells": n_cells, "seed": seed, "burn_in_steps": burn_in_steps,
            "stationary_start": start is None}
    return Ensemble(h, cell_steps, positions, second, final, vel_all, meta)


def simulate_chains(model: VelocityModel, n_chains: int, h: float, n_steps: int, thin: int, seed: int,
                    start=None, burn_in_steps: int = 0, chunk: int = 200_000,
                    purpose: int = PURPOSE_CHAIN) -> np.ndarray:
    """Long single trajectories, velocities thinned to spacing ``thin * h``.

    Returns an array ``(n_chains, ceil(n_steps / thin), d)``; memory is bounded
    by advancing in chunks of ``chunk`` steps (rounded to a multiple of ``thin``).
    """
    chunk = max(thin, (chunk // thin) * thin)
    gens = [RandomSource.for_trajectory(seed, i, purpose).generator for i in range(n_chains)]
    if start is None:
        states = model.initial_states(gens)
    else:
        states = np.tile(np.asarray(start, dtype=float).reshape(1, -1), (n_chains, 1))
    if burn_in_steps:
        states, _ = model.advance(states, h, burn_in_steps, gens, thin=burn_in_steps)
    out = []
    done = 0
    while done < n_steps:
        k = min(chunk, n_steps - done)
        states, vel = model.advance(states, h, k, gens, thin=thin)
        out.append(vel)
        done += k
    return np.concatenate(out, axis=1)
