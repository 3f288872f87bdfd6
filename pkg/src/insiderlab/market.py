"""Market model: time grids, Brownian paths (free and pinned) and asset prices.

Randomness is counter based. Path ``i`` of a run seeded with ``seed`` draws
from ``Philox(key=(seed, i))``: the first normal of the stream fixes the
terminal value B_T, the following ones drive the increments. A path is
therefore the same whether it is generated alone or inside any batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from insiderlab import csvio

_SEED_LIMIT = 1 << 64


@dataclass(frozen=True)
class MarketParams:
    """Constant-rate bond, GBM stock with deterministic piecewise-constant drift.

    ``eta`` is either a number or a sequence of ``(start_time, value)`` pieces
    whose first start is 0.
    """

    r: float = 0.02
    eta: float | tuple = 0.1
    xi: float = 0.2
    T: float = 1.0
    s0: float = 1.0
    x0: float = 1.0

    def __post_init__(self):
        if not self.r >= 0:
            raise ValueError(f"r must be >= 0, got {self.r}")
        if not (self.xi > 0 and math.isfinite(self.xi) and math.isfinite(1.0 / self.xi)):
            raise ValueError(f"xi must be positive and finite, got {self.xi}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"T must be positive, got {self.T}")
        if not self.s0 > 0:
            raise ValueError(f"s0 must be positive, got {self.s0}")
        if not self.x0 > 0:
            raise ValueError(f"x0 must be positive, got {self.x0}")
        if isinstance(self.eta, (int, float)):
            if not math.isfinite(self.eta):
                raise ValueError("eta must be finite")
        else:
            pieces = tuple((float(a), float(b)) for a, b in self.eta)
            if not pieces or pieces[0][0] != 0.0:
                raise ValueError("piecewise eta must start at t=0")
            starts = [p[0] for p in pieces]
            if any(b <= a for a, b in zip(starts, starts[1:])):
                raise ValueError("eta piece starts must be strictly increasing")
            if not all(math.isfinite(v) for _, v in pieces):
                raise ValueError("eta must be bounded")
            object.__setattr__(self, "eta", pieces)

    @property
    def constant_eta(self) -> bool:
        return not isinstance(self.eta, tuple)

    def _pieces(self):
        if self.constant_eta:
            return np.array([0.0]), np.array([float(self.eta)])
        starts, vals = zip(*self.eta)
        return np.array(starts), np.array(vals)

    def eta_at(self, t):
        starts, vals = self._pieces()
        idx = np.searchsorted(starts, np.asarray(t, dtype=float), side="right") - 1
        return vals[np.clip(idx, 0, len(vals) - 1)]

    def eta_integral(self, t):
        """Integral of eta over [0, t]."""
        t = np.asarray(t, dtype=float)
        starts, vals = self._pieces()
        ends = np.append(starts[1:], np.inf)
        covered = np.clip(t[..., None] - starts, 0.0, ends - starts)
        return covered @ vals

    def beta(self, t):
        """Market price of risk (eta_t - r) / xi."""
        return (self.eta_at(t) - self.r) / self.xi

    def beta_sq_integral(self, t):
        t = np.asarray(t, dtype=float)
        starts, vals = self._pieces()
        ends = np.append(starts[1:], np.inf)
        covered = np.clip(t[..., None] - starts, 0.0, ends - starts)
        return covered @ (((vals - self.r) / self.xi) ** 2)


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray
    T: float

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError("grid must start at 0")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if nodes[-1] > self.T:
            raise ValueError("grid extends past the horizon")
        nodes.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)

    @property
    def terminal_gap(self) -> float:
        return self.T - self.nodes[-1]

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def __len__(self):
        return self.nodes.size


def make_grid(T, n_steps, terminal_gap=0.0, refinement="uniform") -> TimeGrid:
    """Grid on [0, T - terminal_gap].

    ``geometric`` spaces the time-to-go T - t geometrically from T down to
    ``terminal_gap``, so steps shrink toward the last node; it needs a
    positive gap.
    """
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not 0 <= terminal_gap < T:
        raise ValueError(f"terminal_gap must lie in [0, T), got {terminal_gap}")
    end = T - terminal_gap
    if refinement == "uniform":
        nodes = np.linspace(0.0, end, n_steps + 1)
    elif refinement == "geometric":
        if terminal_gap <= 0:
            raise ValueError("geometric refinement needs a positive terminal_gap")
        to_go = T * (terminal_gap / T) ** (np.arange(n_steps + 1) / n_steps)
        nodes = T - to_go
        nodes[0] = 0.0
        nodes[-1] = end
    else:
        raise ValueError(f"unknown refinement {refinement!r}")
    return TimeGrid(nodes, T)


def path_rng(seed: int, index: int) -> np.random.Generator:
    if not 0 <= seed < _SEED_LIMIT:
        raise ValueError("seed must be a non-negative 64-bit integer")
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(index)))


def path_normals(seed: int, n_draws: int, first: int, count: int) -> np.ndarray:
    """Standard normals, one row per path index in [first, first + count)."""
    out = np.empty((count, n_draws))
    for j in range(count):
        out[j] = path_rng(seed, first + j).standard_normal(n_draws)
    return out


@dataclass(frozen=True)
class BrownianPath:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        if len(self.values) != len(self.grid):
            raise ValueError("path and grid lengths differ")
        if self.values[0] != 0.0:
            raise ValueError("Brownian path must start at 0")


@dataclass(frozen=True)
class AssetPaths:
    grid: TimeGrid
    bond: np.ndarray
    stock: np.ndarray


def brownian_from_normals(grid: TimeGrid, z: np.ndarray) -> np.ndarray:
    """Free Brownian paths from the increment normals (columns 1..N of the stream)."""
    z = np.atleast_2d(z)
    out = np.zeros((z.shape[0], len(grid)))
    np.cumsum(z[:, 1:] * np.sqrt(grid.steps), axis=1, out=out[:, 1:])
    return out


def bridge_from_normals(grid: TimeGrid, terminal: np.ndarray, z: np.ndarray, T=None) -> np.ndarray:
    """Paths pinned at ``terminal`` at time T, stepped with the bridge transition law."""
    T = grid.T if T is None else T
    z = np.atleast_2d(z)
    terminal = np.broadcast_to(np.asarray(terminal, dtype=float), (z.shape[0],))
    nodes = grid.nodes
    out = np.zeros((z.shape[0], nodes.size))
    for i in range(nodes.size - 1):
        t, dt = nodes[i], nodes[i + 1] - nodes[i]
        to_go = T - t
        b = out[:, i]
        if nodes[i + 1] == T:
            out[:, i + 1] = terminal
            continue
        mean = b + dt * (terminal - b) / to_go
        var = dt * (to_go - dt) / to_go
        out[:, i + 1] = mean + np.sqrt(var) * z[:, i + 1]
    return out


def terminal_from_normals(z0, T, window=None):
    """B_T from the stream's first normal, optionally restricted to ``window`` = (lo, hi).

    The restricted draw is an inverse-cdf map of the same uniform, so it has
    the law of B_T conditioned on lying in the window.
    """
    z0 = np.asarray(z0, dtype=float)
    sd = math.sqrt(T)
    if window is None:
        return sd * z0
    lo, hi = window
    plo, phi = ndtr(lo / sd), ndtr(hi / sd)
    return sd * ndtri(plo + ndtr(z0) * (phi - plo))


def sample_brownian(grid: TimeGrid, seed: int, index: int = 0) -> BrownianPath:
    z = path_normals(seed, len(grid), index, 1)
    return BrownianPath(grid, brownian_from_normals(grid, z)[0])


def sample_bridge(grid: TimeGrid, terminal_time: float, terminal_value: float, seed: int,
                  index: int = 0) -> BrownianPath:
    if grid.nodes[-1] > terminal_time:
        raise ValueError("grid extends past the pinning time")
    if not math.isfinite(terminal_value):
        raise ValueError("terminal value must be finite")
    z = path_normals(seed, len(grid), index, 1)
    values = bridge_from_normals(grid, terminal_value, z, T=terminal_time)[0]
    return BrownianPath(grid, values)


def stock_from_brownian(params: MarketParams, nodes, b):
    drift = params.eta_integral(nodes) - 0.5 * params.xi**2 * np.asarray(nodes)
    return params.s0 * np.exp(drift + params.xi * np.asarray(b))


def terminal_stock(params: MarketParams, b_T):
    return stock_from_brownian(params, params.T, b_T)


def asset_paths(params: MarketParams, bpath: BrownianPath) -> AssetPaths:
    nodes = bpath.grid.nodes
    if nodes[-1] > params.T:
        raise ValueError("path extends past the horizon")
    return AssetPaths(
        bpath.grid,
        np.exp(params.r * nodes),
        stock_from_brownian(params, nodes, bpath.values),
    )


def write_paths_csv(target, paths: AssetPaths, bpath: BrownianPath):
    rows = zip(paths.grid.nodes, bpath.values, paths.stock, paths.bond)
    csvio.write_csv(target, ["t", "B", "S", "D"], rows)
