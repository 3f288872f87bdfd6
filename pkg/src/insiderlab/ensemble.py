"""Chunked path ensembles with joint sampling of (B_T, G, path).

Each chunk is a contiguous range of path indices; every path is generated
from its own counter-based stream, so chunking only bounds memory and never
changes results. Reductions must be done over the full per-path arrays in
index order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from insiderlab.drift import InsiderInfo
from insiderlab.market import (
    TimeGrid,
    bridge_from_normals,
    brownian_from_normals,
    path_normals,
    terminal_from_normals,
)

DEFAULT_CHUNK = 4096


@dataclass
class Chunk:
    start: int
    b: np.ndarray  # (paths, nodes)
    b_T: np.ndarray  # terminal Brownian value per path
    g: np.ndarray | None  # realized indicator, None for free or exact runs

    @property
    def stop(self):
        return self.start + self.b.shape[0]

    def realized(self, info: InsiderInfo | None):
        if info is None or info.kind == "exact":
            return self.b_T
        return self.g


def iter_paths(grid: TimeGrid, n_paths: int, seed: int, info: InsiderInfo | None = None,
               condition_g: int | None = None, chunk: int = DEFAULT_CHUNK) -> Iterator[Chunk]:
    """Yield path chunks.

    Without ``info`` the paths are free Brownian motions (B_T still reported
    when the grid reaches T). With ``info`` each path is a bridge to a
    B_T ~ N(0, T) drawn first, so (path, G) has the exact joint law.
    ``condition_g=1`` for interval information draws B_T from its law
    restricted to [c1, c2], i.e. samples given {G = 1}.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    for start in range(0, n_paths, chunk):
        count = min(chunk, n_paths - start)
        z = path_normals(seed, len(grid), start, count)
        if info is None:
            b = brownian_from_normals(grid, z)
            b_T = b[:, -1] if grid.nodes[-1] == grid.T else np.full(count, np.nan)
            yield Chunk(start, b, b_T, None)
            continue
        window = None
        if condition_g is not None:
            if info.kind != "interval" or condition_g != 1:
                raise ValueError("only interval information can be conditioned on G = 1")
            window = (info.c1, info.c2)
        b_T = terminal_from_normals(z[:, 0], info.T, window)
        b = bridge_from_normals(grid, b_T, z, T=info.T)
        g = None if info.kind == "exact" else info.indicator(b_T)
        yield Chunk(start, b, b_T, g)
