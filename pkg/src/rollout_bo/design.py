"""Space-filling initial designs with small fill distance."""
from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import qmc

from .optim import BoxBounds


def grid_resolution(dim: int) -> int:
    return 50 if dim <= 2 else 15


def fill_grid(bounds: BoxBounds, per_axis: int | None = None) -> np.ndarray:
    """Tensor grid including the box corners, used to measure fill distance."""
    n = per_axis or grid_resolution(bounds.dim)
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(bounds.lower, bounds.upper)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, bounds.dim)


def _cell_centers(bounds: BoxBounds, per_axis: int) -> np.ndarray:
    axes = [lo + (np.arange(per_axis) + 0.5) / per_axis * (hi - lo)
            for lo, hi in zip(bounds.lower, bounds.upper)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, bounds.dim)


def fill_distance(points, bounds: BoxBounds, grid: np.ndarray | None = None) -> float:
    """Largest distance from a grid point to its nearest design point."""
    grid = fill_grid(bounds) if grid is None else grid
    return float(cdist(grid, np.atleast_2d(points)).min(axis=1).max())


def _maximin_lhs(n_points: int, bounds: BoxBounds, rng: np.random.Generator, tries: int = 20) -> np.ndarray:
    sampler = qmc.LatinHypercube(d=bounds.dim, seed=rng)
    best, best_score = None, -np.inf
    for _ in range(tries):
        u = sampler.random(n_points)
        score = np.inf if n_points < 2 else cdist(u, u)[np.triu_indices(n_points, 1)].min()
        if score > best_score:
            best, best_score = u, score
    return bounds.from_unit(best)


def _soft_fill(near: np.ndarray) -> np.ndarray:
    # power-16 mean of nearest distances: breaks ties on the max plateau
    scale = near.max(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    q = near / scale
    for _ in range(4):
        np.square(q, out=q)
    return scale * np.mean(q, axis=0) ** (1.0 / 16.0)


def minimax_design(n_points: int, bounds: BoxBounds, rng_seed=0, max_passes: int = 200,
                   return_history: bool = False):
    """Approximate minimax-distance design.

    Starts from the best of several random Latin hypercubes under the maximin
    criterion, then repeatedly applies the single point exchange (design point
    replaced by a cell-center candidate) that most reduces a high-power mean
    of grid-to-design distances, among exchanges that do not increase the fill
    distance. Stops when no such exchange helps.
    """
    if n_points < 1:
        raise ValueError("n_points must be positive")
    rng = np.random.default_rng(rng_seed)
    grid = fill_grid(bounds)
    res = grid_resolution(bounds.dim)
    cands = _cell_centers(bounds, res if bounds.dim == 1 else res // 2)
    design = _maximin_lhs(n_points, bounds, rng)

    d_gc = cdist(grid, cands)
    d_gp = cdist(grid, design)
    near = d_gp.min(axis=1)
    current, surrogate = near.max(), _soft_fill(near)
    history = [current]
    for _ in range(max_passes):
        best = (surrogate, None, None)
        for i in range(n_points):
            others = np.delete(d_gp, i, axis=1)
            base = others.min(axis=1) if others.size else np.full(grid.shape[0], np.inf)
            new_near = np.minimum(base[:, None], d_gc)
            ok = new_near.max(axis=0) <= current + 1e-12
            if not ok.any():
                continue
            soft = np.where(ok, _soft_fill(new_near), np.inf)
            j = int(np.argmin(soft))
            if soft[j] < best[0] * (1 - 1e-12):
                best = (soft[j], i, j)
        if best[1] is None:
            break
        _, i, j = best
        design[i] = cands[j]
        d_gp[:, i] = d_gc[:, j]
        near = d_gp.min(axis=1)
        current, surrogate = near.max(), _soft_fill(near)
        history.append(current)
    if return_history:
        return design, history
    return design
