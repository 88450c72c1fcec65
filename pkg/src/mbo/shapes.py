"""Cell-centre rasterization of analytic initial data."""
from __future__ import annotations

import numpy as np

from .fields import Partition, TorusGrid

__all__ = ["ball", "stripe", "half_space", "sectors", "voronoi", "single_phase"]


def single_phase(grid: TorusGrid, P: int = 2, phase: int = 1) -> Partition:
    return Partition(grid, np.full(grid.shape, phase, dtype=np.uint8), P)


def ball(grid: TorusGrid, R: float, center=None, inside: int = 1, outside: int = 2, P: int = 2) -> Partition:
    """Disk (d=2) or ball (d=3) of radius ``R``, periodic minimum image."""
    if center is None:
        center = [grid.Lambda / 2] * grid.d
    if 2 * R >= grid.Lambda:
        raise ValueError(f"ball of radius {R} does not fit in a torus of side {grid.Lambda}")
    r2 = sum(o * o for o in grid.periodic_offsets(center))
    return Partition(grid, np.where(r2 < R * R, inside, outside).astype(np.uint8), P)


def stripe(grid: TorusGrid, width: float, start: float = None, axis: int = 0, inside: int = 1,
           outside: int = 2, P: int = 2) -> Partition:
    """Slab ``start <= x_axis < start + width`` (periodically wrapped)."""
    if not 0 < width < grid.Lambda:
        raise ValueError(f"stripe width must lie in (0, {grid.Lambda})")
    if start is None:
        start = 0.5 * (grid.Lambda - width)
    x = grid.mesh()[axis]
    s = (x - start) % grid.Lambda
    lab = np.where(s < width, inside, outside).astype(np.uint8)
    return Partition(grid, np.broadcast_to(lab, grid.shape), P)


def half_space(grid: TorusGrid, normal, offset: float, center=None, inside: int = 1, outside: int = 2,
               P: int = 2) -> Partition:
    """Cells with ``(x - center) . normal > offset`` (minimum image about ``center``)."""
    normal = np.asarray(normal, dtype=float)
    normal = normal / np.linalg.norm(normal)
    if center is None:
        center = [grid.Lambda / 2] * grid.d
    proj = sum(normal[a] * o for a, o in enumerate(grid.periodic_offsets(center)))
    lab = np.where(proj > offset, inside, outside).astype(np.uint8)
    return Partition(grid, np.broadcast_to(lab, grid.shape), P)


def sectors(grid: TorusGrid, angles_deg, center=None, start_deg: float = None) -> Partition:
    """Angular sectors around ``center`` in the first two axes; phase ``i`` gets ``angles_deg[i-1]``.

    By default phase 1 is centred on the ``-x_1`` direction so that the
    configuration is mirror symmetric about the ``x_1`` axis.
    """
    angles = np.asarray(angles_deg, dtype=float)
    if np.any(angles <= 0) or not np.isclose(angles.sum(), 360.0):
        raise ValueError(f"sector angles must be positive and sum to 360, got {angles.tolist()}")
    if grid.d < 2:
        raise ValueError("sectors need d >= 2")
    if center is None:
        center = [grid.Lambda / 2] * grid.d
    if start_deg is None:
        start_deg = 180.0 - angles[0] / 2
    off = grid.periodic_offsets(center)
    theta = np.degrees(np.arctan2(off[1], off[0]))
    theta = np.broadcast_to((theta - start_deg) % 360.0, grid.shape)
    edges = np.cumsum(angles)[:-1]
    lab = (np.searchsorted(edges, theta, side="right") + 1).astype(np.uint8)
    return Partition(grid, lab, len(angles))


def voronoi(grid: TorusGrid, count: int, rng: np.random.Generator, P: int = None) -> Partition:
    """Periodic Voronoi tessellation of ``count`` uniform seeds; cell ``k`` is phase ``k + 1``."""
    P = count if P is None else P
    if count > P:
        raise ValueError("need one phase per seed")
    seeds = rng.uniform(0.0, grid.Lambda, size=(count, grid.d))
    best = np.full(grid.shape, np.inf)
    lab = np.zeros(grid.shape, dtype=np.uint8)
    for k, s in enumerate(seeds):
        r2 = np.broadcast_to(sum(o * o for o in grid.periodic_offsets(s)), grid.shape)
        closer = r2 < best
        best = np.where(closer, r2, best)
        lab[closer] = k + 1
    return Partition(grid, lab, P)
