"""Periodic grids, label partitions and spectral Gaussian convolution.

All fields live on the flat torus ``[0, Lambda)^d`` sampled at cell
centres.  Convolution with the Gaussian of variance ``h`` is applied as the
exact Fourier multiplier ``exp(-h |k|^2 / 2)``, ``k = 2 pi m / Lambda``, so
there is no kernel truncation.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .errors import GridMismatch, NonpositiveVariance, PhaseOutOfRange

__all__ = [
    "TorusGrid",
    "ScalarField",
    "Partition",
    "gaussian_convolve",
    "gradient_convolve",
    "convolve_array",
    "gradient_convolve_array",
    "spectral_divergence",
    "indicator",
    "indicators",
    "symmetric_difference_volume",
]

_WORKERS = int(os.environ["MBO_FFT_WORKERS"]) if os.environ.get("MBO_FFT_WORKERS") else None


@dataclass(frozen=True)
class TorusGrid:
    d: int
    Lambda: float
    n_cells: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if int(self.n_cells) != self.n_cells or self.n_cells < 4:
            raise ValueError(f"n_cells must be an integer >= 4, got {self.n_cells}")
        if not (self.Lambda > 0 and np.isfinite(self.Lambda)):
            raise ValueError(f"Lambda must be positive, got {self.Lambda}")
        object.__setattr__(self, "n_cells", int(self.n_cells))
        object.__setattr__(self, "Lambda", float(self.Lambda))

    @property
    def dx(self) -> float:
        return self.Lambda / self.n_cells

    @property
    def shape(self) -> tuple:
        return (self.n_cells,) * self.d

    @property
    def size(self) -> int:
        return self.n_cells**self.d

    @property
    def cell_volume(self) -> float:
        return self.dx**self.d

    @property
    def volume(self) -> float:
        return self.Lambda**self.d

    @property
    def axes(self) -> tuple:
        return tuple(range(-self.d, 0))

    def centers_1d(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.dx

    def mesh(self, sparse: bool = True) -> list:
        """Cell-centre coordinates, one array per axis."""
        c = self.centers_1d()
        return np.meshgrid(*([c] * self.d), indexing="ij", sparse=sparse)

    def periodic_offsets(self, center) -> list:
        """Minimum-image displacement ``x - center`` per axis (sparse)."""
        center = np.broadcast_to(np.asarray(center, dtype=float), (self.d,))
        L = self.Lambda
        out = []
        for a, x in enumerate(self.mesh(sparse=True)):
            out.append((x - center[a] + 0.5 * L) % L - 0.5 * L)
        return out

    def resolution(self, h: float) -> float:
        """``sqrt(h) / dx``; the scheme is trustworthy for values >= 3."""
        return float(np.sqrt(h) / self.dx)


def _check_h(h):
    if not (h > 0):
        raise NonpositiveVariance(f"variance must be positive, got {h}")


@lru_cache(maxsize=32)
def _wavenumbers(d: int, Lambda: float, n: int):
    """Angular wavenumbers per axis in ``rfftn`` layout, broadcastable."""
    ks = []
    for a in range(d):
        if a == d - 1:
            m = sfft.rfftfreq(n, d=1.0 / n)
        else:
            m = sfft.fftfreq(n, d=1.0 / n)
        shape = [1] * d
        shape[a] = m.size
        ks.append((2.0 * np.pi / Lambda * m).reshape(shape))
    return tuple(ks)


@lru_cache(maxsize=32)
def _gauss_multiplier(d: int, Lambda: float, n: int, h: float) -> np.ndarray:
    ks = _wavenumbers(d, Lambda, n)
    k2 = sum(k * k for k in ks)
    m = np.exp(-0.5 * h * k2)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=16)
def _derivative_wavenumbers(d: int, Lambda: float, n: int):
    """Wavenumbers with the Nyquist mode zeroed (odd derivatives)."""
    out = []
    for k in _wavenumbers(d, Lambda, n):
        k = k.copy()
        if n % 2 == 0:
            k[np.isclose(np.abs(k), np.pi * n / Lambda)] = 0.0
        k.setflags(write=False)
        out.append(k)
    return tuple(out)


def _rfft(a, grid):
    return sfft.rfftn(a, axes=grid.axes, workers=_WORKERS)


def _irfft(a, grid):
    return sfft.irfftn(a, s=grid.shape, axes=grid.axes, workers=_WORKERS)


def convolve_array(values: np.ndarray, grid: TorusGrid, h: float) -> np.ndarray:
    """``G_h *`` applied over the trailing ``d`` axes of ``values``."""
    _check_h(h)
    if values.shape[-grid.d:] != grid.shape:
        raise GridMismatch(f"array shape {values.shape} does not end in {grid.shape}")
    mult = _gauss_multiplier(grid.d, grid.Lambda, grid.n_cells, float(h))
    return _irfft(_rfft(values, grid) * mult, grid)


def gradient_convolve_array(values: np.ndarray, grid: TorusGrid, h: float) -> np.ndarray:
    """``grad (G_h * f)``; the component axis is inserted before the spatial axes."""
    _check_h(h)
    if values.shape[-grid.d:] != grid.shape:
        raise GridMismatch(f"array shape {values.shape} does not end in {grid.shape}")
    mult = _gauss_multiplier(grid.d, grid.Lambda, grid.n_cells, float(h))
    fh = _rfft(values, grid) * mult
    ks = _derivative_wavenumbers(grid.d, grid.Lambda, grid.n_cells)
    comps = [_irfft(1j * k * fh, grid) for k in ks]
    return np.stack(comps, axis=-grid.d - 1)


def spectral_divergence(vec: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Divergence of a ``(d, *shape)`` vector field by spectral differentiation."""
    ks = _derivative_wavenumbers(grid.d, grid.Lambda, grid.n_cells)
    acc = 0
    for a in range(grid.d):
        acc = acc + 1j * ks[a] * _rfft(vec[a], grid)
    return _irfft(acc, grid)


@dataclass(frozen=True)
class ScalarField:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise GridMismatch(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def __add__(self, other):
        _same_grid(self.grid, other.grid)
        return ScalarField(self.grid, self.values + other.values)


class Partition:
    """Admissible partition stored as one 1-based phase label per cell."""

    __slots__ = ("grid", "labels", "P")

    def __init__(self, grid: TorusGrid, labels, P: int):
        labels = np.asarray(labels)
        if labels.shape != grid.shape:
            raise GridMismatch(f"labels shape {labels.shape} != grid shape {grid.shape}")
        if not 1 <= P <= 255:
            raise ValueError(f"phase count must be in [1, 255], got {P}")
        if labels.size and (labels.min() < 1 or labels.max() > P):
            raise PhaseOutOfRange(f"labels must lie in 1..{P}")
        self.grid = grid
        self.labels = labels.astype(np.uint8, copy=True)
        self.labels.setflags(write=False)
        self.P = int(P)

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.grid == other.grid and self.P == other.P and np.array_equal(self.labels, other.labels)

    def __repr__(self):
        return f"Partition(grid={self.grid}, P={self.P})"

    def volumes(self) -> np.ndarray:
        counts = np.bincount(self.labels.ravel(), minlength=self.P + 1)[1:]
        return counts * self.grid.cell_volume

    def phases_present(self) -> np.ndarray:
        return np.flatnonzero(np.bincount(self.labels.ravel(), minlength=self.P + 1)[1:]) + 1

    def with_labels(self, labels) -> "Partition":
        return Partition(self.grid, labels, self.P)

    def indicator_stack(self, dtype=float) -> np.ndarray:
        """``(P, *shape)`` array of phase indicators."""
        phases = np.arange(1, self.P + 1, dtype=np.uint8).reshape((self.P,) + (1,) * self.grid.d)
        return (self.labels[None] == phases).astype(dtype)


def _same_grid(a: TorusGrid, b: TorusGrid):
    if a != b:
        raise GridMismatch(f"{a} != {b}")


def check_compatible(p: Partition, q: Partition):
    _same_grid(p.grid, q.grid)
    if p.P != q.P:
        raise GridMismatch(f"phase counts differ: {p.P} != {q.P}")


def gaussian_convolve(f: ScalarField, h: float) -> ScalarField:
    return ScalarField(f.grid, convolve_array(f.values, f.grid, h))


def gradient_convolve(f: ScalarField, h: float) -> list:
    g = gradient_convolve_array(f.values, f.grid, h)
    return [ScalarField(f.grid, g[a]) for a in range(f.grid.d)]


def indicator(p: Partition, i: int) -> ScalarField:
    if not 1 <= i <= p.P:
        raise PhaseOutOfRange(f"phase {i} not in 1..{p.P}")
    return ScalarField(p.grid, (p.labels == i).astype(float))


def indicators(p: Partition) -> list:
    return [indicator(p, i) for i in range(1, p.P + 1)]


def symmetric_difference_volume(p: Partition, q: Partition) -> float:
    """``sum_i int |chi_i(p) - chi_i(q)| dx``, i.e. twice the volume of differing cells."""
    check_compatible(p, q)
    return 2.0 * np.count_nonzero(p.labels != q.labels) * p.grid.cell_volume
