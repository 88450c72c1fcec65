"""Approximate energies, metric terms, inner variations and dissipation measures.

Every integral is a midpoint cell sum times ``dx^d``.  Convolutions are the
exact periodic Gaussian multipliers of :mod:`mbo.fields`.

For tensions ``sigma`` and a stack ``a = (a_1, ..., a_P)`` of fields the
quadratic form

    Q_h(a) = h^{-1/2} sum_ij sigma_ij int a_i G_h * a_j dx

gives both the approximate energy ``E_h(chi) = Q_h(chi)`` and the metric term
``-Q_h(chi - chi')`` of one thresholding step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from . import kernels
from .errors import GridMismatch, UnresolvedScale
from .fields import (
    Partition,
    ScalarField,
    TorusGrid,
    _derivative_wavenumbers,
    _gauss_multiplier,
    _check_h,
    check_compatible,
    convolve_array,
    spectral_divergence,
)
from .tensions import SurfaceTensionMatrix

__all__ = [
    "C0",
    "StepRecord",
    "DissipationDensity",
    "DissipationReport",
    "MonotonicityReport",
    "quadratic_form",
    "approximate_energy",
    "metric_term",
    "energy_dissipation_check",
    "localized_energy",
    "phase_area_density",
    "approximate_monotonicity_check",
    "monotonicity_factor",
    "first_variation_energy",
    "first_variation_metric",
    "elg_residual",
    "dissipation_measure",
    "DissipationAccumulator",
    "interface_mask",
    "stripe_energy",
    "disk_energy",
    "sphere_energy",
]

C0 = 1.0 / math.sqrt(2.0 * math.pi)


def _sigma_array(sigma) -> np.ndarray:
    if isinstance(sigma, SurfaceTensionMatrix):
        return np.ascontiguousarray(sigma.sigma, dtype=float)
    s = np.asarray(sigma, dtype=float)
    if s.ndim == 0:  # two-phase shorthand
        return np.array([[0.0, float(s)], [float(s), 0.0]])
    return np.ascontiguousarray(s)


def _check_sigma(s: np.ndarray, P: int):
    if s.shape != (P, P):
        raise GridMismatch(f"tension matrix shape {s.shape} does not match {P} phases")


@dataclass(frozen=True)
class StepRecord:
    n: int
    t: float
    Eh: float
    dissipation: float
    volumes: tuple
    elg_residual: float = None
    ties: int = 0


# --------------------------------------------------------------------------
# energies


def quadratic_form(a: np.ndarray, grid: TorusGrid, h: float, sigma) -> np.ndarray:
    """``Q_h`` of a stack ``a`` of shape ``(..., P, *grid.shape)``; leading axes are batched."""
    _check_h(h)
    s = _sigma_array(sigma)
    a = np.asarray(a, dtype=float)
    P = a.shape[-grid.d - 1]
    _check_sigma(s, P)
    u = convolve_array(a, grid, h)
    phi = np.tensordot(s, u, axes=([1], [a.ndim - grid.d - 1]))  # (P, ..., *shape)
    phi = np.moveaxis(phi, 0, a.ndim - grid.d - 1)
    axes = tuple(range(a.ndim - grid.d - 1, a.ndim))
    return np.sum(a * phi, axis=axes) * grid.cell_volume / math.sqrt(h)


def _phi_flat(chi: Partition, h: float, s: np.ndarray) -> np.ndarray:
    u = convolve_array(chi.indicator_stack(), chi.grid, h).reshape(chi.P, -1)
    return np.ascontiguousarray(s @ u)


def approximate_energy(chi: Partition, h: float, sigma) -> float:
    """``E_h(chi)``, both ordered pairs ``(i, j)`` and ``(j, i)`` included."""
    s = _sigma_array(sigma)
    _check_sigma(s, chi.P)
    _check_h(h)
    phi = _phi_flat(chi, h, s)
    lab = np.ascontiguousarray(chi.labels.reshape(-1))
    return float(kernels.energy_sum(phi, lab)) * chi.grid.cell_volume / math.sqrt(h)


def metric_term(chi: Partition, chi_prev: Partition, h: float, sigma) -> float:
    """``-E_h(chi - chi_prev)``; nonnegative for admissible tensions and zero iff equal."""
    check_compatible(chi, chi_prev)
    if np.array_equal(chi.labels, chi_prev.labels):
        return 0.0
    w = chi.indicator_stack() - chi_prev.indicator_stack()
    return -float(quadratic_form(w, chi.grid, h, sigma))


def stripe_energy(Lambda: float, d: int, sigma12: float = 1.0) -> float:
    """Limit energy of a slab with two flat interfaces of area ``Lambda^(d-1)`` each."""
    return 2.0 * C0 * sigma12 * 2.0 * Lambda ** (d - 1)


def disk_energy(R: float, sigma12: float = 1.0) -> float:
    return 2.0 * C0 * sigma12 * 2.0 * math.pi * R


def sphere_energy(R: float, sigma12: float = 1.0) -> float:
    return 2.0 * C0 * sigma12 * 4.0 * math.pi * R * R


# --------------------------------------------------------------------------
# energy-dissipation accounting


@dataclass(frozen=True)
class DissipationReport:
    tol: float
    step_margins: np.ndarray
    cumulative_margin: float
    min_dissipation: float
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def energy_dissipation_check(traj, rel_tol: float = 1e-8, diss_floor: float = -1e-10) -> DissipationReport:
    """Per-step and cumulative energy-dissipation inequality on a trajectory's records.

    Margins are ``E_{n-1} - E_n - D_n``; the inequality holds when every margin
    is ``>= -tol`` with ``tol = rel_tol * E_0``.
    """
    E0 = float(traj.E0)
    tol = rel_tol * abs(E0)
    E = np.array([E0] + [r.Eh for r in traj.records])
    D = np.array([r.dissipation for r in traj.records])
    margins = E[:-1] - E[1:] - D
    cumulative = E0 - (E[-1] + D.sum()) if len(D) else 0.0
    viol = []
    for k in np.flatnonzero(margins < -tol):
        viol.append(f"step {k + 1}: margin {margins[k]:.3e} < -{tol:.3e}")
    if cumulative < -tol:
        viol.append(f"cumulative margin {cumulative:.3e} < -{tol:.3e}")
    for k in np.flatnonzero(D < diss_floor):
        viol.append(f"step {k + 1}: dissipation {D[k]:.3e} < {diss_floor:.1e}")
    return DissipationReport(
        tol=tol,
        step_margins=margins,
        cumulative_margin=float(cumulative),
        min_dissipation=float(D.min()) if len(D) else 0.0,
        violations=viol,
    )


# --------------------------------------------------------------------------
# localization


def localized_energy(chi: Partition, zeta, h: float, sigma) -> float:
    """``h^{-1/2} sum_ij sigma_ij int zeta chi_i G_h * chi_j dx``."""
    z = zeta.values if isinstance(zeta, ScalarField) else np.asarray(zeta, dtype=float)
    if z.shape != chi.grid.shape:
        raise GridMismatch(f"weight shape {z.shape} != grid shape {chi.grid.shape}")
    if np.any(z < 0):
        raise ValueError("localizing weight must be nonnegative")
    s = _sigma_array(sigma)
    _check_sigma(s, chi.P)
    phi = _phi_flat(chi, h, s)
    lab = chi.labels.reshape(-1).astype(np.intp) - 1
    dens = phi[lab, np.arange(lab.size)]
    return float(np.dot(z.reshape(-1), dens)) * chi.grid.cell_volume / math.sqrt(h)


def phase_area_density(chi_k: np.ndarray, u_k: np.ndarray, h: float) -> np.ndarray:
    """Cell density whose integral approximates ``int |grad chi_k|``.

    Two-phase localized energy density of ``chi_k`` against its complement,
    ``(u + chi - 2 chi u) / sqrt(h)`` with ``u = G_h * chi_k``, divided by ``2 c0``.
    """
    return (u_k + chi_k - 2.0 * chi_k * u_k) / (math.sqrt(h) * 2.0 * C0)


# --------------------------------------------------------------------------
# approximate monotonicity


def monotonicity_factor(h: float, h0: float, d: int) -> float:
    return (math.sqrt(h0) / (math.sqrt(h) + math.sqrt(h0))) ** (d + 1)


@dataclass(frozen=True)
class MonotonicityReport:
    energies: dict
    pairs: list  # (h, h0, E_h, factor * E_h0, relative slack)
    rel_tol: float

    @property
    def ok(self) -> bool:
        return all(e + self.rel_tol * max(abs(b), abs(e)) >= b for _, _, e, b, _ in self.pairs)


def approximate_monotonicity_check(chi: Partition, h_list, sigma, rel_tol: float = 1e-6,
                                   allow_underresolved: bool = False) -> MonotonicityReport:
    """``E_h >= (sqrt(h0) / (sqrt(h) + sqrt(h0)))^(d+1) E_h0`` for all pairs ``h <= h0``."""
    hs = sorted(float(h) for h in h_list)
    for h in hs:
        if not allow_underresolved and chi.grid.resolution(h) < 3.0:
            raise UnresolvedScale(f"sqrt(h)/dx = {chi.grid.resolution(h):.2f} < 3 for h = {h}")
    E = {h: approximate_energy(chi, h, sigma) for h in hs}
    pairs = []
    for a, h in enumerate(hs):
        for h0 in hs[a + 1:]:
            bound = monotonicity_factor(h, h0, chi.grid.d) * E[h0]
            slack = (E[h] - bound) / E[h] if E[h] > 0 else 0.0
            pairs.append((h, h0, E[h], bound, slack))
    return MonotonicityReport(energies=E, pairs=pairs, rel_tol=rel_tol)


# --------------------------------------------------------------------------
# inner variations


def _xi_array(xi, grid: TorusGrid) -> np.ndarray:
    """Vector field as a ``(d, *shape)`` array; a length-``d`` vector means a constant field."""
    if isinstance(xi, (list, tuple)) and xi and isinstance(xi[0], ScalarField):
        xi = [c.values for c in xi]
    xi = np.asarray(xi, dtype=float)
    if xi.shape == (grid.d,):
        xi = np.broadcast_to(xi.reshape((grid.d,) + (1,) * grid.d), (grid.d,) + grid.shape)
    if xi.shape != (grid.d,) + grid.shape:
        raise GridMismatch(f"vector field shape {xi.shape} != {(grid.d,) + grid.shape}")
    return xi


def _transport_convolution(chi_stack: np.ndarray, xi: np.ndarray, grid: TorusGrid, h: float) -> np.ndarray:
    """``w_j = G_h * (-grad chi_j . xi)`` in divergence form.

    ``w_j = -div G_h * (chi_j xi) + G_h * (chi_j div xi)``, which needs no
    derivative of the discontinuous ``chi_j``.
    """
    _check_h(h)
    div = spectral_divergence(xi, grid)
    mult = _gauss_multiplier(grid.d, grid.Lambda, grid.n_cells, float(h))
    ks = _derivative_wavenumbers(grid.d, grid.Lambda, grid.n_cells)
    ax = grid.axes
    acc = sfft.rfftn(chi_stack * div, axes=ax)
    for a in range(grid.d):
        acc -= 1j * ks[a] * sfft.rfftn(chi_stack * xi[a], axes=ax)
    return sfft.irfftn(acc * mult, s=grid.shape, axes=ax)


def first_variation_energy(chi: Partition, xi, h: float, sigma) -> float:
    """Inner variation ``d/ds E_h(chi o Phi_s^{-1})`` at ``s = 0`` with ``Phi_s = id + s xi``.

    Equals ``(2/sqrt(h)) sum_ij sigma_ij int chi_i G_h * (-grad chi_j . xi)``;
    positive when the flow of ``xi`` lengthens the interfaces.
    """
    s = _sigma_array(sigma)
    _check_sigma(s, chi.P)
    xi = _xi_array(xi, chi.grid)
    stack = chi.indicator_stack()
    w = _transport_convolution(stack, xi, chi.grid, h)
    sw = np.tensordot(s, w, axes=([1], [0]))
    return 2.0 / math.sqrt(h) * float(np.sum(stack * sw)) * chi.grid.cell_volume


def first_variation_metric(chi: Partition, chi_prev: Partition, xi, h: float, sigma) -> float:
    """Inner variation of the metric term ``-E_h(chi - chi_prev)`` in ``chi``.

    ``(2/sqrt(h)) sum_ij sigma_ij int (chi_i - chi_prev_i) G_h * (grad chi_j . xi)``.
    """
    check_compatible(chi, chi_prev)
    s = _sigma_array(sigma)
    _check_sigma(s, chi.P)
    xi = _xi_array(xi, chi.grid)
    stack = chi.indicator_stack()
    w = _transport_convolution(stack, xi, chi.grid, h)
    sw = np.tensordot(s, w, axes=([1], [0]))
    omega = stack - chi_prev.indicator_stack()
    return -2.0 / math.sqrt(h) * float(np.sum(omega * sw)) * chi.grid.cell_volume


def elg_residual(chi: Partition, chi_prev: Partition, xi, h: float, sigma) -> float:
    """Inner variation of the whole step objective ``E_h(chi) - E_h(chi - chi_prev)``.

    Vanishes in the continuum for the thresholding minimizer; on a grid it
    measures the discretization error of that stationarity.
    """
    check_compatible(chi, chi_prev)
    s = _sigma_array(sigma)
    _check_sigma(s, chi.P)
    xi = _xi_array(xi, chi.grid)
    stack = chi.indicator_stack()
    w = _transport_convolution(stack, xi, chi.grid, h)
    sw = np.tensordot(s, w, axes=([1], [0]))
    # chi_i w_j - (chi_i - chi_prev_i) w_j = chi_prev_i w_j
    return 2.0 / math.sqrt(h) * float(np.sum(chi_prev.indicator_stack() * sw)) * chi.grid.cell_volume


# --------------------------------------------------------------------------
# dissipation measures


@dataclass(frozen=True)
class DissipationDensity:
    grid: TorusGrid
    density: np.ndarray
    total: float
    steps: int
    localized_fraction: float = None


def interface_mask(labels: np.ndarray, grid: TorusGrid, radius: float) -> np.ndarray:
    """Cells within ``radius`` of a cell whose label differs from a face neighbour."""
    iface = np.zeros(labels.shape, dtype=bool)
    for a in range(grid.d):
        diff = labels != np.roll(labels, 1, axis=a)
        iface |= diff | np.roll(diff, -1, axis=a)
    if radius <= 0 or not iface.any():
        return iface
    r_cells = int(math.ceil(radius / grid.dx))
    offs = np.arange(-r_cells, r_cells + 1)
    grids = np.meshgrid(*([offs] * grid.d), indexing="ij")
    ball = sum(g * g for g in grids) * grid.dx**2 <= radius * radius
    kern = np.zeros(grid.shape)
    idx = tuple(g[ball] % grid.n_cells for g in grids)
    kern[idx] = 1.0
    # periodic dilation by the ball via circular convolution
    conv = sfft.irfftn(sfft.rfftn(iface.astype(float)) * sfft.rfftn(kern), s=grid.shape)
    return conv > 0.5


class DissipationAccumulator:
    """Run observer accumulating the space density of the dissipation measure.

    Per step ``n`` it adds ``h^{-1/2} zeta (|G_{h/2} * omega|^2 + |G_h * omega|^2)``
    with ``omega = chi^n - chi^{n-1}`` summed over phases, and the part of
    that mass within ``loc_radius`` (default ``6 sqrt(h)``) of the interfaces
    of ``chi^{n-1}`` and ``chi^n``.
    """

    def __init__(self, grid: TorusGrid, h: float, zeta=None, window=None, loc_radius: float = None):
        self.grid = grid
        self.h = float(h)
        self.zeta = None if zeta is None else np.asarray(zeta, dtype=float)
        self.window = window
        self.loc_radius = 6.0 * math.sqrt(h) if loc_radius is None else loc_radius
        self.density = np.zeros(grid.shape)
        self.steps = 0
        self.local_mass = 0.0

    def __call__(self, n, chi_prev: Partition, chi_new: Partition, record=None):
        if self.window is not None:
            t = n * self.h
            if not (self.window[0] <= t <= self.window[1]):
                return
        self.steps += 1
        if np.array_equal(chi_prev.labels, chi_new.labels):
            return
        g = self.grid
        omega = chi_new.indicator_stack() - chi_prev.indicator_stack()
        d = (convolve_array(omega, g, self.h / 2) ** 2).sum(axis=0)
        d += (convolve_array(omega, g, self.h) ** 2).sum(axis=0)
        d /= math.sqrt(self.h)
        if self.zeta is not None:
            d *= self.zeta
        self.density += d
        mask = interface_mask(chi_prev.labels, g, self.loc_radius) | interface_mask(
            chi_new.labels, g, self.loc_radius)
        self.local_mass += float(d[mask].sum()) * g.cell_volume

    def result(self) -> DissipationDensity:
        total = float(self.density.sum()) * self.grid.cell_volume
        frac = self.local_mass / total if total > 0 else 1.0
        return DissipationDensity(self.grid, self.density.copy(), total, self.steps, frac)


def dissipation_measure(traj, window=None, zeta=None, loc_radius: float = None) -> DissipationDensity:
    """Dissipation measure of a trajectory stored with snapshot stride 1 over ``window``."""
    cfg = traj.cfg
    acc = DissipationAccumulator(cfg.grid, cfg.h, zeta=zeta, window=window, loc_radius=loc_radius)
    steps = list(traj.snapshot_steps)
    snaps = dict(zip(steps, traj.snapshots))
    for n in range(1, len(traj.records) + 1):
        t = n * cfg.h
        if window is not None and not (window[0] <= t <= window[1]):
            continue
        if n not in snaps or n - 1 not in snaps:
            raise ValueError(f"snapshots for steps {n - 1} and {n} are needed; rerun with stride 1 "
                             "or attach a DissipationAccumulator observer")
        acc(n, snaps[n - 1], snaps[n])
    return acc.result()
