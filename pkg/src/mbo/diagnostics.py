"""Measurements on partitions and trajectories.

Time moduli and Hoelder ratios, ball coverings with half-space excess,
triple-junction angles, effective radii and interface velocities.  Constants
that the underlying estimates leave unspecified are measured and reported;
callers decide what to assert.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy import ndimage
from scipy.spatial import cKDTree

from . import kernels
from .energetics import C0, phase_area_density
from .errors import NotATripleJunction, UnresolvedScale
from .fields import (
    Partition,
    TorusGrid,
    convolve_array,
    gradient_convolve_array,
    symmetric_difference_volume,
)

__all__ = [
    "BallCovering",
    "BallExcess",
    "ExcessReport",
    "CoveringFields",
    "normal_net",
    "cutoff",
    "excess_on_ball",
    "classify_covering",
    "bv_time_modulus",
    "HoelderReport",
    "hoelder_volume_check",
    "locate_triple_junction",
    "junction_angles_measured",
    "disk_radius_series",
    "radius_law_deviation",
    "fit_square_radius_slope",
    "VelocitySample",
    "velocity_estimate",
    "unit_ball_volume",
]


def unit_ball_volume(k: int) -> float:
    """Volume of the unit ball in ``R^k`` (``omega_1 = 2``, ``omega_2 = pi``)."""
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


# --------------------------------------------------------------------------
# time regularity


def _lag_steps(traj, tau: float) -> int:
    step = traj.cfg.snapshot_stride * traj.cfg.h
    k = tau / step
    if k < -1e-12 or abs(k - round(k)) > 1e-9 * max(1.0, k):
        raise ValueError(f"tau = {tau} is not a multiple of the snapshot spacing {step}")
    return int(round(k))


def _regular_snapshots(traj):
    """Snapshots at multiples of the stride (the trailing partial one dropped)."""
    s = traj.cfg.snapshot_stride
    return [p for n, p in zip(traj.snapshot_steps, traj.snapshots) if n % s == 0]


def bv_time_modulus(traj, tau: float):
    """``int_tau^T int |chi(t) - chi(t - tau)| dx dt`` and its ratio to ``(1 + T) E_0 (tau + sqrt(h))``.

    ``chi(t)`` is piecewise constant on the stored snapshots; the integral
    is exact when the snapshot stride is 1.
    """
    cfg = traj.cfg
    lag = _lag_steps(traj, tau)
    snaps = _regular_snapshots(traj)
    dt = cfg.snapshot_stride * cfg.h
    mod = 0.0
    if lag > 0:
        # snapshot m covers [m dt, (m + 1) dt); stop at T
        for m in range(lag, len(snaps)):
            w = min(dt, cfg.T - m * dt)
            if w <= 0:
                break
            mod += w * symmetric_difference_volume(snaps[m], snaps[m - lag])
    denom = (1.0 + cfg.T) * traj.E0 * (tau + math.sqrt(cfg.h))
    return mod, (mod / denom if denom > 0 else 0.0)


@dataclass(frozen=True)
class HoelderReport:
    max_ratio: float
    argmax_pair: tuple
    pairs: int
    stability_factor: float = None

    @property
    def stable(self) -> bool:
        return self.stability_factor is None or self.stability_factor <= 2.0


def hoelder_volume_check(traj, reference: HoelderReport = None, max_pairs: int = 4000) -> HoelderReport:
    """Max over snapshot pairs of ``int |chi(s) - chi(t)| / (E_0 |s - t|^(1/2))``.

    With ``reference`` (the report of the same problem at another ``h``) the
    ratio of the two maxima, taken ``>= 1``, is the stability factor.
    """
    cfg = traj.cfg
    steps = list(traj.snapshot_steps)
    snaps = list(traj.snapshots)
    pairs = [(a, b) for a in range(len(steps)) for b in range(a + 1, len(steps))
             if steps[b] - steps[a] >= 1]
    if len(pairs) > max_pairs:
        idx = np.linspace(0, len(pairs) - 1, max_pairs).round().astype(int)
        pairs = [pairs[k] for k in np.unique(idx)]
    best, arg = 0.0, None
    E0 = traj.E0
    for a, b in pairs:
        if E0 <= 0:
            break
        vol = symmetric_difference_volume(snaps[a], snaps[b])
        ratio = vol / (E0 * math.sqrt((steps[b] - steps[a]) * cfg.h))
        if ratio > best:
            best, arg = ratio, (steps[a] * cfg.h, steps[b] * cfg.h)
    stab = None
    if reference is not None:
        hi, lo = max(best, reference.max_ratio), min(best, reference.max_ratio)
        stab = hi / lo if lo > 0 else (1.0 if hi == 0 else math.inf)
    return HoelderReport(max_ratio=best, argmax_pair=arg, pairs=len(pairs), stability_factor=stab)


# --------------------------------------------------------------------------
# ball coverings


@dataclass(frozen=True)
class BallCovering:
    """Balls of radius ``r`` centred on the lattice ``s Z^d`` within ``[0, Lambda)^d``.

    The spacing ``s`` is the largest whole number of cells not exceeding
    ``r / sqrt(d)``, so every centre is a cell corner and every point of the
    torus lies within ``r / 2`` of a centre (the wrap-around gap is at most
    ``s``).
    """

    grid: TorusGrid
    r: float

    def __post_init__(self):
        if not 0 < self.r < self.grid.Lambda:
            raise ValueError(f"ball radius must lie in (0, {self.grid.Lambda})")

    @property
    def spacing_cells(self) -> int:
        return max(1, int(math.floor(self.r / (math.sqrt(self.grid.d) * self.grid.dx) + 1e-9)))

    @property
    def spacing(self) -> float:
        return self.spacing_cells * self.grid.dx

    @property
    def per_axis(self) -> int:
        return int(math.ceil(self.grid.n_cells / self.spacing_cells))

    @property
    def center_indices(self) -> np.ndarray:
        """Cell-corner indices of the centres, shape ``(count, d)``."""
        m, d = self.per_axis, self.grid.d
        ax = np.arange(m) * self.spacing_cells
        return np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)

    @property
    def centers(self) -> np.ndarray:
        return self.center_indices * self.grid.dx

    def overlap_bound(self, n: float = 1.0) -> int:
        """Upper bound on the number of dilated balls ``B_{nr}`` containing any point."""
        k = int(math.ceil(n * self.r / self.spacing - 1e-12))
        return (2 * k + 1) ** self.grid.d

    def count_containing(self, points, n: float = 1.0) -> np.ndarray:
        """Number of balls of radius ``n r`` (open) containing each point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        L = self.grid.Lambda
        tree = cKDTree(self.centers, boxsize=L)
        # query_ball_point uses a closed ball
        rad = np.nextafter(n * self.r, 0.0)
        return np.asarray(tree.query_ball_point(np.mod(pts, L), rad, return_length=True), dtype=int)


def normal_net(d: int, M: int = None) -> np.ndarray:
    """Unit normals: ``M`` equally spaced angles from 0 in 2-D, a Fibonacci sphere in 3-D.

    The 2-D nets are nested under ``M -> 2M``.
    """
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        M = 64 if M is None else M
        a = 2.0 * np.pi * np.arange(M) / M
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    if d == 3:
        M = 128 if M is None else M
        k = np.arange(M) + 0.5
        z = 1.0 - 2.0 * k / M
        phi = np.pi * (1.0 + math.sqrt(5.0)) * k
        rho = np.sqrt(1.0 - z * z)
        return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    raise ValueError(f"unsupported dimension {d}")


def cutoff(dist: np.ndarray, r: float) -> np.ndarray:
    """Radial bump equal to 1 on ``B_r`` and 0 outside ``B_2r``.

    Quintic smoothstep in ``(|x| - r) / r``: ``|eta'| <= 1.875 / r`` and
    ``|eta''| <= 5.78 / r^2``.
    """
    t = np.clip((dist - r) / r, 0.0, 1.0)
    return 1.0 - t * t * t * (t * (6.0 * t - 15.0) + 10.0)


class CoveringFields:
    """Phase-wise smoothed fields shared by all balls of one configuration."""

    def __init__(self, chi: Partition, h: float):
        self.chi = chi
        self.h = float(h)
        g = chi.grid
        stack = chi.indicator_stack()
        self.stack = stack
        self.u = convolve_array(stack, g, h)
        self.grad_u = gradient_convolve_array(stack, g, h)  # (P, d, *shape)
        self.area = phase_area_density(stack, self.u, h)  # (P, *shape)
        self.grad_norm = np.sqrt(np.sum(self.grad_u**2, axis=1))
        # each interface is counted by both adjacent phases
        self.total_area = 0.5 * self.area.sum(axis=0)

    def window(self, center, radius: float):
        """Flat indices and minimum-image offsets of cells within ``radius`` of ``center``."""
        g = self.chi.grid
        center = np.asarray(center, dtype=float)
        corner = np.round(center / g.dx)
        if np.all(np.abs(center / g.dx - corner) < 1e-9):
            idx, off = self._template(float(radius))
            cells = (idx + corner.astype(int)) % g.n_cells
            return np.ravel_multi_index(tuple(cells.T), g.shape), off
        n, dx = g.n_cells, g.dx
        lo = np.floor((center - radius) / dx - 0.5).astype(int)
        hi = np.ceil((center + radius) / dx - 0.5).astype(int)
        axes_idx = [np.arange(lo[a], hi[a] + 1) for a in range(g.d)]
        if any(len(ix) > n for ix in axes_idx):
            raise ValueError("ball window wraps around the torus; use a smaller radius")
        mesh = np.meshgrid(*axes_idx, indexing="ij")
        off = np.stack([(m + 0.5) * dx - center[a] for a, m in enumerate(mesh)], axis=-1).reshape(-1, g.d)
        keep = np.sum(off * off, axis=1) < radius * radius
        idx = tuple((m.reshape(-1)[keep]) % n for m in mesh)
        flat = np.ravel_multi_index(idx, g.shape)
        return flat, np.ascontiguousarray(off[keep])

    def ball_mass(self, center, radius: float) -> float:
        """``int_{B_radius(center)} |grad chi|`` by the area proxy (each interface once)."""
        g = self.chi.grid
        center = np.asarray(center, dtype=float)
        corner = np.round(center / g.dx)
        if not np.all(np.abs(center / g.dx - corner) < 1e-9):
            flat, _ = self.window(center, radius)
            return float(self.total_area.reshape(-1)[flat].sum()) * g.cell_volume
        maps = self.__dict__.setdefault("_mass_maps", {})
        if radius not in maps:
            # correlation of the density with the cell set of the corner template
            idx, _ = self._template(float(radius))
            K = np.zeros(g.shape)
            K[tuple((idx % g.n_cells).T)] = 1.0
            ax = tuple(range(g.d))
            m = sfft.irfftn(sfft.rfftn(self.total_area, axes=ax) * np.conj(sfft.rfftn(K, axes=ax)),
                            s=g.shape, axes=ax)
            maps[radius] = m * g.cell_volume
        return float(maps[radius][tuple(corner.astype(int) % g.n_cells)])

    def _template(self, radius: float):
        """Cell offsets within ``radius`` of a cell corner (cached per radius)."""
        cache = self.__dict__.setdefault("_templates", {})
        if radius not in cache:
            g = self.chi.grid
            k = int(math.ceil(radius / g.dx)) + 1
            if 2 * k > g.n_cells:
                raise ValueError("ball window wraps around the torus; use a smaller radius")
            ax = np.arange(-k, k)
            mesh = np.stack(np.meshgrid(*([ax] * g.d), indexing="ij"), axis=-1).reshape(-1, g.d)
            off = (mesh + 0.5) * g.dx
            keep = np.sum(off * off, axis=1) < radius * radius
            cache[radius] = (mesh[keep], np.ascontiguousarray(off[keep]))
        return cache[radius]


@dataclass(frozen=True)
class BallExcess:
    center: tuple
    r: float
    pair: tuple
    normal: tuple
    offset: float
    tilt_excess: float
    energy_excess: float
    bulk_l1: float
    minority_area: float
    mass: float
    mass_threshold: float
    is_good: bool = False

    @property
    def total(self) -> float:
        return self.minority_area + self.tilt_excess + self.energy_excess + self.bulk_l1


def _pick_pair(cf: CoveringFields, flat, eta):
    w = np.array([float(np.dot(eta, cf.stack[k].reshape(-1)[flat])) for k in range(cf.chi.P)])
    order = np.argsort(-w, kind="stable")
    if cf.chi.P < 2:
        return (1, 1)
    return (int(order[0]) + 1, int(order[1]) + 1)


def excess_on_ball(chi: Partition, center, r: float, pair=None, M: int = None, h: float = None,
                   fields: CoveringFields = None, delta: float = 0.05) -> BallExcess:
    """Half-space excess of ``chi`` in the ball ``B_r(center)`` for the phase pair ``(i, j)``.

    Terms, all with the cutoff ``eta`` (1 on ``B_r``, 0 outside ``B_2r``) and
    interfacial areas measured by the localized-energy proxy at variance ``h``:

    * minority area ``sum_{k not in (i, j)} int eta |grad chi_k|``;
    * tilt ``int eta |nu_i - nu|^2 |grad chi_i| + int eta |nu_j + nu|^2 |grad chi_j|``
      with ``nu_k = grad u_k / |grad u_k|``, ``u_k = G_h * chi_k``;
    * energy ``|int eta (|grad chi_i| - |grad chi*|)| + |int eta (|grad chi_j| - |grad chi*|)|``;
    * bulk ``(1/r) int_{B_2r} |chi_i - chi*| + (1/r) int_{B_2r} |chi_j - (1 - chi*)|``,

    where ``chi* = 1{(x - center) . nu > lambda}`` and ``lambda`` matches the
    volume of phase ``i`` in ``B_2r``.  The reported values are those of the
    net normal ``nu`` with the smallest total.  The ball is good when the
    tilt is at most ``delta r^(d-1)`` and the interfacial area in ``B_4r``
    is at least ``omega_{d-1} (2r)^(d-1) / 2``.
    """
    if fields is None:
        if h is None:
            raise ValueError("need the variance h or precomputed fields")
        fields = CoveringFields(chi, h)
    h = fields.h
    g = chi.grid
    if r < 6.0 * math.sqrt(h) * (1.0 - 1e-9):
        raise UnresolvedScale(f"r = {r:.4g} < 6 sqrt(h) = {6 * math.sqrt(h):.4g}")
    d = g.d
    flat, X = fields.window(center, 2.0 * r)
    dist = np.sqrt(np.sum(X * X, axis=1))
    eta = cutoff(dist, r)
    if pair is None:
        pair = _pick_pair(fields, flat, eta)
    i, j = pair
    vol = g.cell_volume

    mass = fields.ball_mass(center, 4.0 * r)
    threshold = 0.5 * unit_ball_volume(d - 1) * (2.0 * r) ** (d - 1)

    area = fields.area.reshape(chi.P, -1)[:, flat] @ eta * vol  # (P,)
    minority = float(sum(area[k] for k in range(chi.P) if k not in (i - 1, j - 1)))

    gu = fields.grad_u.reshape(chi.P, d, -1)[:, :, flat]
    gn = fields.grad_norm.reshape(chi.P, -1)[:, flat]
    A = gn @ eta * vol  # (P,)
    B = gu @ eta * vol  # (P, d)

    nets = normal_net(d, M)
    ci = chi.labels.reshape(-1)[flat] == i
    cj = chi.labels.reshape(-1)[flat] == j
    lam, bi, bj, asum = kernels.halfspace_scan(
        X, np.ascontiguousarray(nets), ci.astype(np.uint8), cj.astype(np.uint8),
        np.ascontiguousarray(eta), math.sqrt(h))
    a_star = asum * vol / (math.sqrt(h) * 2.0 * C0)
    tilt = 2.0 * (A[i - 1] + A[j - 1]) - 2.0 * nets @ (B[i - 1] - B[j - 1])
    tilt = np.maximum(tilt, 0.0)
    energy = np.abs(area[i - 1] - a_star) + np.abs(area[j - 1] - a_star)
    bulk = (bi + bj) * vol / r
    total = minority + tilt + energy + bulk
    q = int(np.argmin(total))
    tilt_q = float(tilt[q])
    good = bool(tilt_q <= delta * r ** (d - 1) and mass >= threshold)
    return BallExcess(
        center=tuple(float(c) for c in center),
        r=float(r),
        pair=(int(i), int(j)),
        normal=tuple(float(v) for v in nets[q]),
        offset=float(lam[q]),
        tilt_excess=tilt_q,
        energy_excess=float(energy[q]),
        bulk_l1=float(bulk[q]),
        minority_area=minority,
        mass=mass,
        mass_threshold=threshold,
        is_good=good,
    )


@dataclass(frozen=True)
class ExcessReport:
    r: float
    delta: float
    h: float
    balls: list = field(default_factory=list)  # BallExcess for balls passing the mass bound
    n_balls: int = 0
    bad_mass: float = 0.0

    @property
    def good(self) -> list:
        return [b for b in self.balls if b.is_good]

    @property
    def n_good(self) -> int:
        return len(self.good)

    def rows(self):
        for b in self.balls:
            yield (*b.center, b.r, b.tilt_excess, b.energy_excess, b.bulk_l1, b.is_good)

    def header(self, d: int):
        names = ["cx", "cy", "cz"][:d]
        return names + ["r", "tilt_excess", "energy_excess", "bulk_l1", "is_good"]


def classify_covering(chi: Partition, r: float, delta: float = 0.05, h: float = None, M: int = None,
                      fields: CoveringFields = None) -> ExcessReport:
    """Excess on every lattice ball with enough interface; good/bad split and bad-ball mass.

    Balls whose ``B_4r`` carries less interfacial area than the lower bound
    are bad by emptiness; their excess is not evaluated.  The bad-ball mass
    is ``sum_{bad B} int_{2B} |grad chi|`` over all bad balls.
    """
    if fields is None:
        if h is None:
            raise ValueError("need the variance h or precomputed fields")
        fields = CoveringFields(chi, h)
    if r < 6.0 * math.sqrt(fields.h) * (1.0 - 1e-9):
        raise UnresolvedScale(f"r = {r:.4g} < 6 sqrt(h) = {6 * math.sqrt(fields.h):.4g}")
    cov = BallCovering(chi.grid, r)
    d = chi.grid.d
    threshold = 0.5 * unit_ball_volume(d - 1) * (2.0 * r) ** (d - 1)
    balls, bad_mass = [], 0.0
    for c in cov.centers:
        mass4 = fields.ball_mass(c, 4.0 * r)
        mass2 = fields.ball_mass(c, 2.0 * r)
        if mass4 < threshold:
            bad_mass += mass2
            continue
        b = excess_on_ball(chi, c, r, M=M, fields=fields, delta=delta)
        balls.append(b)
        if not b.is_good:
            bad_mass += mass2
    return ExcessReport(r=r, delta=delta, h=fields.h, balls=balls, n_balls=len(cov.centers),
                        bad_mass=bad_mass)


# --------------------------------------------------------------------------
# triple junctions


def locate_triple_junction(chi: Partition, guess=None, radius: float = None) -> np.ndarray:
    """Mean of the grid vertices whose four adjacent cells carry three distinct labels.

    Only vertices within ``radius`` of ``guess`` (periodic) are used.
    """
    g = chi.grid
    if g.d != 2:
        raise ValueError("junction location needs a 2-D partition")
    lab = chi.labels.astype(np.int16)
    a, b = lab, np.roll(lab, -1, 0)
    c, e = np.roll(lab, -1, 1), np.roll(np.roll(lab, -1, 0), -1, 1)
    distinct = 1 + (b != a).astype(int) + ((c != a) & (c != b)) + ((e != a) & (e != b) & (e != c))
    ii, jj = np.nonzero(distinct >= 3)
    pts = np.stack([(ii + 1) * g.dx, (jj + 1) * g.dx], axis=1)
    L = g.Lambda
    if guess is not None and len(pts):
        guess = np.asarray(guess, dtype=float)
        off = (pts - guess + 0.5 * L) % L - 0.5 * L
        keep = np.ones(len(pts), bool) if radius is None else np.sum(off * off, axis=1) <= radius**2
        if not keep.any():
            raise NotATripleJunction(f"no triple point within {radius} of {guess.tolist()}")
        return (guess + off[keep].mean(axis=0)) % L
    if len(pts) == 0:
        raise NotATripleJunction("no grid vertex touches three phases")
    # unwrap around the first point before averaging
    off = (pts - pts[0] + 0.5 * L) % L - 0.5 * L
    return (pts[0] + off.mean(axis=0)) % L


def junction_angles_measured(chi: Partition, junction_center, rho_range=None):
    """Opening angles from phase fractions on rings around a junction.

    Cells with distance in ``rho_range`` (default ``[5 dx, 10 dx]``) are
    binned into rings one cell wide; the phase fractions are averaged over
    rings and scaled to ``2 pi``.  Returns the angles (radians) of the three
    phases present, in increasing phase order, and those phases.
    """
    g = chi.grid
    if g.d != 2:
        raise ValueError("junction angles need a 2-D partition")
    lo, hi = rho_range if rho_range is not None else (5 * g.dx, 10 * g.dx)
    off = g.periodic_offsets(junction_center)
    rho = np.sqrt(off[0] ** 2 + off[1] ** 2)
    sel = (rho >= lo) & (rho <= hi)
    labs = chi.labels[sel]
    present = np.unique(labs)
    if len(present) != 3:
        raise NotATripleJunction(f"{len(present)} phases in the annulus, expected 3")
    ring = np.floor((rho[sel] - lo) / g.dx).astype(int)
    fr = np.zeros(3)
    count = 0
    for k in np.unique(ring):
        m = ring == k
        fr += np.array([np.mean(labs[m] == p) for p in present])
        count += 1
    fr /= count
    theta = 2.0 * np.pi * fr / fr.sum()
    return tuple(float(t) for t in theta), tuple(int(p) for p in present)


# --------------------------------------------------------------------------
# radius laws and velocities


def disk_radius_series(traj, phase: int = 1):
    """``(t, R_eff)`` with ``R_eff`` the radius of the ball of equal volume to ``phase``."""
    d = traj.cfg.grid.d
    vols = np.array([traj.volumes0[phase - 1]] + [r.volumes[phase - 1] for r in traj.records])
    R = (vols / unit_ball_volume(d)) ** (1.0 / d)
    return traj.times(), R


def radius_law_deviation(t, R, R0: float, rate: float, d: int = 2) -> float:
    """``max |R(t)^2 - (R0^2 - rate t)| / R0^2`` over ``t`` up to where the law gives ``R0 / 2``."""
    t_half = 0.75 * R0 * R0 / rate
    m = np.asarray(t) <= t_half + 1e-12
    return float(np.max(np.abs(np.asarray(R)[m] ** 2 - (R0 * R0 - rate * np.asarray(t)[m]))) / (R0 * R0))


def fit_square_radius_slope(t, R, R0: float) -> float:
    """Least-squares slope of ``R^2`` against ``t`` while ``R >= R0 / 2``."""
    t, R = np.asarray(t), np.asarray(R)
    m = R >= 0.5 * R0
    return float(np.polyfit(t[m], R[m] ** 2, 1)[0])


def _level_crossing(u, x, nrm, dx, smax, iters: int = 40):
    """Signed distance along ``nrm`` from ``x`` to the ``1/2`` level of the bilinear interpolant of ``u``."""

    def f(s):
        pts = (x + s[:, None] * nrm) / dx - 0.5
        return ndimage.map_coordinates(u, pts.T, order=1, mode="grid-wrap") - 0.5

    lo = np.full(len(x), -smax)
    hi = np.full(len(x), smax)
    flo = f(lo)
    ok = np.sign(flo) != np.sign(f(hi))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        left = np.sign(fm) == np.sign(flo)
        lo = np.where(left, mid, lo)
        flo = np.where(left, fm, flo)
        hi = np.where(left, hi, mid)
    return 0.5 * (lo + hi), ok


@dataclass(frozen=True)
class VelocitySample:
    t0: float
    t1: float
    points: np.ndarray  # (m, d) interface points of the earlier configuration
    values: np.ndarray  # (m,) normal velocity, positive towards the phase interior
    mean_radius: float

    @property
    def median(self) -> float:
        return float(np.median(self.values)) if len(self.values) else float("nan")


def velocity_estimate(traj, alpha: float = None, phase: int = 1, band: float = 0.2):
    """Normal velocity of the ``1/2`` level of ``G_h * chi_phase`` per mesoscopic interval.

    For consecutive snapshots ``tau = K h`` apart, each cell with
    ``|u - 1/2| < band`` is projected onto the ``1/2`` level of the earlier
    ``u``: along the line through the cell in direction ``n = grad u / |grad u|``
    the crossings ``s0``, ``s1`` of the ``1/2`` levels of the earlier and later
    ``u`` are found by bisection on their linear interpolants, and
    ``V = (s1 - s0) / tau``.  ``V`` is positive when the interface moves
    into the phase (a shrinking phase).  ``alpha`` overrides the mesoscopic
    factor of the run; the interval must be a multiple of the snapshot stride.
    """
    cfg = traj.cfg
    g = cfg.grid
    h = cfg.h
    alpha = cfg.alpha if alpha is None else alpha
    K = max(1, int(round(alpha / math.sqrt(h))))
    if K % cfg.snapshot_stride:
        raise ValueError(f"interval of {K} steps is not a multiple of the snapshot stride {cfg.snapshot_stride}")
    lag = K // cfg.snapshot_stride
    snaps = _regular_snapshots(traj)
    tau = K * h
    d = g.d
    out = []
    smax = 4.0 * math.sqrt(h) + 2.0 * tau  # search span along the normal
    for m in range(lag, len(snaps), lag):
        old = (snaps[m - lag].labels == phase).astype(float)
        new = (snaps[m].labels == phase).astype(float)
        u0 = convolve_array(old, g, h)
        g0 = gradient_convolve_array(old, g, h)
        u1 = convolve_array(new, g, h)
        gn = np.sqrt(np.sum(g0**2, axis=0))
        t0 = (m - lag) * cfg.snapshot_stride * h
        sel = (np.abs(u0 - 0.5) < band) & (gn > 1e-12)
        if not sel.any():
            out.append(VelocitySample(t0, t0 + tau, np.empty((0, d)), np.empty(0), float("nan")))
            continue
        idx = np.nonzero(sel)
        nrm = np.stack([g0[a][idx] for a in range(d)], axis=1) / gn[idx][:, None]
        x = np.stack([(idx[a] + 0.5) * g.dx for a in range(d)], axis=1)
        s0, ok0 = _level_crossing(u0, x, nrm, g.dx, smax)
        s1, ok1 = _level_crossing(u1, x, nrm, g.dx, smax)
        ok = ok0 & ok1
        vals = (s1 - s0)[ok] / tau
        x0 = x + s0[:, None] * nrm
        vols = 0.5 * (old.sum() + new.sum()) * g.cell_volume
        Rm = (vols / unit_ball_volume(d)) ** (1.0 / d)
        out.append(VelocitySample(t0, t0 + tau, x0[ok], vals, float(Rm)))
    return out
