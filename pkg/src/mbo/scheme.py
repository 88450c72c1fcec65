"""The multiphase thresholding step, full runs and the brute-force minimizing-movement oracle.

One step convolves every phase indicator with ``G_h``, forms the
tension-weighted fields ``phi_i = sum_j sigma_ij G_h * chi_j`` and assigns
each cell to the phase of smallest ``phi_i``.  Since
``E_h(chi) - E_h(chi - chi') = (2/sqrt(h)) int sum_i chi_i phi_i' + const``,
this is an exact minimizer of the step objective, also on the grid.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .energetics import StepRecord, _sigma_array, quadratic_form
from .errors import GridMismatch, OracleMismatch, TooLargeForBruteForce
from .fields import Partition, TorusGrid, convolve_array
from .tensions import SurfaceTensionMatrix

__all__ = [
    "SchemeConfig",
    "Trajectory",
    "threshold_step",
    "step_with_fields",
    "run",
    "step_objective",
    "minimizing_movement_oracle",
    "OracleResult",
    "TIE_RULES",
]

TIE_RULES = ("smallest-index", "largest-index")
MAX_ORACLE_CELLS = 12
MAX_ORACLE_PHASES = 3


@dataclass(frozen=True)
class SchemeConfig:
    """Parameters of a thresholding run.

    ``T`` must be an integer multiple of ``h``.  The mesoscopic time
    ``tau = alpha sqrt(h)`` spans ``K = max(1, round(alpha / sqrt(h)))`` steps,
    which is also the default snapshot stride.  Cells whose smallest two
    ``phi`` values differ by at most ``tie_tol * sigma_max`` are tie cells;
    they go to the smallest (or largest) candidate index.
    """

    sigma: SurfaceTensionMatrix
    h: float
    T: float
    grid: TorusGrid
    alpha: float = 1.0
    tie_rule: str = "smallest-index"
    tie_tol: float = 1e-12
    snapshot_stride: int = None

    def __post_init__(self):
        if not isinstance(self.sigma, SurfaceTensionMatrix):
            raise TypeError("sigma must be a validated SurfaceTensionMatrix")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError(f"h must be positive, got {self.h}")
        if not (self.T >= 0):
            raise ValueError(f"T must be nonnegative, got {self.T}")
        N = round(self.T / self.h)
        if abs(N * self.h - self.T) > 1e-9 * max(self.h, self.T):
            raise ValueError(f"T = {self.T} is not an integer multiple of h = {self.h}")
        if not 0 < self.alpha <= 2:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if self.tie_rule not in TIE_RULES:
            raise ValueError(f"tie_rule must be one of {TIE_RULES}, got {self.tie_rule!r}")
        if not self.tie_tol >= 0:
            raise ValueError("tie_tol must be nonnegative")
        if self.snapshot_stride is None:
            object.__setattr__(self, "snapshot_stride", self.K)
        if int(self.snapshot_stride) < 1:
            raise ValueError("snapshot_stride must be >= 1")
        object.__setattr__(self, "snapshot_stride", int(self.snapshot_stride))

    @property
    def N(self) -> int:
        return int(round(self.T / self.h))

    @property
    def tau(self) -> float:
        return self.alpha * math.sqrt(self.h)

    @property
    def K(self) -> int:
        return max(1, int(round(self.alpha / math.sqrt(self.h))))

    @property
    def L(self) -> int:
        """Number of whole mesoscopic intervals in ``[0, T]``."""
        return self.N // self.K

    def with_(self, **kw) -> "SchemeConfig":
        d = dict(sigma=self.sigma, h=self.h, T=self.T, grid=self.grid, alpha=self.alpha,
                 tie_rule=self.tie_rule, tie_tol=self.tie_tol, snapshot_stride=self.snapshot_stride)
        d.update(kw)
        return SchemeConfig(**d)


@dataclass(frozen=True)
class Trajectory:
    """Snapshots ``chi^n`` at ``snapshot_steps`` and one record per step ``n = 1..N``."""

    cfg: SchemeConfig
    E0: float
    snapshot_steps: tuple
    snapshots: tuple
    records: tuple
    volumes0: tuple = field(default=())

    @property
    def configs(self) -> tuple:
        return self.snapshots

    @property
    def final(self) -> Partition:
        return self.snapshots[-1]

    def snapshot_at(self, n: int) -> Partition:
        try:
            return self.snapshots[self.snapshot_steps.index(n)]
        except ValueError:
            raise KeyError(f"no snapshot stored for step {n}") from None

    def energies(self) -> np.ndarray:
        """``E_h(chi^n)`` for ``n = 0..N``."""
        return np.array([self.E0] + [r.Eh for r in self.records])

    def times(self) -> np.ndarray:
        return np.arange(len(self.records) + 1) * self.cfg.h


def _check_input(chi: Partition, cfg: SchemeConfig):
    if chi.grid != cfg.grid:
        raise GridMismatch(f"partition grid {chi.grid} != config grid {cfg.grid}")
    if chi.P != cfg.sigma.P:
        raise GridMismatch(f"partition has {chi.P} phases, tensions have {cfg.sigma.P}")


def _fields(labels: np.ndarray, cfg: SchemeConfig):
    """Threshold the phase fields of ``labels``: returns (phi, next labels, tie count), flat."""
    P = cfg.sigma.P
    phases = np.arange(1, P + 1, dtype=np.uint8).reshape((P,) + (1,) * cfg.grid.d)
    stack = (labels[None] == phases).astype(float)
    u = np.ascontiguousarray(convolve_array(stack, cfg.grid, cfg.h).reshape(P, -1))
    phi = np.empty_like(u)
    lab, ties = kernels.tension_threshold(
        u, _sigma_array(cfg.sigma), cfg.tie_tol * cfg.sigma.sigma_max,
        cfg.tie_rule == "largest-index", phi)
    return phi, lab, int(ties)


def step_with_fields(chi_prev: Partition, cfg: SchemeConfig):
    """One step; returns ``(chi_new, phi, ties)`` with ``phi`` of shape ``(P, *shape)``."""
    _check_input(chi_prev, cfg)
    phi, lab, ties = _fields(chi_prev.labels, cfg)
    return (Partition(cfg.grid, lab.reshape(cfg.grid.shape), cfg.sigma.P),
            phi.reshape((cfg.sigma.P,) + cfg.grid.shape), ties)


def threshold_step(chi_prev: Partition, cfg: SchemeConfig) -> Partition:
    """Assign every cell to ``argmin_i sum_j sigma_ij G_h * chi_j``."""
    return step_with_fields(chi_prev, cfg)[0]


def run(chi0: Partition, cfg: SchemeConfig, observers=()) -> Trajectory:
    """Apply ``N = T/h`` thresholding steps.

    Energies and dissipations come from the same ``phi`` fields the steps
    use: ``E_h(chi^n) = dx^d h^{-1/2} sum_c phi^n_{l_n(c)}`` and
    ``-E_h(chi^n - chi^{n-1})`` from the change of ``phi`` on moved cells,
    so each step costs ``P`` forward and ``P`` inverse transforms.
    Observers are called as ``obs(n, chi_prev, chi_new, record)`` after each step.
    Once a step leaves the labels unchanged the configuration is a fixed
    point and the remaining steps are filled in without recomputation.
    """
    _check_input(chi0, cfg)
    g = cfg.grid
    P = cfg.sigma.P
    scale = g.cell_volume / math.sqrt(cfg.h)
    stride = cfg.snapshot_stride
    N = cfg.N

    lab_cur = np.ascontiguousarray(chi0.labels.reshape(-1))
    phi_cur, lab_next, ties_next = _fields(chi0.labels, cfg)
    E0 = kernels.energy_sum(phi_cur, lab_cur) * scale
    steps, snaps, records = [0], [chi0], []
    part_cur = chi0
    fixed = False
    for n in range(1, N + 1):
        if not fixed:
            if np.array_equal(lab_next, lab_cur):
                fixed = True
            else:
                ties = ties_next
                phi_new, lab_after, ties_next = _fields(lab_next.reshape(g.shape), cfg)
                e, dsum = kernels.step_sums(phi_new, phi_cur, lab_next, lab_cur)
                part_new = Partition(g, lab_next.reshape(g.shape), P)
                vols = np.bincount(lab_next, minlength=P + 1)[1:] * g.cell_volume
                rec = StepRecord(n=n, t=n * cfg.h, Eh=e * scale, dissipation=dsum * scale,
                                 volumes=tuple(float(v) for v in vols), ties=ties)
                phi_cur, lab_cur, lab_next = phi_new, lab_next, lab_after
        if fixed:
            prev = records[-1] if records else None
            vols = prev.volumes if prev else tuple(float(v) for v in chi0.volumes())
            Eh = prev.Eh if prev else E0
            rec = StepRecord(n=n, t=n * cfg.h, Eh=Eh, dissipation=0.0, volumes=vols, ties=ties_next)
            part_new = part_cur
        records.append(rec)
        for obs in observers:
            obs(n, part_cur, part_new, rec)
        part_cur = part_new
        if n % stride == 0 or n == N:
            steps.append(n)
            snaps.append(part_new)
    return Trajectory(cfg=cfg, E0=float(E0), snapshot_steps=tuple(steps), snapshots=tuple(snaps),
                      records=tuple(records), volumes0=tuple(float(v) for v in chi0.volumes()))


# --------------------------------------------------------------------------
# brute-force oracle


def step_objective(chi: Partition, chi_prev: Partition, h: float, sigma) -> float:
    """``E_h(chi) - E_h(chi - chi_prev)``, the functional one step minimizes."""
    from .energetics import approximate_energy, metric_term

    return approximate_energy(chi, h, sigma) + metric_term(chi, chi_prev, h, sigma)


@dataclass(frozen=True)
class OracleResult:
    minimizer: Partition
    min_objective: float
    step_objective: float
    candidates: int


def _all_labelings(P: int, n: int) -> np.ndarray:
    return np.array(list(itertools.product(range(1, P + 1), repeat=n)), dtype=np.uint8)


def minimizing_movement_oracle(chi_prev: Partition, cfg: SchemeConfig, atol: float = 1e-10,
                               detail: bool = False):
    """Exhaustive minimizer of ``E_h(chi) - E_h(chi - chi_prev)`` on a tiny 1-D torus.

    Evaluates the objective of all ``P^cells`` labelings with the same
    quadratic form that backs :func:`~mbo.energetics.approximate_energy` and
    :func:`~mbo.energetics.metric_term`, and checks that the thresholding
    step attains the optimum to ``atol``; raises :class:`OracleMismatch`
    otherwise.
    """
    _check_input(chi_prev, cfg)
    g = cfg.grid
    P = cfg.sigma.P
    if g.d != 1 or g.size > MAX_ORACLE_CELLS or P > MAX_ORACLE_PHASES:
        raise TooLargeForBruteForce(
            f"brute force needs a 1-D grid with <= {MAX_ORACLE_CELLS} cells and P <= "
            f"{MAX_ORACLE_PHASES}; got d={g.d}, cells={g.size}, P={P}")
    cand = _all_labelings(P, g.size)
    phases = np.arange(1, P + 1, dtype=np.uint8)[None, :, None]
    prev = (chi_prev.labels[None, None, :] == phases).astype(float)
    best_val, best_lab = math.inf, None
    for start in range(0, len(cand), 1 << 15):
        block = cand[start:start + (1 << 15)]
        stack = (block[:, None, :] == phases).astype(float)
        obj = quadratic_form(stack, g, cfg.h, cfg.sigma) - quadratic_form(stack - prev, g, cfg.h, cfg.sigma)
        k = int(np.argmin(obj))
        if obj[k] < best_val:
            best_val, best_lab = float(obj[k]), block[k]
    minimizer = Partition(g, best_lab, P)
    stepped = threshold_step(chi_prev, cfg)
    val = step_objective(stepped, chi_prev, cfg.h, cfg.sigma)
    if abs(val - best_val) > atol:
        raise OracleMismatch(f"thresholding objective {val!r} != brute-force optimum {best_val!r}")
    if detail:
        return OracleResult(minimizer, best_val, val, len(cand))
    return minimizer
