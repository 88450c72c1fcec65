"""Experiment orchestration: runs, sweeps, checks and artifact files.

Every experiment writes into its output directory

* ``summary.txt``: one ``name = pass|fail : value`` line per check, then
  ``name = value`` lines with measured constants;
* CSV tables (header row, comma separated, LF endings, floats via ``repr``);
* MBOLBL1 snapshots (and PGM images in 2-D) under ``snapshots/``.

Nothing time- or host-dependent is written, so repeated runs with the same
configuration and seed produce byte-identical files.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .. import io, shapes
from ..diagnostics import (
    CoveringFields,
    classify_covering,
    disk_radius_series,
    fit_square_radius_slope,
    junction_angles_measured,
    locate_triple_junction,
    radius_law_deviation,
)
from ..energetics import (
    DissipationAccumulator,
    approximate_energy,
    approximate_monotonicity_check,
    disk_energy,
    elg_residual,
    energy_dissipation_check,
    sphere_energy,
    stripe_energy,
)
from ..errors import MBOError, NotATripleJunction, OracleMismatch, TensionError
from ..fields import Partition, TorusGrid
from ..scheme import SchemeConfig, minimizing_movement_oracle, run
from ..tensions import herring_angles, validate
from .config import ExperimentConfig
from .rng import stream

__all__ = [
    "Check",
    "ExperimentResult",
    "run_experiment",
    "time_integrated_energy",
    "initial_partition",
    "scheme_config",
    "parse_summary",
    "IoError",
]


class IoError(MBOError, OSError):
    """An artifact could not be written."""


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: object


@dataclass
class ExperimentResult:
    experiment: str
    out_dir: str
    checks: list = field(default_factory=list)
    constants: list = field(default_factory=list)  # (name, value)
    files: list = field(default_factory=list)
    data: dict = field(default_factory=dict)

    @property
    def status(self) -> int:
        """0 when every check passed, 1 otherwise."""
        return 0 if all(c.passed for c in self.checks) else 1

    def check(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def add(self, name, passed, value):
        self.checks.append(Check(name, bool(passed), value))

    def const(self, name, value):
        self.constants.append((name, value))


def parse_summary(text: str):
    """``(checks, constants)`` from the text of a ``summary.txt``."""
    checks, consts = {}, {}
    for line in text.splitlines():
        if not line.strip():
            continue
        name, rest = (s.strip() for s in line.split("=", 1))
        head, sep, tail = rest.partition(" : ")
        if sep and head in ("pass", "fail"):
            checks[name] = (head == "pass", tail)
        else:
            consts[name] = rest
    return checks, consts


# --------------------------------------------------------------------------
# setup


def initial_partition(cfg: ExperimentConfig) -> Partition:
    g, P, init = cfg.grid, cfg.P, cfg.initial
    p = init.params
    if init.kind == "disk":
        return shapes.ball(g, p["R"], center=p["center"], P=P)
    if init.kind == "stripe":
        return shapes.stripe(g, p["width"], axis=p["axis"], P=P)
    if init.kind == "sectors":
        return shapes.sectors(g, p["angles"])
    if init.kind == "voronoi":
        return shapes.voronoi(g, p["count"], stream(cfg.seed, "voronoi"), P=P)
    if init.kind == "file":
        chi = io.read_snapshot(p["path"])
        if chi.grid != g or chi.P != P:
            from ..errors import ValidationError

            raise ValidationError("initial.path", f"snapshot {chi!r} does not match grid {g} and P = {P}")
        return chi
    raise ValueError(f"unknown initial data {init.kind!r}")


def scheme_config(cfg: ExperimentConfig, h: float, T: float = None, stride: int = None) -> SchemeConfig:
    T = cfg.T if T is None else T
    if stride is None:
        stride = cfg.snapshot_stride if len(cfg.h_list) == 1 else max(1, int(round(cfg.alpha / math.sqrt(h))))
    return SchemeConfig(sigma=cfg.sigma, h=h, T=T, grid=cfg.grid, alpha=cfg.alpha, tie_rule=cfg.tie_rule,
                        tie_tol=cfg.tie_tol, snapshot_stride=stride)


def time_integrated_energy(traj) -> float:
    """``int_0^T E_h(chi^h(t)) dt`` for the piecewise constant interpolation ``chi^h = chi^n`` on ``[nh, (n+1)h)``.

    A mapping ``h -> trajectory`` (a sweep) gives a dict of values.
    """
    if isinstance(traj, dict):
        return {h: time_integrated_energy(t) for h, t in traj.items()}
    if isinstance(traj, (list, tuple)):
        return {t.cfg.h: time_integrated_energy(t) for t in traj}
    E = traj.energies()
    return float(traj.cfg.h * E[:-1].sum())


def _reference_energy(cfg: ExperimentConfig):
    """Sharp-interface energy of two-phase analytic initial data, else ``None``."""
    if cfg.P != 2:
        return None
    s = float(cfg.sigma.sigma[0, 1])
    g, init = cfg.grid, cfg.initial
    if init.kind == "disk":
        R = init.params["R"]
        if g.d == 2:
            return disk_energy(R, s)
        if g.d == 3:
            return sphere_energy(R, s)
    if init.kind == "stripe":
        return stripe_energy(g.Lambda, g.d, s)
    return None


def _elg_field(grid: TorusGrid):
    """Fixed smooth periodic test field used for the residual column of run records."""
    x = grid.mesh(sparse=False)
    k = 2.0 * np.pi / grid.Lambda
    comps = [np.sin(k * x[(a + 1) % grid.d]) for a in range(grid.d)]
    return np.stack(comps)


class _ElgRecorder:
    """Observer evaluating the Euler-Lagrange residual on snapshot steps."""

    def __init__(self, cfg: SchemeConfig):
        self.cfg = cfg
        self.xi = _elg_field(cfg.grid)
        self.values = {}

    def __call__(self, n, chi_prev, chi_new, record=None):
        if n % self.cfg.snapshot_stride == 0 or n == self.cfg.N:
            self.values[n] = elg_residual(chi_new, chi_prev, self.xi, self.cfg.h, self.cfg.sigma)


# --------------------------------------------------------------------------
# artifacts


def _path(out_dir, *parts):
    return os.path.join(out_dir, *parts)


def _write_records(res: ExperimentResult, traj, elg=None, name="records.csv"):
    P = traj.cfg.sigma.P
    header = ["n", "t", "Eh", "dissipation"] + [f"vol_{k}" for k in range(1, P + 1)] + ["elg_residual"]
    elg = elg or {}
    rows = [(0, 0.0, traj.E0, 0.0, *traj.volumes0, None)]
    for r in traj.records:
        rows.append((r.n, r.t, r.Eh, r.dissipation, *r.volumes, elg.get(r.n, r.elg_residual)))
    path = _path(res.out_dir, name)
    io.write_csv(path, header, rows)
    res.files.append(path)


def _write_snapshots(res: ExperimentResult, traj, sub="snapshots"):
    d = _path(res.out_dir, sub)
    os.makedirs(d, exist_ok=True)
    for n, chi in zip(traj.snapshot_steps, traj.snapshots):
        base = _path(d, f"step_{n:07d}")
        io.write_snapshot(base + ".mbolbl", chi)
        res.files.append(base + ".mbolbl")
        if chi.grid.d == 2:
            io.write_pgm(base + ".pgm", chi)
            res.files.append(base + ".pgm")


def _write_summary(res: ExperimentResult):
    lines = [f"{c.name} = {'pass' if c.passed else 'fail'} : {io.format_value(c.value)}" for c in res.checks]
    lines += [f"{k} = {io.format_value(v)}" for k, v in res.constants]
    path = _path(res.out_dir, "summary.txt")
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    res.files.append(path)


def _dissipation_checks(res: ExperimentResult, traj, suffix=""):
    rep = energy_dissipation_check(traj)
    worst = float(rep.step_margins.min()) if len(rep.step_margins) else 0.0
    res.add("energy_dissipation" + suffix, not any("margin" in v for v in rep.violations), worst)
    res.add("dissipation_nonnegative" + suffix, rep.min_dissipation >= -1e-10, rep.min_dissipation)


# --------------------------------------------------------------------------
# experiments


def _evolve(cfg: ExperimentConfig, res: ExperimentResult):
    chi0 = initial_partition(cfg)
    scfg = scheme_config(cfg, cfg.h)
    acc = DissipationAccumulator(cfg.grid, scfg.h)
    elg = _ElgRecorder(scfg)
    traj = run(chi0, scfg, observers=(acc, elg))
    _write_records(res, traj, elg.values)
    _write_snapshots(res, traj)
    _dissipation_checks(res, traj)
    mu = acc.result()
    C = mu.total / traj.E0 if traj.E0 > 0 else 0.0
    res.const("E0", traj.E0)
    res.const("E_final", traj.records[-1].Eh if traj.records else traj.E0)
    res.const("dissipation_sum", float(sum(r.dissipation for r in traj.records)))
    res.const("dissipation_measure_total", mu.total)
    res.const("dissipation_constant", C)
    res.const("dissipation_localized_fraction", mu.localized_fraction)
    res.const("tie_cells", int(sum(r.ties for r in traj.records)))
    res.const("time_integrated_energy", time_integrated_energy(traj))
    res.data.update(traj=traj, dissipation=mu)


def _circle(cfg: ExperimentConfig, res: ExperimentResult):
    if cfg.initial.kind != "disk" or cfg.P != 2:
        from ..errors import ValidationError

        raise ValidationError("initial", "circle-test needs a two-phase disk")
    chi0 = initial_partition(cfg)
    R0 = cfg.initial.params["R"]
    rate = cfg.law_rate
    h = cfg.h
    T = cfg.T
    if T <= 0:
        # run until the law predicts R0 / 2, plus a few steps
        T = (math.ceil(0.75 * R0 * R0 / (rate * h)) + 4) * h
    scfg = scheme_config(cfg, h, T=T)
    traj = run(chi0, scfg)
    t, R = disk_radius_series(traj)
    _write_records(res, traj)
    _write_snapshots(res, traj)
    law = R0 * R0 - rate * t
    io.write_csv(_path(res.out_dir, "radius.csv"), ["n", "t", "R", "R2", "R2_law"],
                 [(n, ti, ri, ri * ri, li) for n, (ti, ri, li) in enumerate(zip(t, R, law))])
    res.files.append(_path(res.out_dir, "radius.csv"))
    _dissipation_checks(res, traj)
    slope = fit_square_radius_slope(t, R, R0)
    if cfg.grid.d == 2:
        dev = radius_law_deviation(t, R, R0, rate)
        res.add("radius_law_max_deviation", dev <= cfg.tolerance, dev)
    else:
        rel = abs(slope + rate) / rate
        res.add("radius_square_slope", rel <= cfg.tolerance, slope)
    res.const("law_rate", rate)
    res.const("fitted_R2_slope", slope)
    res.const("E0", traj.E0)
    res.data.update(traj=traj, t=t, R=R, slope=slope)


def _junction(cfg: ExperimentConfig, res: ExperimentResult):
    if cfg.P != 3 or cfg.initial.kind != "sectors" or cfg.grid.d != 2:
        from ..errors import ValidationError

        raise ValidationError("initial", "junction-test needs three 2-D sectors")
    chi0 = initial_partition(cfg)
    s = cfg.sigma.sigma
    target = np.degrees(herring_angles(s[0, 1], s[0, 2], s[1, 2]))
    steps = cfg.steps if cfg.T <= 0 else int(round(cfg.T / cfg.h))
    scfg = scheme_config(cfg, cfg.h, T=steps * cfg.h)
    L = cfg.grid.Lambda
    series = []
    state = {"center": np.full(2, L / 2)}

    def observe(n, chi_prev, chi_new, record):
        if 2 * n <= steps:
            return
        c = locate_triple_junction(chi_new, state["center"], radius=0.1 * L)
        state["center"] = c
        theta, phases = junction_angles_measured(chi_new, c)
        if phases != (1, 2, 3):
            raise NotATripleJunction(f"phases {phases} around the junction")
        series.append((n, n * cfg.h, c[0], c[1], *np.degrees(theta)))

    traj = run(chi0, scfg, observers=(observe,))
    _write_records(res, traj)
    _write_snapshots(res, traj)
    io.write_csv(_path(res.out_dir, "junction.csv"), ["n", "t", "cx", "cy", "theta_1", "theta_2", "theta_3"], series)
    res.files.append(_path(res.out_dir, "junction.csv"))
    _dissipation_checks(res, traj)
    mean = np.mean(np.array([row[4:] for row in series]), axis=0)
    for k in range(3):
        res.add(f"junction_angle_{k + 1}", abs(mean[k] - target[k]) <= cfg.angle_tol_deg, float(mean[k]))
    for k in range(3):
        res.const(f"herring_angle_{k + 1}", float(target[k]))
    res.const("angle_samples", len(series))
    res.data.update(traj=traj, mean_angles=mean, target=target, series=series)


def _consistency(cfg: ExperimentConfig, res: ExperimentResult):
    chi0 = initial_partition(cfg)
    ref = _reference_energy(cfg)
    rows, errors = [], []
    for h in cfg.h_list:
        E = approximate_energy(chi0, h, cfg.sigma)
        err = abs(E - ref) / ref if ref else None
        errors.append(err)
        rows.append((h, cfg.grid.resolution(h), E, ref, err))
    io.write_csv(_path(res.out_dir, "consistency.csv"), ["h", "sqrt_h_over_dx", "Eh", "reference", "rel_error"], rows)
    res.files.append(_path(res.out_dir, "consistency.csv"))
    if ref is not None:
        res.add("consistency_finest", errors[-1] <= cfg.tolerance, errors[-1])
        decreasing = all(b < a for a, b in zip(errors, errors[1:]))
        res.add("error_decreasing", decreasing, errors[-1] / errors[0] if errors[0] else 0.0)
        res.const("reference_energy", ref)
    if len(cfg.h_list) > 1:
        mono = approximate_monotonicity_check(chi0, cfg.h_list, cfg.sigma,
                                              allow_underresolved=cfg.allow_underresolved)
        res.add("approximate_monotonicity", mono.ok, min(p[4] for p in mono.pairs))
    if cfg.T > 0:
        trajs = {}
        for h in cfg.h_list:
            traj = run(chi0, scheme_config(cfg, h))
            trajs[h] = traj
            _dissipation_checks(res, traj, suffix=f"_h{len(trajs)}")
        ti = time_integrated_energy(trajs)
        vals = [ti[h] for h in cfg.h_list]
        trows = [(h, v, (abs(v - vals[k + 1]) / abs(vals[k + 1]) if k + 1 < len(vals) and vals[k + 1] else None))
                 for k, (h, v) in enumerate(zip(cfg.h_list, vals))]
        io.write_csv(_path(res.out_dir, "time_integrated.csv"), ["h", "integral", "rel_diff_to_next"], trows)
        res.files.append(_path(res.out_dir, "time_integrated.csv"))
        if len(vals) > 1:
            res.const("time_integrated_cauchy_gap", abs(vals[-1] - vals[-2]) / abs(vals[-1]))
        res.data["time_integrated"] = ti
    res.data.update(rows=rows, errors=errors)


def _random_tensions(rng, P):
    while True:
        vals = rng.uniform(0.5, 1.5, size=P * (P - 1) // 2)
        s = np.zeros((P, P))
        s[np.triu_indices(P, 1)] = vals
        s = s + s.T
        try:
            return validate(s)
        except TensionError:
            continue


def _oracle(cfg: ExperimentConfig, res: ExperimentResult):
    rng = stream(cfg.seed, "oracle")
    rows, matches, max_gap = [], 0, 0.0
    for k in range(cfg.oracle_instances):
        cells = int(rng.integers(4, cfg.oracle_max_cells + 1))
        P = int(rng.integers(2, 4))
        sigma = _random_tensions(rng, P)
        g = TorusGrid(1, 1.0, cells)
        h = float((g.dx * rng.uniform(0.5, 2.0)) ** 2)
        prev = Partition(g, rng.integers(1, P + 1, size=cells).astype(np.uint8), P)
        scfg = SchemeConfig(sigma=sigma, h=h, T=h, grid=g, tie_rule=cfg.tie_rule, tie_tol=cfg.tie_tol)
        try:
            out = minimizing_movement_oracle(prev, scfg, atol=1e-10, detail=True)
            ok, step_obj, best = True, out.step_objective, out.min_objective
        except OracleMismatch:
            from ..scheme import step_objective, threshold_step

            ok = False
            step_obj = step_objective(threshold_step(prev, scfg), prev, h, sigma)
            best = None
        gap = abs(step_obj - best) if best is not None else math.inf
        max_gap = max(max_gap, gap)
        matches += ok
        rows.append((k, cells, P, h, step_obj, best, gap))
    io.write_csv(_path(res.out_dir, "oracle.csv"),
                 ["instance", "cells", "P", "h", "step_objective", "min_objective", "gap"], rows)
    res.files.append(_path(res.out_dir, "oracle.csv"))
    res.add("oracle_matches", matches == cfg.oracle_instances, f"{matches}/{cfg.oracle_instances}")
    res.add("oracle_max_gap", max_gap <= 1e-10, max_gap)
    res.data.update(rows=rows, matches=matches, max_gap=max_gap)


def _excess(cfg: ExperimentConfig, res: ExperimentResult):
    chi = initial_partition(cfg)
    h = cfg.h
    if cfg.T > 0:
        traj = run(chi, scheme_config(cfg, h))
        _dissipation_checks(res, traj)
        chi = traj.final
    radii = cfg.radii
    if not radii:
        if cfg.initial.kind != "disk":
            from ..errors import ValidationError

            raise ValidationError("radii", "needed unless the initial data is a disk")
        R = cfg.initial.params["R"]
        radii = (R / 4, R / 8, R / 16)
    radii = tuple(sorted(radii, reverse=True))
    fields = CoveringFields(chi, h)
    reports, means = [], []
    for k, r in enumerate(radii, start=1):
        rep = classify_covering(chi, r, delta=cfg.delta, M=cfg.normal_net, fields=fields)
        reports.append(rep)
        path = _path(res.out_dir, f"excess_r{k}.csv")
        io.write_csv(path, rep.header(cfg.grid.d) + ["total"], [(*row, b.total) for row, b in zip(rep.rows(), rep.balls)])
        res.files.append(path)
        good = rep.good
        means.append(float(np.mean([b.total for b in good])) if good else float("nan"))
        res.const(f"r{k}", r)
        res.const(f"balls_r{k}", rep.n_balls)
        res.const(f"evaluated_r{k}", len(rep.balls))
        res.const(f"good_r{k}", rep.n_good)
        res.const(f"bad_mass_r{k}", rep.bad_mass)
        res.const(f"mean_good_excess_r{k}", means[-1])
    io.write_csv(_path(res.out_dir, "excess_summary.csv"),
                 ["r", "balls", "evaluated", "good", "bad_mass", "mean_good_excess"],
                 [(rep.r, rep.n_balls, len(rep.balls), rep.n_good, rep.bad_mass, m) for rep, m in zip(reports, means)])
    res.files.append(_path(res.out_dir, "excess_summary.csv"))
    bad = [rep.bad_mass for rep in reports]
    tol = 1e-9 * max(1.0, max(bad))
    res.add("bad_mass_nonincreasing", all(b <= a + tol for a, b in zip(bad, bad[1:])), bad[-1])
    res.data.update(reports=reports, means=means, chi=chi)


_RUNNERS = {
    "evolve": _evolve,
    "circle-test": _circle,
    "junction-test": _junction,
    "consistency": _consistency,
    "oracle-check": _oracle,
    "excess-scan": _excess,
}


def run_experiment(cfg: ExperimentConfig, out_dir: str = None) -> ExperimentResult:
    """Run ``cfg.experiment``, write its artifacts and ``summary.txt``; see :attr:`ExperimentResult.status`."""
    out_dir = cfg.output if out_dir is None else out_dir
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out_dir!r}: {exc}") from exc
    res = ExperimentResult(cfg.experiment, out_dir)
    try:
        _RUNNERS[cfg.experiment](cfg, res)
        _write_summary(res)
    except OSError as exc:
        if isinstance(exc, MBOError):
            raise
        raise IoError(f"writing artifacts to {out_dir!r} failed: {exc}") from exc
    return res
