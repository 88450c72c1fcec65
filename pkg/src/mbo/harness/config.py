"""Flat ``key = value`` experiment configuration.

One key per line; ``#`` starts a comment; blank lines are ignored.  Keys and
defaults:

==========================  ============================================
``experiment``              evolve | circle-test | junction-test |
                            consistency | oracle-check | excess-scan
                            (the CLI argument takes precedence)
``d``                       spatial dimension, default 2
``Lambda``                  torus side, default 1.0
``n_cells``                 cells per axis, default 256
``h``                       time step / kernel variance
``h_list``                  comma-separated, strictly decreasing (sweeps)
``T``                       horizon, a multiple of ``h``; default 0
``alpha``                   mesoscopic factor, default 1
``tie_rule``                smallest-index (default) | largest-index
``tie_tol``                 relative tie tolerance, default 1e-12
``P``                       phase count (else inferred)
``sigma``                   rows separated by ``;``, entries by ``,``
``sigma_equal``             all off-diagonal tensions equal to this value
``initial``                 disk(R=.., center=x y) | stripe(width=.., axis=..)
                            | sectors(angles=a b c) | voronoi(count=..)
                            | file(path=..)
``snapshot_stride``         default K = round(alpha / sqrt(h))
``seed``                    64-bit seed, default 0
``output``                  output directory (``--out`` takes precedence)
``allow_underresolved``     true | false (default false)
``delta``                   good-ball tilt threshold, default 0.05
``normal_net``              half-space directions, default 64 (2-D) / 128 (3-D)
``radii``                   excess-scan radii, comma-separated
``oracle_instances``        default 100
``oracle_max_cells``        default 10
``law_rate``                circle test: ``R^2 = R0^2 - law_rate t``; default d - 1
``tolerance``               relative tolerance of the experiment's main check
``angle_tol_deg``           junction test tolerance in degrees
``steps``                   junction test steps, default 200
==========================  ============================================

Unless ``allow_underresolved`` is set, every ``h`` must satisfy
``sqrt(h) >= 3 dx``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ParseError, TensionError, ValidationError
from ..fields import TorusGrid
from ..tensions import SurfaceTensionMatrix, validate

__all__ = ["ExperimentConfig", "InitialData", "parse_config", "load_config", "EXPERIMENTS"]

EXPERIMENTS = ("evolve", "circle-test", "junction-test", "consistency", "oracle-check", "excess-scan")
INITIAL_KINDS = ("disk", "stripe", "sectors", "voronoi", "file")

_KNOWN = {
    "experiment", "d", "Lambda", "n_cells", "h", "h_list", "T", "alpha", "tie_rule", "tie_tol", "P",
    "sigma", "sigma_equal", "initial", "snapshot_stride", "seed", "output", "allow_underresolved",
    "delta", "normal_net", "radii", "oracle_instances", "oracle_max_cells", "law_rate", "tolerance",
    "angle_tol_deg", "steps",
}


@dataclass(frozen=True)
class InitialData:
    kind: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    grid: TorusGrid
    h_list: tuple
    T: float
    alpha: float
    tie_rule: str
    tie_tol: float
    sigma: SurfaceTensionMatrix
    initial: InitialData
    snapshot_stride: int
    seed: int
    output: str
    allow_underresolved: bool
    delta: float
    normal_net: int
    radii: tuple
    oracle_instances: int
    oracle_max_cells: int
    law_rate: float
    tolerance: float
    angle_tol_deg: float
    steps: int

    @property
    def h(self) -> float:
        """The finest (last) variance of the list."""
        return self.h_list[-1]

    @property
    def P(self) -> int:
        return self.sigma.P

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def _split_lines(text: str):
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(no, f"expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", key):
            raise ParseError(no, f"invalid key {key!r}")
        if value == "":
            raise ParseError(no, f"missing value for {key!r}")
        yield no, key, value


def _float(field_name, v):
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise ValidationError(field_name, f"not a number: {v!r}") from None
    if not math.isfinite(x):
        raise ValidationError(field_name, f"not finite: {v!r}")
    return x


def _int(field_name, v):
    try:
        x = int(v)
    except (TypeError, ValueError):
        raise ValidationError(field_name, f"not an integer: {v!r}") from None
    return x


def _bool(field_name, v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValidationError(field_name, f"not a boolean: {v!r}")


def _floats(field_name, v):
    parts = [p for p in re.split(r"[,\s]+", str(v).strip()) if p]
    if not parts:
        raise ValidationError(field_name, "empty list")
    return tuple(_float(field_name, p) for p in parts)


def _parse_initial(no, value) -> InitialData:
    m = re.fullmatch(r"([a-z]+)\s*(?:\((.*)\))?", value.strip())
    if not m:
        raise ParseError(no, f"bad initial-data descriptor {value!r}")
    kind, args = m.group(1), m.group(2)
    if kind not in INITIAL_KINDS:
        raise ParseError(no, f"unknown initial data {kind!r}; expected one of {INITIAL_KINDS}")
    params = {}
    if args and args.strip():
        for item in args.split(","):
            if "=" not in item:
                raise ParseError(no, f"initial-data argument {item.strip()!r} is not name=value")
            k, v = item.split("=", 1)
            params[k.strip()] = v.strip()
    return InitialData(kind, params)


def parse_config(text: str, experiment: str = None, allow_underresolved: bool = None,
                 seed: int = None, output: str = None) -> ExperimentConfig:
    """Parse and validate; keyword arguments override the file (CLI flags)."""
    raw, lines = {}, {}
    for no, key, value in _split_lines(text):
        if key in raw:
            raise ParseError(no, f"duplicate key {key!r}")
        if key not in _KNOWN:
            raise ParseError(no, f"unknown key {key!r}")
        raw[key] = value
        lines[key] = no
    # syntax errors take precedence over validation errors
    parsed_initial = _parse_initial(lines["initial"], raw["initial"]) if "initial" in raw else None

    exp = experiment or raw.get("experiment")
    if exp is None:
        raise ValidationError("experiment", "no experiment given")
    if exp not in EXPERIMENTS:
        raise ValidationError("experiment", f"unknown experiment {exp!r}; expected one of {EXPERIMENTS}")
    if experiment and raw.get("experiment") not in (None, experiment):
        raise ValidationError("experiment", f"config is for {raw['experiment']!r}, not {experiment!r}")

    d = _int("d", raw.get("d", 1 if exp == "oracle-check" else 2))
    try:
        grid = TorusGrid(d, _float("Lambda", raw.get("Lambda", 1.0)), _int("n_cells", raw.get("n_cells", 256)))
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError("grid", str(exc)) from None

    if "h" in raw and "h_list" in raw:
        raise ValidationError("h", "give either h or h_list, not both")
    if "h_list" in raw:
        h_list = _floats("h_list", raw["h_list"])
        if any(b >= a for a, b in zip(h_list, h_list[1:])):
            raise ValidationError("h_list", "must be strictly decreasing")
    elif "h" in raw:
        h_list = (_float("h", raw["h"]),)
    elif exp == "oracle-check":
        h_list = ()
    else:
        raise ValidationError("h", "missing")
    if any(h <= 0 for h in h_list):
        raise ValidationError("h", "must be positive")

    allow = _bool("allow_underresolved", raw.get("allow_underresolved", "false"))
    if allow_underresolved:
        allow = True
    if exp != "oracle-check" and not allow:
        for h in h_list:
            if grid.resolution(h) < 3.0:
                raise ValidationError(
                    "h", f"sqrt(h)/dx = {grid.resolution(h):.3g} < 3 for h = {h}; "
                         "refine the grid or pass --allow-underresolved")

    T = _float("T", raw.get("T", 0.0))
    if T < 0:
        raise ValidationError("T", "must be nonnegative")
    for h in h_list:
        N = round(T / h)
        if abs(N * h - T) > 1e-9 * max(h, T):
            raise ValidationError("T", f"{T} is not a multiple of h = {h}")
    alpha = _float("alpha", raw.get("alpha", 1.0))
    if not 0 < alpha <= 2:
        raise ValidationError("alpha", "must lie in (0, 2]")
    tie_rule = raw.get("tie_rule", "smallest-index")
    if tie_rule not in ("smallest-index", "largest-index"):
        raise ValidationError("tie_rule", f"unknown rule {tie_rule!r}")
    tie_tol = _float("tie_tol", raw.get("tie_tol", 1e-12))

    initial = None
    if "initial" in raw:
        initial = parsed_initial
    elif exp in ("circle-test", "consistency", "excess-scan", "evolve"):
        initial = InitialData("disk", {"R": "0.25"})
    elif exp == "junction-test":
        initial = InitialData("sectors", {})

    P = _int("P", raw["P"]) if "P" in raw else None
    if "sigma" in raw and "sigma_equal" in raw:
        raise ValidationError("sigma", "give either sigma or sigma_equal, not both")
    if "sigma" in raw:
        try:
            rows = [[float(x) for x in r.split(",")] for r in raw["sigma"].split(";")]
        except ValueError:
            raise ValidationError("sigma", f"cannot read matrix {raw['sigma']!r}") from None
        mat = rows
    else:
        if P is None:
            P = _infer_P(initial, exp)
        mat = _float("sigma_equal", raw.get("sigma_equal", 1.0)) * (np.ones((P, P)) - np.eye(P))
    try:
        sigma = validate(mat)
    except TensionError as exc:
        raise ValidationError("sigma", f"{type(exc).__name__}: {exc}") from exc
    if P is not None and sigma.P != P:
        raise ValidationError("P", f"P = {P} but sigma is {sigma.P}x{sigma.P}")

    if initial is not None:
        initial = _check_initial(initial, grid, sigma.P)

    stride = raw.get("snapshot_stride")
    if stride is not None:
        stride = _int("snapshot_stride", stride)
        if stride < 1:
            raise ValidationError("snapshot_stride", "must be >= 1")
    elif h_list:
        stride = max(1, int(round(alpha / math.sqrt(h_list[-1]))))
    else:
        stride = 1

    sd = _int("seed", raw.get("seed", 0)) if seed is None else int(seed)
    if not 0 <= sd < 2**64:
        raise ValidationError("seed", "must be an unsigned 64-bit integer")

    delta = _float("delta", raw.get("delta", 0.05))
    if delta <= 0:
        raise ValidationError("delta", "must be positive")
    net = _int("normal_net", raw.get("normal_net", 64 if d <= 2 else 128))
    if net < 2:
        raise ValidationError("normal_net", "need at least two directions")
    radii = _floats("radii", raw["radii"]) if "radii" in raw else ()
    if any(r <= 0 for r in radii):
        raise ValidationError("radii", "must be positive")
    inst = _int("oracle_instances", raw.get("oracle_instances", 100))
    maxc = _int("oracle_max_cells", raw.get("oracle_max_cells", 10))
    if not 4 <= maxc <= 12:
        raise ValidationError("oracle_max_cells", "must lie in [4, 12]")
    law_rate = _float("law_rate", raw.get("law_rate", float(d - 1)))
    tol = _float("tolerance", raw.get("tolerance", _default_tolerance(exp, d)))
    angle_tol = _float("angle_tol_deg", raw.get("angle_tol_deg", 3.0 if np.ptp(_offdiag(sigma)) == 0 else 4.0))
    steps = _int("steps", raw.get("steps", 200))
    out = output or raw.get("output") or f"mbo-out/{exp}"

    return ExperimentConfig(
        experiment=exp, grid=grid, h_list=tuple(h_list), T=T, alpha=alpha, tie_rule=tie_rule,
        tie_tol=tie_tol, sigma=sigma, initial=initial, snapshot_stride=stride, seed=sd, output=out,
        allow_underresolved=allow, delta=delta, normal_net=net, radii=tuple(radii),
        oracle_instances=inst, oracle_max_cells=maxc, law_rate=law_rate, tolerance=tol,
        angle_tol_deg=angle_tol, steps=steps,
    )


def _offdiag(sigma: SurfaceTensionMatrix):
    return sigma.sigma[~np.eye(sigma.P, dtype=bool)]


def _default_tolerance(exp, d):
    return {"circle-test": 0.03 if d == 2 else 0.10, "consistency": 0.02}.get(exp, 0.0)


def _infer_P(initial, exp):
    if exp == "oracle-check":
        return 3
    if initial is None:
        return 2
    if initial.kind == "sectors":
        return len(_floats("angles", initial.params.get("angles", "120 120 120")))
    if initial.kind == "voronoi":
        return _int("count", initial.params.get("count", 8))
    if initial.kind == "file":
        from ..io import read_snapshot

        return read_snapshot(initial.params["path"]).P
    return 2


def _check_initial(init: InitialData, grid: TorusGrid, P: int) -> InitialData:
    p = dict(init.params)
    L = grid.Lambda
    if init.kind == "disk":
        R = _float("initial.R", p.get("R", 0.25))
        if not 0 < 2 * R < L:
            raise ValidationError("initial.R", f"disk of radius {R} does not fit in a torus of side {L}")
        c = _floats("initial.center", p["center"]) if "center" in p else (L / 2,) * grid.d
        if len(c) != grid.d:
            raise ValidationError("initial.center", f"need {grid.d} coordinates")
        p = {"R": R, "center": c}
    elif init.kind == "stripe":
        w = _float("initial.width", p.get("width", 0.5 * L))
        if not 0 < w < L:
            raise ValidationError("initial.width", f"stripe width must lie in (0, {L})")
        axis = _int("initial.axis", p.get("axis", 0))
        if not 0 <= axis < grid.d:
            raise ValidationError("initial.axis", "axis out of range")
        p = {"width": w, "axis": axis}
    elif init.kind == "sectors":
        angles = _floats("initial.angles", p.get("angles", "120 120 120"))
        if any(a <= 0 for a in angles) or abs(sum(angles) - 360.0) > 1e-9:
            raise ValidationError("initial.angles", "sector angles must be positive and sum to 360")
        if len(angles) != P:
            raise ValidationError("initial.angles", f"{len(angles)} sectors for {P} phases")
        if grid.d < 2:
            raise ValidationError("initial", "sectors need d >= 2")
        p = {"angles": angles}
    elif init.kind == "voronoi":
        count = _int("initial.count", p.get("count", P))
        if not 1 <= count <= P:
            raise ValidationError("initial.count", f"need 1 <= count <= P = {P}")
        p = {"count": count}
    elif init.kind == "file":
        if "path" not in p:
            raise ValidationError("initial.path", "missing")
        p = {"path": p["path"]}
    return InitialData(init.kind, p)


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read(), **overrides)
