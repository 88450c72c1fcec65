import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mbo import shapes
from mbo.energetics import approximate_energy, energy_dissipation_check
from mbo.errors import GridMismatch, TooLargeForBruteForce
from mbo.fields import Partition, TorusGrid
from mbo.scheme import (
    SchemeConfig,
    minimizing_movement_oracle,
    run,
    step_objective,
    step_with_fields,
    threshold_step,
)
from mbo.tensions import equal_tensions, validate


def classic_mbo(labels, L, h):
    """Two-phase thresholding {G_h * chi_1 > 1/2} with numpy's FFT (independent of the package)."""
    chi = (labels == 1).astype(float)
    n = labels.shape[0]
    k = 2 * np.pi * np.fft.fftfreq(n, d=L / n)
    k2 = sum(np.meshgrid(*([k * k] * labels.ndim), indexing="ij"))
    u = np.real(np.fft.ifftn(np.fft.fftn(chi) * np.exp(-h * k2 / 2)))
    return np.where(u > 0.5, 1, 2), u


def _cfg(grid, P=2, h=None, T=0.0, sigma=None, **kw):
    sigma = equal_tensions(P) if sigma is None else sigma
    h = (4 * grid.dx) ** 2 if h is None else h
    return SchemeConfig(sigma=sigma, h=h, T=T, grid=grid, **kw)


def test_config_defaults_and_validation():
    g = TorusGrid(2, 1.0, 64)
    cfg = _cfg(g, h=1e-4, T=0.01)
    assert cfg.N == 100 and cfg.K == 100 and cfg.snapshot_stride == 100
    assert cfg.alpha == 1.0 and cfg.tie_rule == "smallest-index"
    assert cfg.tau == pytest.approx(0.01)
    assert cfg.with_(alpha=0.5).K == 50
    with pytest.raises(ValueError):
        _cfg(g, h=1e-4, T=0.01005)
    with pytest.raises(ValueError):
        _cfg(g, alpha=2.5)
    with pytest.raises(ValueError):
        _cfg(g, tie_rule="random")
    with pytest.raises(TypeError):
        SchemeConfig(sigma=np.eye(2), h=1e-3, T=0.0, grid=g)


def test_single_phase_fixed_point():
    g = TorusGrid(2, 1.0, 32)
    chi = shapes.single_phase(g, P=3, phase=2)
    assert threshold_step(chi, _cfg(g, P=3)) == chi


def test_grid_mismatch():
    g = TorusGrid(2, 1.0, 32)
    with pytest.raises(GridMismatch):
        threshold_step(shapes.single_phase(TorusGrid(2, 1.0, 16)), _cfg(g))
    with pytest.raises(GridMismatch):
        threshold_step(shapes.single_phase(g, P=3), _cfg(g))


def test_two_phase_matches_classic_threshold(rng):
    g = TorusGrid(2, 1.0, 64)
    h = (3 * g.dx) ** 2
    for _ in range(5):
        chi = Partition(g, rng.integers(1, 3, size=g.shape), 2)
        ref, u = classic_mbo(chi.labels, g.Lambda, h)
        out = threshold_step(chi, _cfg(g, h=h))
        off_tie = np.abs(u - 0.5) > 1e-12
        assert np.array_equal(out.labels[off_tie], ref[off_tie])


def test_stripes_are_stationary(rng):
    g = TorusGrid(2, 1.0, 128)
    for _ in range(100):
        sqrt_h = g.dx * rng.uniform(3.0, 6.0)
        width = rng.uniform(8 * sqrt_h, 1.0 - 8 * sqrt_h)
        chi = shapes.stripe(g, width, start=rng.uniform(0, 1), axis=int(rng.integers(2)))
        assert threshold_step(chi, _cfg(g, h=sqrt_h**2)) == chi


def test_tie_rules():
    # mirror symmetric about cells 0 and 8: phases 2 and 3 tie there
    g = TorusGrid(1, 1.0, 16)
    lab = np.array([1] + [3] * 7 + [1] + [2] * 7)
    chi = Partition(g, lab, 3)
    h = (2 * g.dx) ** 2
    small, _, ties = step_with_fields(chi, _cfg(g, P=3, h=h))
    large = threshold_step(chi, _cfg(g, P=3, h=h, tie_rule="largest-index"))
    assert ties == 2
    assert small.labels[0] == 2 and small.labels[8] == 2
    assert large.labels[0] == 3 and large.labels[8] == 3
    rest = np.ones(16, bool)
    rest[[0, 8]] = False
    assert np.array_equal(small.labels[rest], large.labels[rest])


def test_run_zero_steps():
    g = TorusGrid(2, 1.0, 32)
    chi = shapes.ball(g, 0.25)
    traj = run(chi, _cfg(g, T=0.0))
    assert traj.snapshot_steps == (0,) and traj.snapshots == (chi,) and traj.records == ()
    assert traj.E0 == pytest.approx(approximate_energy(chi, traj.cfg.h, traj.cfg.sigma))


def test_run_records_match_direct_evaluation():
    g = TorusGrid(2, 1.0, 64)
    cfg = _cfg(g, T=10 * (4 * g.dx) ** 2, snapshot_stride=1)
    traj = run(shapes.ball(g, 0.2), cfg)
    assert len(traj.records) == cfg.N == len(traj.snapshots) - 1
    prev = traj.snapshots[0]
    for rec, chi in zip(traj.records, traj.snapshots[1:]):
        assert chi == threshold_step(prev, cfg)
        assert rec.Eh == pytest.approx(approximate_energy(chi, cfg.h, cfg.sigma), rel=1e-12)
        assert rec.volumes == pytest.approx(tuple(chi.volumes()))
        prev = chi


def test_disk_energy_decreases():
    g = TorusGrid(2, 1.0, 512)
    traj = run(shapes.ball(g, 0.25), _cfg(g, h=2e-5, T=0.01))
    E = traj.energies()
    assert np.all(np.diff(E) <= 1e-10)
    assert energy_dissipation_check(traj).ok


def test_voronoi_grain_growth():
    g = TorusGrid(2, 1.0, 256)
    chi = shapes.voronoi(g, 8, np.random.default_rng(3))
    traj = run(chi, _cfg(g, P=8, h=4e-4, T=0.04, snapshot_stride=5))
    E = traj.energies()
    assert E[-1] < E[0] and np.all(np.diff(E) <= 1e-10)
    counts = [len(s.phases_present()) for s in traj.snapshots]
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_fixed_point_fast_forward_keeps_records():
    g = TorusGrid(2, 1.0, 64)
    chi = shapes.stripe(g, 0.5)
    traj = run(chi, _cfg(g, T=20 * (4 * g.dx) ** 2, snapshot_stride=7))
    assert all(r.dissipation == 0.0 and r.Eh == traj.E0 for r in traj.records)
    assert traj.snapshot_steps == (0, 7, 14, 20)


def test_oracle_examples():
    g = TorusGrid(1, 1.0, 8)
    cfg = _cfg(g, h=1.0 / 64)
    for lab in itertools.islice(itertools.product((1, 2), repeat=8), 0, 256, 17):
        chi = Partition(g, np.array(lab), 2)
        out = minimizing_movement_oracle(chi, cfg, detail=True)
        assert out.candidates == 256
        assert abs(out.step_objective - out.min_objective) <= 1e-10
    g6 = TorusGrid(1, 1.0, 6)
    chi = Partition(g6, np.array([1, 2, 3, 3, 1, 2]), 3)
    out = minimizing_movement_oracle(chi, _cfg(g6, P=3, h=(1.5 * g6.dx) ** 2), detail=True)
    assert out.candidates == 729
    single = shapes.single_phase(g, P=2, phase=2)
    assert minimizing_movement_oracle(single, cfg) == single


def test_oracle_objective_is_independent_sum():
    # objective of the thresholded labels by a direct real-space quadratic form;
    # at sqrt(h) = 2 dx the sampled kernel and the spectral one differ by ~3e-9
    g = TorusGrid(1, 1.0, 8)
    h = 1.0 / 16
    s = validate([[0, 1.0, 1.3], [1.0, 0, 0.8], [1.3, 0.8, 0]])
    prev = Partition(g, np.array([1, 1, 2, 3, 3, 2, 1, 3]), 3)
    x = np.arange(8) * g.dx
    z = x[:, None] - x[None, :]
    K = sum(np.exp(-(z + m) ** 2 / (2 * h)) for m in range(-5, 6)) / math.sqrt(2 * math.pi * h) * g.dx

    def Q(a):
        return sum(s.sigma[i, j] * a[i] @ K @ a[j] for i in range(3) for j in range(3)) * g.dx / math.sqrt(h)

    chi = threshold_step(prev, _cfg(g, P=3, h=h, sigma=s))
    A = prev.indicator_stack()
    B = chi.indicator_stack()
    assert step_objective(chi, prev, h, s) == pytest.approx(Q(B) - Q(B - A), rel=1e-7)


def test_oracle_too_large():
    with pytest.raises(TooLargeForBruteForce):
        minimizing_movement_oracle(shapes.single_phase(TorusGrid(1, 1.0, 13)), _cfg(TorusGrid(1, 1.0, 13)))
    with pytest.raises(TooLargeForBruteForce):
        g = TorusGrid(2, 1.0, 4)
        minimizing_movement_oracle(shapes.single_phase(g), _cfg(g))


@st.composite
def small_2d(draw, P=None):
    P = draw(st.integers(2, 4)) if P is None else P
    seed = draw(st.integers(0, 2**32 - 1))
    g = TorusGrid(2, 1.0, 32)
    rng = np.random.default_rng(seed)
    base = shapes.voronoi(g, P, rng)
    return base


@given(small_2d(P=2), st.integers(0, 2**32 - 1))
def test_comparison_principle(chi, seed):
    g = chi.grid
    rng = np.random.default_rng(seed)
    a = chi.labels == 1
    b = a & (rng.random(g.shape) < 0.7)  # B's phase-1 set inside A's
    A = Partition(g, np.where(a, 1, 2), 2)
    B = Partition(g, np.where(b, 1, 2), 2)
    cfg = _cfg(g)
    assert np.all((threshold_step(B, cfg).labels == 1) <= (threshold_step(A, cfg).labels == 1))


@given(small_2d(), st.integers(-31, 31), st.integers(0, 1))
def test_translation_equivariance(chi, k, axis):
    cfg = _cfg(chi.grid, P=chi.P, sigma=_tensions(chi.P))
    shifted = chi.with_labels(np.roll(chi.labels, k, axis=axis))
    out = threshold_step(shifted, cfg)
    assert np.array_equal(out.labels, np.roll(threshold_step(chi, cfg).labels, k, axis=axis))


def _tensions(P):
    pts = np.random.default_rng(P).normal(size=(P, P + 1))
    return validate(np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1)))


@given(small_2d(), st.data())
def test_relabeling_equivariance(chi, data):
    P = chi.P
    perm = np.array(data.draw(st.permutations(range(P))))
    s = _tensions(P)
    cfg = _cfg(chi.grid, P=P, sigma=s)
    # new phase a is old phase perm[a]
    inv = np.argsort(perm)
    relabeled = chi.with_labels(inv[chi.labels - 1] + 1)
    out = threshold_step(relabeled, cfg.with_(sigma=s.permuted(perm)))
    ref = threshold_step(chi, cfg)
    assert np.array_equal(out.labels, inv[ref.labels - 1] + 1)


@given(small_2d(), st.integers(1, 3))
def test_rotation_equivariance(chi, k):
    cfg = _cfg(chi.grid, P=chi.P, sigma=_tensions(chi.P))
    rot = chi.with_labels(np.rot90(chi.labels, k))
    assert np.array_equal(threshold_step(rot, cfg).labels, np.rot90(threshold_step(chi, cfg).labels, k))
