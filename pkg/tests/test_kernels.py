import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mbo import _kernels_py as py
from mbo import kernels

compiled = pytest.mark.skipif(kernels.backends().get("compiled") is None,
                              reason="compiled extension not built")


def _threshold_inputs(rng, P, n):
    u = rng.random((P, n))
    u /= u.sum(axis=0)
    s = rng.uniform(0.5, 1.5, size=(P, P))
    s = s + s.T
    np.fill_diagonal(s, 0.0)
    return np.ascontiguousarray(u), np.ascontiguousarray(s)


def test_selected_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")
    assert kernels.backends()["python"] is py


def test_pure_python_switch():
    env = dict(os.environ, MBO_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from mbo import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_python_threshold_against_argmin(rng):
    u, s = _threshold_inputs(rng, 4, 500)
    phi = np.empty_like(u)
    lab, ties = py.tension_threshold(u, s, 0.0, False, phi)
    assert np.allclose(phi, s @ u, rtol=0, atol=1e-14)
    assert np.array_equal(lab, np.argmin(s @ u, axis=0) + 1)
    assert ties == 0


@compiled
@given(st.integers(2, 6), st.integers(1, 300), st.integers(0, 2**32 - 1), st.booleans())
def test_threshold_backends_agree(P, n, seed, last):
    rng = np.random.default_rng(seed)
    u, s = _threshold_inputs(rng, P, n)
    # plant exact ties by duplicating a phase's field and tension row
    if P >= 3:
        u[1] = u[2]
        s[1, :] = s[2, :]
        s[:, 1] = s[:, 2]
        s[1, 1] = s[2, 2] = 0.0
        s[1, 2] = s[2, 1] = 1.0
    c = kernels.backends()["compiled"]
    pa, pb = np.empty_like(u), np.empty_like(u)
    la, ta = c.tension_threshold(u, s, 1e-12, last, pa)
    lb, tb = py.tension_threshold(u, s, 1e-12, last, pb)
    assert np.array_equal(la, lb) and ta == tb
    assert np.allclose(pa, pb, rtol=0, atol=1e-14)


@compiled
@given(st.integers(2, 4), st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_step_sums_backends_agree(P, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((P, n)), rng.random((P, n))
    la = rng.integers(1, P + 1, n).astype(np.uint8)
    lb = rng.integers(1, P + 1, n).astype(np.uint8)
    c = kernels.backends()["compiled"]
    assert np.allclose(c.step_sums(a, b, la, lb), py.step_sums(a, b, la, lb), rtol=1e-13, atol=1e-13)
    assert c.energy_sum(a, la) == pytest.approx(py.energy_sum(a, la), rel=1e-13)


def test_python_step_sums_definition(rng):
    P, n = 3, 50
    a, b = rng.random((P, n)), rng.random((P, n))
    la = rng.integers(1, P + 1, n).astype(np.uint8)
    lb = rng.integers(1, P + 1, n).astype(np.uint8)
    e, dsum = py.step_sums(a, b, la, lb)
    idx = np.arange(n)
    assert e == pytest.approx(a[la - 1, idx].sum())
    d = a - b
    assert dsum == pytest.approx(np.sum(d[lb - 1, idx] - d[la - 1, idx]))


@compiled
@given(st.integers(1, 3), st.integers(0, 400), st.integers(0, 2**32 - 1), st.booleans())
def test_halfspace_scan_backends_agree(d, n, seed, grid_like):
    rng = np.random.default_rng(seed)
    if grid_like:
        X = np.round(rng.uniform(-1, 1, size=(n, d)) * 8) / 8 + 1 / 16  # many tied projections
    else:
        X = rng.uniform(-1, 1, size=(n, d))
    normals = rng.normal(size=(7, d))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    ci = (rng.random(n) < rng.random()).astype(np.uint8)
    cj = ((1 - ci) * (rng.random(n) < 0.8)).astype(np.uint8)
    eta = rng.random(n)
    c = kernels.backends()["compiled"]
    args = (np.ascontiguousarray(X), np.ascontiguousarray(normals), ci, cj, eta, 0.05)
    la, bia, bja, aa = c.halfspace_scan(*args)
    lb, bib, bjb, ab = py.halfspace_scan(*args)
    assert np.array_equal(la, lb)
    assert np.array_equal(bia, bib) and np.array_equal(bja, bjb)
    assert np.allclose(aa, ab, rtol=1e-6, atol=1e-7 * max(1.0, eta.sum()))


def test_halfspace_scan_volume_matching(rng):
    n = 1000
    X = rng.uniform(-1, 1, size=(n, 2))
    nrm = np.array([[1.0, 0.0], [0.6, 0.8]])
    ci = (X[:, 0] > 0.3).astype(np.uint8)
    cj = (1 - ci).astype(np.uint8)
    for k in (kernels.backends()[b] for b in kernels.backends() if kernels.backends()[b] is not None):
        lam, bi, bj, _ = k.halfspace_scan(X, nrm, ci, cj, np.ones(n), 0.05)
        for q in range(2):
            assert np.count_nonzero(X @ nrm[q] > lam[q]) == ci.sum()
        assert bi[0] == 0 and bj[0] == 0
