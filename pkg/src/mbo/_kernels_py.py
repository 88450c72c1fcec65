"""Pure-numpy versions of the compiled kernels in ``_core.pyx``.

Signatures and results match the compiled module exactly (up to
floating-point summation order), so either can back :mod:`mbo.kernels`.
"""
from __future__ import annotations

import numpy as np
from scipy.special import erfc


def tension_threshold(u, sigma, tol, prefer_last, phi_out):
    """phi = sigma @ u per cell, label = argmin phi (1-based), ties within ``tol``."""
    np.matmul(sigma, u, out=phi_out)
    m = phi_out.min(axis=0)
    within = phi_out <= m + tol
    if prefer_last:
        P = phi_out.shape[0]
        best = P - 1 - np.argmax(within[::-1], axis=0)
    else:
        best = np.argmax(within, axis=0)
    ties = int(np.count_nonzero(within.sum(axis=0) > 1))
    return (best + 1).astype(np.uint8), ties


def _gather(a, lab):
    return np.take_along_axis(a, (lab.astype(np.intp) - 1)[None], axis=0)[0]


def step_sums(phi_new, phi_old, lab_new, lab_old):
    """(sum_c phi_new[l_new], sum_c dphi[l_old] - dphi[l_new]) with dphi = phi_new - phi_old."""
    e = float(_gather(phi_new, lab_new).sum())
    moved = np.flatnonzero(lab_new != lab_old)
    if moved.size == 0:
        return e, 0.0
    pn, po = phi_new[:, moved], phi_old[:, moved]
    a, b = lab_new[moved], lab_old[moved]
    d = (_gather(pn, b) - _gather(po, b)) - (_gather(pn, a) - _gather(po, a))
    return e, float(d.sum())


def energy_sum(phi, lab):
    return float(_gather(phi, lab).sum())


def halfspace_scan(X, normals, chi_i, chi_j, eta, sqrt_h):
    """For each normal: volume-matched offset, bulk mismatch counts and flat-interface density sum."""
    n = X.shape[0]
    M = normals.shape[0]
    V = int(chi_i.sum())
    ci = chi_i.astype(bool)
    cj = chi_j.astype(bool)
    lam = np.empty(M)
    bi = np.empty(M, dtype=np.int64)
    bj = np.empty(M, dtype=np.int64)
    area = np.empty(M)
    # same summation order as the compiled loop so that tied projections split identically
    proj_all = np.zeros((n, M))
    for a in range(X.shape[1]):
        proj_all = proj_all + X[:, a:a + 1] * normals[None, :, a]
    rad = float(np.sqrt(np.max(np.sum(X * X, axis=1)))) * (1.0 + 1e-12) + 1e-300 if n else 0.0
    for q in range(M):
        p = proj_all[:, q]
        if n == 0:
            lam[q] = 0.0
        elif V == 0:
            lam[q] = rad + 1.0
        elif V == n:
            lam[q] = -rad - 1.0
        else:
            part = np.partition(p, n - V)
            lam[q] = 0.5 * (part[: n - V].max() + part[n - V])
        up = p - lam[q] > 0
        bi[q] = np.count_nonzero(up != ci)
        bj[q] = np.count_nonzero(up == cj)
        t = np.abs(p - lam[q])
        near = t < 7.0 * sqrt_h
        area[q] = float(np.sum(eta[near] * 0.5 * erfc(t[near] / (np.sqrt(2.0) * sqrt_h))))
    return lam, bi, bj, area
