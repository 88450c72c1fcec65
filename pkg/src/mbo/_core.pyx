# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled kernels; see ``_kernels_py.py`` for the reference implementations."""
import numpy as np
cimport numpy as cnp
from libc.math cimport erfc, fabs, sqrt, INFINITY
from libcpp.algorithm cimport nth_element
from libcpp.vector cimport vector

cnp.import_array()

# Gaussian tail Phi(-z) tabulated on [0, TAIL]; interpolation error < 3e-8
DEF TABLE_N = 8192
DEF TAIL = 7.0


cdef extern from "stdlib.h":
    void* malloc(size_t size)
    void free(void* ptr)


cdef inline double* malloc_doubles(Py_ssize_t n) except NULL:
    cdef double* p = <double*> malloc(max(n, 1) * sizeof(double))
    if p == NULL:
        raise MemoryError()
    return p


cdef inline void free_doubles(double* p):
    free(p)


def tension_threshold(const double[:, ::1] u, const double[:, ::1] sigma, double tol,
                      bint prefer_last, double[:, ::1] phi_out):
    """phi = sigma @ u per cell, label = argmin phi (1-based), ties within ``tol``."""
    cdef Py_ssize_t P = u.shape[0], n = u.shape[1]
    cdef Py_ssize_t c, i, j, best
    cdef double s, m
    cdef long ties = 0
    cdef int within
    labels = np.empty(n, dtype=np.uint8)
    cdef unsigned char[::1] lab = labels
    cdef double* phi = <double*> malloc_doubles(P)
    try:
        for c in range(n):
            m = INFINITY
            for i in range(P):
                s = 0.0
                for j in range(P):
                    s += sigma[i, j] * u[j, c]
                phi[i] = s
                phi_out[i, c] = s
                if s < m:
                    m = s
            within = 0
            best = -1
            for i in range(P):
                if phi[i] <= m + tol:
                    within += 1
                    if best < 0 or prefer_last:
                        best = i
            if within > 1:
                ties += 1
            lab[c] = <unsigned char>(best + 1)
    finally:
        free_doubles(phi)
    return labels, ties


def step_sums(const double[:, ::1] phi_new, const double[:, ::1] phi_old,
              const unsigned char[::1] lab_new, const unsigned char[::1] lab_old):
    """(sum_c phi_new[l_new], sum_c dphi[l_old] - dphi[l_new]) with dphi = phi_new - phi_old."""
    cdef Py_ssize_t n = phi_new.shape[1], c, a, b
    cdef double e = 0.0, dsum = 0.0
    for c in range(n):
        a = lab_new[c] - 1
        b = lab_old[c] - 1
        e += phi_new[a, c]
        if a != b:
            dsum += (phi_new[b, c] - phi_old[b, c]) - (phi_new[a, c] - phi_old[a, c])
    return e, dsum


def energy_sum(const double[:, ::1] phi, const unsigned char[::1] lab):
    cdef Py_ssize_t n = phi.shape[1], c
    cdef double e = 0.0
    for c in range(n):
        e += phi[lab[c] - 1, c]
    return e


def halfspace_scan(const double[:, ::1] X, const double[:, ::1] normals,
                   const unsigned char[::1] chi_i, const unsigned char[::1] chi_j,
                   const double[::1] eta, double sqrt_h):
    """For each normal: volume-matched offset, bulk mismatch counts and flat-interface density sum.

    The offset is the midpoint between the ``(n - V)``-th and ``(n - V + 1)``-th
    smallest projections, ``V`` the number of phase-``i`` cells; it is found
    by bucketing the projections (fused with the projection pass) and
    partially sorting the one bucket that holds the split.
    """
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], M = normals.shape[0]
    cdef Py_ssize_t q, c, a, V = 0, nb, b, below, r, m, idx, kb
    cdef double p, lam, t, area, cut = TAIL * sqrt_h, rad = 0.0, scale, below_max, top, s, z
    cdef double zscale = TABLE_N / TAIL / sqrt_h
    cdef Py_ssize_t iz
    cdef vector[double] table
    table.resize(TABLE_N + 2)
    for c in range(TABLE_N + 2):
        table[c] = 0.5 * erfc(c * TAIL / TABLE_N / sqrt(2.0))
    cdef long long bi, bj, up
    for c in range(n):
        V += chi_i[c]
        s = 0.0
        for a in range(d):
            s += X[c, a] * X[c, a]
        if s > rad:
            rad = s
    rad = sqrt(rad) * (1.0 + 1e-12) + 1e-300
    lam_out = np.empty(M)
    bi_out = np.empty(M, dtype=np.int64)
    bj_out = np.empty(M, dtype=np.int64)
    area_out = np.empty(M)
    cdef double[::1] lam_v = lam_out
    cdef long long[::1] bi_v = bi_out
    cdef long long[::1] bj_v = bj_out
    cdef double[::1] area_v = area_out
    cdef vector[double] proj
    cdef vector[double] work
    cdef vector[Py_ssize_t] counts
    cdef vector[Py_ssize_t] bucket
    nb = max(16, n // 4)
    scale = nb / (2.0 * rad)
    proj.resize(n)
    work.resize(n)
    bucket.resize(n)
    counts.resize(nb)
    idx = n - V
    for q in range(M):
        if 0 < V < n:
            for b in range(nb):
                counts[b] = 0
        for c in range(n):
            p = 0.0
            for a in range(d):
                p += X[c, a] * normals[q, a]
            proj[c] = p
            if 0 < V < n:
                kb = <Py_ssize_t>((p + rad) * scale)
                if kb >= nb:
                    kb = nb - 1
                elif kb < 0:
                    kb = 0
                bucket[c] = kb
                counts[kb] += 1
        if n == 0:
            lam = 0.0
        elif V == 0:
            lam = rad + 1.0
        elif V == n:
            lam = -rad - 1.0
        else:
            b = 0
            below = 0
            while below + counts[b] <= idx:
                below += counts[b]
                b += 1
            r = idx - below
            m = 0
            below_max = -INFINITY
            for c in range(n):
                kb = bucket[c]
                if kb == b:
                    work[m] = proj[c]
                    m += 1
                elif kb < b and proj[c] > below_max:
                    below_max = proj[c]
            nth_element(work.begin(), work.begin() + r, work.begin() + m)
            top = work[r]
            if r > 0:
                below_max = work[0]
                for c in range(1, r):
                    if work[c] > below_max:
                        below_max = work[c]
            lam = 0.5 * (below_max + top)
        bi = 0
        bj = 0
        area = 0.0
        for c in range(n):
            p = proj[c] - lam
            up = p > 0
            bi += up ^ chi_i[c]
            bj += 1 - (up ^ chi_j[c])
            t = fabs(p)
            if t < cut:
                # Phi(-t / sqrt(h)) by linear interpolation in the table
                z = t * zscale
                iz = <Py_ssize_t>z
                z -= iz
                area += eta[c] * (table[iz] + z * (table[iz + 1] - table[iz]))
        lam_v[q] = lam
        bi_v[q] = bi
        bj_v[q] = bj
        area_v[q] = area
    return lam_out, bi_out, bj_out, area_out
