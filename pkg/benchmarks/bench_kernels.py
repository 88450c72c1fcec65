"""Timing of the compiled kernels against the numpy fallback.

Run ``python3 benchmarks/bench_kernels.py [--repeat R]``.  Every kernel is
timed on the same inputs for each available backend; the best of ``R``
repeats is reported together with the speed-up and the largest output
difference between the backends.
"""
from __future__ import annotations

import argparse
import math
import timeit

import numpy as np

from mbo import kernels, shapes
from mbo.diagnostics import cutoff, normal_net
from mbo.fields import TorusGrid, convolve_array
from mbo.tensions import equal_tensions


def _threshold_inputs(n: int, P: int, rng):
    g = TorusGrid(2, 1.0, n)
    chi = shapes.voronoi(g, P, rng)
    h = (4 * g.dx) ** 2
    u = np.stack([convolve_array((chi.labels == k + 1).astype(float), g, h) for k in range(P)])
    u = np.ascontiguousarray(u.reshape(P, -1))
    sigma = np.ascontiguousarray(equal_tensions(P).sigma)
    return u, sigma


def _halfspace_inputs(n: int, M: int):
    g = TorusGrid(2, 1.0, n)
    r = 0.1
    chi = shapes.half_space(g, [math.cos(0.3), math.sin(0.3)], 0.0)
    off = g.periodic_offsets((0.5, 0.5))
    X = np.stack([np.broadcast_to(o, g.shape).reshape(-1) for o in off], axis=1)
    dist = np.sqrt(np.sum(X * X, axis=1))
    sel = dist < 2 * r
    X = np.ascontiguousarray(X[sel])
    eta = np.ascontiguousarray(cutoff(dist[sel], r))
    lab = chi.labels.reshape(-1)[sel]
    return (X, np.ascontiguousarray(normal_net(2, M)), (lab == 1).astype(np.uint8),
            (lab == 2).astype(np.uint8), eta, 4 * g.dx)


def cases(rng):
    for n, P in ((256, 3), (512, 3), (512, 8)):
        u, sigma = _threshold_inputs(n, P, rng)

        def thr(mod, u=u, sigma=sigma):
            phi = np.empty_like(u)
            lab, _ = mod.tension_threshold(u, sigma, 1e-12, False, phi)
            return phi

        yield f"tension_threshold n={n} P={P}", thr

        lab_new = np.ascontiguousarray(np.argmin(sigma @ u, axis=0).astype(np.uint8) + 1)
        lab_old = np.ascontiguousarray(np.roll(lab_new, 7))
        phi_new = np.ascontiguousarray(sigma @ u)
        phi_old = np.ascontiguousarray(np.roll(phi_new, 3, axis=1))

        def sums(mod, a=phi_new, b=phi_old, c=lab_new, d=lab_old):
            return np.array(mod.step_sums(a, b, c, d))

        yield f"step_sums n={n} P={P}", sums
    for n, M in ((1024, 64), (1024, 256)):
        args = _halfspace_inputs(n, M)

        def scan(mod, args=args):
            lam, bi, bj, area = mod.halfspace_scan(*args)
            return np.concatenate([lam, bi, bj, area])

        yield f"halfspace_scan n={n} M={M}", scan


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    backs = kernels.backends()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(backs)}")
    names = list(backs)
    print(f"{'kernel':34s}" + "".join(f"{b + ' [ms]':>16s}" for b in names) + f"{'speed-up':>10s}{'max diff':>11s}")
    for label, fn in cases(np.random.default_rng(0)):
        times, outs = [], []
        for b in names:
            mod = backs[b]
            outs.append(fn(mod))
            t = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
            times.append(1e3 * t)
        speed = times[0] / times[-1] if len(times) > 1 else 1.0
        diff = float(np.max(np.abs(outs[0] - outs[-1]))) if len(outs) > 1 else 0.0
        print(f"{label:34s}" + "".join(f"{t:16.2f}" for t in times) + f"{speed:10.1f}{diff:11.1e}")


if __name__ == "__main__":
    main()
