"""Surface-tension matrices and triple-junction angles.

A tension matrix is admissible when it is symmetric with zero diagonal,
has strictly positive off-diagonal entries, satisfies the strict triangle
inequality and is negative definite on the zero-sum subspace.  The
negative-definiteness margin is what makes the metric term of the
thresholding step a squared norm.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .errors import (
    NoSolution,
    NonpositiveOffDiagonal,
    NonzeroDiagonal,
    NotConditionallyNegativeDefinite,
    NotSymmetric,
    TensionError,
    TriangleInequalityViolated,
)

__all__ = ["SurfaceTensionMatrix", "validate", "equal_tensions", "herring_angles"]

# relative to sigma_max
CND_TOL = 1e-12


@dataclass(frozen=True)
class SurfaceTensionMatrix:
    """Certified surface tensions.  Build with :func:`validate`."""

    sigma: np.ndarray = field(repr=False)
    P: int
    sigma_min: float
    sigma_max: float
    sigma_lower: float
    triangle_slack: float

    def __post_init__(self):
        self.sigma.setflags(write=False)

    def __getitem__(self, idx):
        return self.sigma[idx]

    def permuted(self, perm) -> "SurfaceTensionMatrix":
        """Tensions after relabeling: new phase ``a`` is old phase ``perm[a]`` (0-based)."""
        perm = np.asarray(perm)
        return validate(self.sigma[np.ix_(perm, perm)])

    def __eq__(self, other):
        if not isinstance(other, SurfaceTensionMatrix):
            return NotImplemented
        return np.array_equal(self.sigma, other.sigma)

    def __hash__(self):
        return hash(self.sigma.tobytes())


def _zero_sum_basis(P: int) -> np.ndarray:
    return null_space(np.ones((1, P)))


def validate(raw) -> SurfaceTensionMatrix:
    """Check admissibility of ``raw`` and return the certified matrix.

    Raises one of the :class:`~mbo.errors.TensionError` subclasses naming
    the first violated condition.  Triangle violations are reported with
    1-based indices ``(i, j, k)`` meaning ``sigma_ij >= sigma_ik + sigma_kj``.
    """
    s = np.array(raw, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise TensionError(f"expected a square matrix, got shape {s.shape}")
    P = s.shape[0]
    if P < 2:
        raise TensionError("need at least two phases")
    if not np.all(np.isfinite(s)):
        raise TensionError("non-finite entries")
    if not np.array_equal(s, s.T):
        bad = np.argwhere(s != s.T)[0]
        raise NotSymmetric(f"sigma[{bad[0] + 1},{bad[1] + 1}] != sigma[{bad[1] + 1},{bad[0] + 1}]")
    if np.any(np.diag(s) != 0.0):
        raise NonzeroDiagonal(f"diagonal = {np.diag(s).tolist()}")
    off = s[~np.eye(P, dtype=bool)]
    if np.any(off <= 0.0):
        raise NonpositiveOffDiagonal(f"min off-diagonal entry {off.min()}")

    slack = math.inf
    for i, j, k in itertools.permutations(range(P), 3):
        sl = s[i, k] + s[k, j] - s[i, j]
        if sl <= 0.0:
            raise TriangleInequalityViolated(i + 1, j + 1, k + 1, sl)
        slack = min(slack, sl)

    sigma_max = float(off.max())
    Q = _zero_sum_basis(P)
    lam_max = float(np.linalg.eigvalsh(Q.T @ s @ Q).max())
    if lam_max >= -CND_TOL * sigma_max:
        raise NotConditionallyNegativeDefinite(
            f"largest eigenvalue on the zero-sum subspace is {lam_max:.3g}"
        )
    return SurfaceTensionMatrix(
        sigma=s,
        P=P,
        sigma_min=float(off.min()),
        sigma_max=sigma_max,
        sigma_lower=-lam_max,
        triangle_slack=float(slack),
    )


def equal_tensions(P: int, value: float = 1.0) -> SurfaceTensionMatrix:
    return validate(value * (np.ones((P, P)) - np.eye(P)))


def herring_angles(s12: float, s13: float, s23: float, tol: float = 1e-15):
    """Opening angles ``(theta1, theta2, theta3)`` of a triple junction.

    ``theta_i`` is the angle occupied by phase ``i``; it satisfies
    ``sin(theta_i) / sigma_jk = const`` and the angles sum to ``2*pi``.
    Solved by bisection on the angle opposite the largest tension; the other
    two angles are then obtuse and follow from the sine relation.
    """
    tens = np.array([s23, s13, s12], dtype=float)  # tension opposite phase 1, 2, 3
    if np.any(tens <= 0) or not np.all(np.isfinite(tens)):
        raise NoSolution("tensions must be positive and finite")
    a = int(np.argmax(tens))
    b, c = [m for m in range(3) if m != a]
    ta, tb, tc = tens[a], tens[b], tens[c]
    if ta >= tb + tc:
        raise NoSolution(f"no junction: tension {ta} >= {tb} + {tc}")

    def g(theta):
        k = math.sin(theta) / ta
        return theta - math.asin(min(1.0, k * tb)) - math.asin(min(1.0, k * tc))

    lo, hi = 0.0, math.pi
    # g < 0 near 0 by the strict triangle inequality, g(pi) = pi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    theta_a = 0.5 * (lo + hi)
    k = math.sin(theta_a) / ta
    out = [0.0, 0.0, 0.0]
    out[a] = theta_a
    out[b] = math.pi - math.asin(min(1.0, k * tb))
    out[c] = math.pi - math.asin(min(1.0, k * tc))
    return tuple(out)
