"""Structured latent correlation matrices for multi-year claim dependence.

A policyholder observed for ``tau`` years with yearly claim counts
``n = (n_1, ..., n_tau)`` has one latent normal score per count and one per
individual severity.  Their joint correlation matrix is built from five
correlations:

* ``rho1`` -- count vs. severity, same year
* ``rho2`` -- two severities, same year
* ``rho3`` -- two counts, different years
* ``rho4`` -- count vs. severity, different years
* ``rho5`` -- two severities, different years

The five correlations are generated from four factor loadings
``theta1..theta4``: ``theta1``/``theta2`` tie counts/severities to a shared
random effect common to all years, ``theta3``/``theta4`` add within-year
residual coupling.  Under that generator the matrix is positive definite for
every claim-count vector whenever ``theta1^2 + theta3^2 < 1`` and
``theta2^2 + theta4^2 < 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ThetaParams",
    "RhoParams",
    "StructuredCorrMatrix",
    "rho_from_theta",
    "rho_jacobian",
    "check_admissible",
    "build_sigma",
    "build_augmented_sigma",
    "schur_complement_factor",
    "is_positive_definite",
]


@dataclass(frozen=True)
class ThetaParams:
    """Factor loadings (theta1, theta2) and within-year residual loadings
    (theta3, theta4); all dimensionless correlations in (-1, 1)."""

    theta1: float
    theta2: float
    theta3: float
    theta4: float

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2, self.theta3, self.theta4])

    @classmethod
    def from_sequence(cls, values) -> "ThetaParams":
        t1, t2, t3, t4 = (float(v) for v in values)
        return cls(t1, t2, t3, t4)


@dataclass(frozen=True)
class RhoParams:
    """The five latent-scale correlations; may be constructed directly
    (bypassing the theta generator) for counterexample testing."""

    rho1: float
    rho2: float
    rho3: float
    rho4: float
    rho5: float

    def as_array(self) -> np.ndarray:
        return np.array([self.rho1, self.rho2, self.rho3, self.rho4, self.rho5])

    @classmethod
    def from_sequence(cls, values) -> "RhoParams":
        r1, r2, r3, r4, r5 = (float(v) for v in values)
        return cls(r1, r2, r3, r4, r5)


def rho_from_theta(theta: ThetaParams) -> RhoParams:
    """Map the four loadings to the five correlations.

    rho1 = theta1*theta2 + theta3*theta4, rho2 = theta2^2 + theta4^2,
    rho3 = theta1^2, rho4 = theta1*theta2, rho5 = theta2^2.

    Defined for any values; admissibility is a separate check.
    """
    t1, t2, t3, t4 = theta.theta1, theta.theta2, theta.theta3, theta.theta4
    return RhoParams(
        rho1=t1 * t2 + t3 * t4,
        rho2=t2 * t2 + t4 * t4,
        rho3=t1 * t1,
        rho4=t1 * t2,
        rho5=t2 * t2,
    )


def rho_jacobian(theta: ThetaParams) -> np.ndarray:
    """5x4 Jacobian of ``rho_from_theta`` wrt (theta1..theta4).

    Used for delta-method standard errors of the rho estimates.
    """
    t1, t2, t3, t4 = theta.theta1, theta.theta2, theta.theta3, theta.theta4
    return np.array(
        [
            [t2, t1, t4, t3],
            [0.0, 2.0 * t2, 0.0, 2.0 * t4],
            [2.0 * t1, 0.0, 0.0, 0.0],
            [t2, t1, 0.0, 0.0],
            [0.0, 2.0 * t2, 0.0, 0.0],
        ]
    )


def check_admissible(theta: ThetaParams) -> bool:
    """True iff theta1^2 + theta3^2 < 1 and theta2^2 + theta4^2 < 1 (strict)."""
    return (
        theta.theta1**2 + theta.theta3**2 < 1.0
        and theta.theta2**2 + theta.theta4**2 < 1.0
    )


@dataclass
class StructuredCorrMatrix:
    """Dense symmetric correlation matrix with per-year block bookkeeping.

    ``block_sizes[t] == n_t + 1`` (one count coordinate plus ``n_t`` severity
    coordinates).  When ``has_factor_row`` is set, row/column 0 is the shared
    random effect and the year blocks start at index 1.
    """

    matrix: np.ndarray
    block_sizes: tuple[int, ...]
    has_factor_row: bool = False

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def _validate_counts(n) -> np.ndarray:
    counts = np.asarray(n, dtype=int)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError("claim-count vector must be non-empty and 1-d")
    if np.any(counts < 0):
        raise ValueError("claim counts must be non-negative")
    return counts


def build_sigma(n, rho: RhoParams) -> StructuredCorrMatrix:
    """Latent correlation matrix for counts ``n`` over the coordinates
    (count_1, sev_{1,1..n_1}, ..., count_tau, sev_{tau,1..n_tau}).

    Within-year blocks carry (rho1, rho2); cross-year blocks carry
    (rho3, rho4, rho5).
    """
    counts = _validate_counts(n)
    sizes = counts + 1
    dim = int(sizes.sum())
    offsets = np.concatenate(([0], np.cumsum(sizes)))

    out = np.empty((dim, dim))
    # Start from the cross-year fill, then overwrite the diagonal blocks.
    is_count = np.zeros(dim, dtype=bool)
    is_count[offsets[:-1]] = True
    cc = np.outer(is_count, is_count)
    ss = np.outer(~is_count, ~is_count)
    out[:] = rho.rho4
    out[cc] = rho.rho3
    out[ss] = rho.rho5

    for t, nt in enumerate(counts):
        lo, hi = offsets[t], offsets[t + 1]
        block = np.full((nt + 1, nt + 1), rho.rho2)
        block[0, :] = rho.rho1
        block[:, 0] = rho.rho1
        np.fill_diagonal(block, 1.0)
        out[lo:hi, lo:hi] = block

    return StructuredCorrMatrix(out, tuple(int(s) for s in sizes))


def build_augmented_sigma(
    n, rho: RhoParams, theta1: float, theta2: float
) -> StructuredCorrMatrix:
    """As :func:`build_sigma` but with the shared random effect prepended:
    unit self-correlation, ``theta1`` with every count, ``theta2`` with every
    severity."""
    base = build_sigma(n, rho)
    dim = base.dim + 1
    out = np.empty((dim, dim))
    out[1:, 1:] = base.matrix
    loadings = np.full(base.dim, theta2)
    offsets = np.concatenate(([0], np.cumsum(base.block_sizes)))[:-1]
    loadings[offsets] = theta1
    out[0, 0] = 1.0
    out[0, 1:] = loadings
    out[1:, 0] = loadings
    return StructuredCorrMatrix(out, base.block_sizes, has_factor_row=True)


def schur_complement_factor(m: StructuredCorrMatrix) -> StructuredCorrMatrix:
    """Residual correlation of the year coordinates after conditioning on the
    shared random effect: Sigma - omega^T omega, where omega is the factor
    row.  Block diagonal across years exactly when rho3 = theta1^2,
    rho4 = theta1*theta2, rho5 = theta2^2."""
    if not m.has_factor_row:
        raise ValueError("expected a matrix with the factor row present")
    omega = m.matrix[0, 1:]
    reduced = m.matrix[1:, 1:] - np.outer(omega, omega)
    return StructuredCorrMatrix(reduced, m.block_sizes)


def is_positive_definite(m, rel_tol: float = 1e-10) -> bool:
    """Positive definiteness via a symmetric triangular factorization.

    Succeeds iff all pivots stay above ``rel_tol`` times the largest diagonal
    entry of the input.  Accepts a plain array or a StructuredCorrMatrix.
    """
    a = np.array(m.matrix if isinstance(m, StructuredCorrMatrix) else m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    dim = a.shape[0]
    floor = rel_tol * float(np.max(np.diag(a)))
    lower = np.zeros_like(a)
    for k in range(dim):
        pivot = a[k, k] - lower[k, :k] @ lower[k, :k]
        if not pivot > floor:
            return False
        lower[k, k] = math.sqrt(pivot)
        if k + 1 < dim:
            lower[k + 1 :, k] = (a[k + 1 :, k] - lower[k + 1 :, :k] @ lower[k, :k]) / lower[
                k, k
            ]
    return True
