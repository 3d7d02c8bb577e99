"""Fixed linear algebra of the forward-backward control law.

The iteration lives in R^{2n} with state z = [sigma; lam].  Convergence is
argued in the Hilbert space weighted by the block matrix

    P = [[C + 2K, -K],
         [-K,      K]]

where the linear part M = [[I, 0], [I, 0]] is monotone and the nonlinear part
Gamma is beta-cocoercive with beta = ell / (6 ||P||).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DesignViolation, InvalidInputError

#: Relative eigenvalue cutoff for "positive definite".
PD_TOL = 1e-10
#: Relative slack for numerical operator-inequality probes.
PROBE_TOL = 1e-9
#: Steps over which a step-size schedule is checked pointwise.
SCHEDULE_PROBE_HORIZON = 10_000

TIGHT_CONSTANT = 3.0 + 2.0 * math.sqrt(2.0)


def as_sym_matrix(m, name="matrix"):
    """Return `m` as a finite, symmetric 2-d float array.

    Scalars and 1-element sequences are promoted to 1x1 matrices.
    """
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidInputError(f"{name} must be a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    if not np.array_equal(a, a.T):
        raise InvalidInputError(f"{name} is not symmetric")
    return a


def min_max_eig(m):
    w = np.linalg.eigvalsh(m)
    return float(w[0]), float(w[-1])


def is_positive_definite(m, tol=PD_TOL):
    """True iff every eigenvalue of the symmetric matrix exceeds
    ``tol * max|eigenvalue|``."""
    a = as_sym_matrix(m)
    w = np.linalg.eigvalsh(a)
    scale = max(float(np.max(np.abs(w))), np.finfo(float).tiny)
    return bool(w[0] > tol * scale)


def is_positive_semidefinite(m, tol=PD_TOL):
    a = np.asarray(m, dtype=float)
    a = 0.5 * (a + a.T)
    w = np.linalg.eigvalsh(a)
    scale = max(float(np.max(np.abs(w))), 1.0)
    return bool(w[0] >= -tol * scale)


@dataclass(frozen=True)
class MetricP:
    """The metric matrix P together with its extreme eigenvalues."""

    matrix: np.ndarray
    norm: float
    min_eig: float

    @property
    def n(self):
        return self.matrix.shape[0] // 2

    def inner(self, x, y):
        return float(np.asarray(x) @ self.matrix @ np.asarray(y))

    def norm_sq(self, x):
        return self.inner(x, x)

    def norm_of(self, x):
        return math.sqrt(max(self.norm_sq(x), 0.0))


def assemble_p(C, K):
    C = as_sym_matrix(C, "C")
    K = as_sym_matrix(K, "K")
    if C.shape != K.shape:
        raise InvalidInputError(f"C and K dimensions differ: {C.shape} vs {K.shape}")
    return np.block([[C + 2.0 * K, -K], [-K, K]])


def build_metric(C, K):
    """Assemble P = [[C+2K, -K], [-K, K]] and check it is positive definite.

    Raises
    ------
    DesignViolation
        If K is not PD, C + K is not PD, or P itself fails the PD test.
    """
    C = as_sym_matrix(C, "C")
    K = as_sym_matrix(K, "K")
    if C.shape != K.shape:
        raise InvalidInputError(f"C and K dimensions differ: {C.shape} vs {K.shape}")
    if not is_positive_definite(K):
        raise DesignViolation("K is not positive definite")
    if not is_positive_definite(C + K):
        raise DesignViolation("C + K is not positive definite")
    P = assemble_p(C, K)
    lo, hi = min_max_eig(P)
    if not is_positive_definite(P):
        raise DesignViolation(f"P is not positive definite (min eigenvalue {lo:.3e})")
    return MetricP(matrix=P, norm=hi, min_eig=lo)


def cocoercivity_constant(ell, P, tight=False):
    """beta = ell / (6 ||P||); with ``tight=True`` the constant 3 + 2*sqrt(2)
    from the underlying bound ||A||^2 replaces 6."""
    if not ell > 0:
        raise InvalidInputError(f"ell must be positive, got {ell}")
    norm = P.norm if isinstance(P, MetricP) else float(P)
    const = TIGHT_CONSTANT if tight else 6.0
    return ell / (const * norm)


def m_matrix(n):
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[eye, zero], [eye, zero]])


def resolvent_m(epsilon, z):
    """Closed-form (I + eps M)^{-1} z for M = [[I, 0], [I, 0]].

    sigma' = sigma / (1 + eps),  lam' = lam - eps * sigma'.
    """
    z = np.asarray(z, dtype=float)
    n = z.shape[-1] // 2
    sigma = z[..., :n] / (1.0 + epsilon)
    lam = z[..., n:] - epsilon * sigma
    return np.concatenate([sigma, lam], axis=-1)


@dataclass(frozen=True)
class DesignReport:
    K_pd: bool
    CplusK_pd: bool
    ell: float
    beta: float
    epsilon: float
    alpha_schedule_valid: bool
    p_norm: float
    tight: bool = False

    @property
    def epsilon_valid(self):
        return 0.0 < self.epsilon < self.beta

    @property
    def passed(self):
        return self.K_pd and self.CplusK_pd and self.epsilon_valid and self.alpha_schedule_valid

    def failures(self):
        out = []
        if not self.K_pd:
            out.append("K not positive definite")
        if not self.CplusK_pd:
            out.append("C + K not positive definite")
        if not self.epsilon_valid:
            out.append(f"epsilon={self.epsilon:.6g} outside (0, beta={self.beta:.6g})")
        if not self.alpha_schedule_valid:
            out.append("step-size schedule leaves (0, 3/2) or has a summable weight")
        return out

    def as_dict(self):
        return {
            "passed": self.passed,
            "K_pd": self.K_pd,
            "CplusK_pd": self.CplusK_pd,
            "ell": self.ell,
            "beta": self.beta,
            "epsilon": self.epsilon,
            "alpha_schedule_valid": self.alpha_schedule_valid,
            "p_norm": self.p_norm,
            "tight": self.tight,
            "failures": self.failures(),
        }


def schedule_is_valid(schedule, horizon=SCHEDULE_PROBE_HORIZON):
    """Every probed alpha_t in (0, 3/2) and the schedule declares
    sum alpha_t (3/2 - alpha_t) = infinity."""
    if not getattr(schedule, "divergent_sum", False):
        return False
    alphas = np.array([schedule.alpha(t) for t in range(horizon)], dtype=float)
    return bool(np.all(np.isfinite(alphas)) and np.all(alphas > 0.0) and np.all(alphas < 1.5))


def validate_design(C, K, ell, epsilon, schedule, tight=False):
    """Evaluate every design condition independently; never raises on failure."""
    C = as_sym_matrix(C, "C")
    K = as_sym_matrix(K, "K")
    k_pd = is_positive_definite(K)
    ck_pd = is_positive_definite(C + K)
    p_norm = float(np.max(np.abs(np.linalg.eigvalsh(assemble_p(C, K)))))
    beta = cocoercivity_constant(ell, p_norm, tight=tight) if ell > 0 else 0.0
    return DesignReport(
        K_pd=k_pd,
        CplusK_pd=ck_pd,
        ell=float(ell),
        beta=beta,
        epsilon=float(epsilon),
        alpha_schedule_valid=schedule_is_valid(schedule),
        p_norm=p_norm,
        tight=tight,
    )
