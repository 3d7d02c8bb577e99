"""Central coordinator: aggregation, coordinator response and the
forward-backward control law

    z+ = (1 - alpha_t) z + alpha_t (I + eps M)^{-1} (z - eps Gamma(z)),

with z = [sigma; lam], M = [[I, 0], [I, 0]] and

    Gamma(z) = -[A; 2A - x0],   A = mean_i x_i*(C sigma + K lam),
    x0 = proj_S(-K (sigma - lam)).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DesignViolation, InvalidInputError
from .operator_core import build_metric, resolvent_m, validate_design

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-4
DEFAULT_EPS_FACTOR = 0.9
DIVERGENCE_FACTOR = 1e8


@dataclass(frozen=True)
class Constant:
    """alpha_t = alpha_bar for all t (Krasnoselskij iteration)."""

    alpha_bar: float = 1.0
    divergent_sum = True

    def __post_init__(self):
        if not 0.0 < self.alpha_bar <= 1.0:
            raise InvalidInputError(f"constant step must lie in (0, 1], got {self.alpha_bar}")

    def alpha(self, t):
        return self.alpha_bar

    def to_dict(self):
        return {"kind": "constant", "alpha_bar": self.alpha_bar}


@dataclass(frozen=True)
class Mann:
    """alpha_t = 1 / (t + 1)."""

    divergent_sum = True

    def alpha(self, t):
        return 1.0 / (t + 1.0)

    def to_dict(self):
        return {"kind": "mann"}


def schedule_from_dict(d):
    if d is None:
        return Constant()
    kind = d.get("kind", "constant")
    if kind == "constant":
        return Constant(float(d.get("alpha_bar", 1.0)))
    if kind == "mann":
        return Mann()
    raise InvalidInputError(f"unknown schedule {kind!r}")


@dataclass
class CoordinatorState:
    sigma: np.ndarray
    lam: np.ndarray
    t: int = 0

    @property
    def z(self):
        return np.concatenate([self.sigma, self.lam])

    @classmethod
    def from_z(cls, z, t=0):
        z = np.asarray(z, dtype=float)
        n = z.size // 2
        return cls(z[:n].copy(), z[n:].copy(), t)


@dataclass
class RunConfig:
    epsilon: float = None  # None -> DEFAULT_EPS_FACTOR * beta
    schedule: object = field(default_factory=Constant)
    tol: float = DEFAULT_TOL
    max_iter: int = 100_000
    tight: bool = False
    record_every: int = 1


@dataclass
class Trajectory:
    t: np.ndarray
    sigma: np.ndarray
    lam: np.ndarray
    residual: np.ndarray
    aggregate: np.ndarray
    alpha: np.ndarray
    status: str
    epsilon: float
    wall_time: float

    @property
    def z(self):
        return np.concatenate([self.sigma, self.lam], axis=1)

    @property
    def final_state(self):
        return CoordinatorState(self.sigma[-1].copy(), self.lam[-1].copy(), int(self.t[-1]))

    @property
    def converged(self):
        return self.status == "converged"

    def iterations_to(self, threshold):
        """First recorded t with residual <= threshold, or None."""
        hits = np.nonzero(self.residual <= threshold)[0]
        return int(self.t[hits[0]]) if hits.size else None


def signal(pop, sigma, lam):
    return pop.C @ sigma + pop.K @ lam


def aggregate(pop, sigma, lam):
    """Average optimal response to the broadcast u = C sigma + K lam."""
    return pop.mean_response(signal(pop, sigma, lam))


def coordinator_response(sigma, lam, K, S):
    """argmin_{y in S} 0.5 y^T y + (K (sigma - lam))^T y = proj_S(-K (sigma - lam))."""
    from .agents import project

    return project(S, -np.asarray(K) @ (np.asarray(sigma) - np.asarray(lam)))


def _split(z):
    z = np.asarray(z, dtype=float)
    n = z.size // 2
    return z[:n], z[n:]


def gamma_with_aggregate(pop, z):
    sigma, lam = _split(z)
    A = aggregate(pop, sigma, lam)
    x0 = coordinator_response(sigma, lam, pop.K, pop.S)
    return -np.concatenate([A, 2.0 * A - x0]), A


def gamma(pop, z):
    return gamma_with_aggregate(pop, z)[0]


def m_apply(z):
    sigma, _ = _split(z)
    return np.concatenate([sigma, sigma])


def theta(pop, z):
    """Theta(z) = M z + Gamma(z); zero exactly at the controlled equilibrium."""
    return m_apply(z) + gamma(pop, z)


def fb_map(pop, z, epsilon, g=None):
    """T(z) = (I + eps M)^{-1} (z - eps Gamma(z))."""
    if g is None:
        g = gamma(pop, z)
    return resolvent_m(epsilon, np.asarray(z, dtype=float) - epsilon * g)


def step(pop, state, epsilon, alpha_t):
    """One application of the control law; returns the next CoordinatorState."""
    if not 0.0 < alpha_t < 1.5:
        raise InvalidInputError(f"alpha_t={alpha_t} outside (0, 3/2)")
    z = state.z
    znew = (1.0 - alpha_t) * z + alpha_t * fb_map(pop, z, epsilon)
    return CoordinatorState.from_z(znew, state.t + 1)


def design_for(pop, config):
    """Validate the design and return (report, epsilon, metric)."""
    metric = None
    try:
        metric = build_metric(pop.C, pop.K)
    except DesignViolation:
        pass
    ell = pop.ell
    probe = validate_design(pop.C, pop.K, ell, 1.0, config.schedule, tight=config.tight)
    eps = config.epsilon if config.epsilon is not None else DEFAULT_EPS_FACTOR * probe.beta
    report = validate_design(pop.C, pop.K, ell, eps, config.schedule, tight=config.tight)
    return report, eps, metric


def run(pop, config=None, init=None):
    """Iterate the control law until ||Theta|| <= tol or max_iter.

    Parameters
    ----------
    pop : GamePopulation
    config : RunConfig, optional
    init : CoordinatorState or array_like, optional
        Initial [sigma; lam]; defaults to sigma = proj_S(0), lam = 0.  sigma
        must lie in the coupling set.

    Returns
    -------
    Trajectory
        Status is "converged", "max-iterations" or "diverged".

    Raises
    ------
    DesignViolation
        If K, C + K, epsilon or the schedule fail the design conditions.
    """
    config = config or RunConfig()
    report, eps, _ = design_for(pop, config)
    if not report.passed:
        raise DesignViolation("; ".join(report.failures()))
    n = pop.n
    if init is None:
        z = np.concatenate([pop.project_coupling(np.zeros(n)), np.zeros(n)])
    elif isinstance(init, CoordinatorState):
        z = init.z
    else:
        z = np.asarray(init, dtype=float).copy()
    if z.shape != (2 * n,) or not np.all(np.isfinite(z)):
        raise InvalidInputError("initial state must be a finite vector of length 2n")
    if not pop.S.contains(z[:n], tol=1e-9):
        raise InvalidInputError("initial sigma must lie in the coupling set")

    bound = DIVERGENCE_FACTOR * (1.0 + np.linalg.norm(z))
    ts, zs, res, aggs, alphas = [], [], [], [], []
    status = "max-iterations"
    start = time.perf_counter()
    for t in range(config.max_iter + 1):
        g, A = gamma_with_aggregate(pop, z)
        r = float(np.linalg.norm(m_apply(z) + g))
        a_t = config.schedule.alpha(t)
        if t % config.record_every == 0 or r <= config.tol or t == config.max_iter:
            ts.append(t)
            zs.append(z)
            res.append(r)
            aggs.append(A)
            alphas.append(a_t)
        if not np.isfinite(r) or np.linalg.norm(z) > bound:
            status = "diverged"
            break
        if r <= config.tol:
            status = "converged"
            break
        if t == config.max_iter:
            break
        z = (1.0 - a_t) * z + a_t * fb_map(pop, z, eps, g)
    wall = time.perf_counter() - start
    zs = np.array(zs)
    log.debug("run finished: %s after %d iterations (%.2fs)", status, ts[-1], wall)
    return Trajectory(
        t=np.array(ts),
        sigma=zs[:, :n],
        lam=zs[:, n:],
        residual=np.array(res),
        aggregate=np.array(aggs),
        alpha=np.array(alphas),
        status=status,
        epsilon=eps,
        wall_time=wall,
    )


def equilibrium_strategies(pop, state):
    """Agent strategies x_i*(C sigma + K lam) at a coordinator state."""
    return pop.responses(signal(pop, state.sigma, state.lam))
