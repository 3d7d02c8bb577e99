"""Independent checks of the coordinator's output.

* ``check_equilibrium`` certifies a strategy profile and control vector
  directly from the definition of an aggregative equilibrium.
* ``dual_decomposition_oracle`` recomputes the equilibrium for a frozen
  average by a primal-dual iteration that shares no code with the
  forward-backward loop beyond the agents' optimal responses.
* ``measure_eps_N`` measures how far equilibrium strategies sit from exact
  Nash best responses, where each agent accounts for its own contribution to
  the average.
* ``rate_bound_check`` and the operator probes audit the convergence
  certificates numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import coordinator as co
from .agents import Agent, Quadratic, optimal_response, project
from .errors import InvalidInputError, OracleStall
from .operator_core import PROBE_TOL, MetricP, build_metric, cocoercivity_constant, resolvent_m

DEFAULT_CERT_TOL = 1e-5
_EPS = np.finfo(float).eps


# --------------------------------------------------------------------------
# equilibrium certificate


@dataclass
class EquilibriumCertificate:
    """Best-response residuals and coupling feasibility of a profile.

    Attributes
    ----------
    residuals : ndarray
        ``||x_i - x_i*(C sigma + K lam)||`` per agent, with sigma the average
        of the profile.
    feasibility : float
        Euclidean distance from the average to the coupling set.
    tol : float
    """

    residuals: np.ndarray
    feasibility: float
    tol: float
    sigma: np.ndarray = field(repr=False, default=None)

    @property
    def max_residual(self):
        return float(np.max(self.residuals)) if self.residuals.size else 0.0

    @property
    def passed(self):
        return self.max_residual <= self.tol and self.feasibility <= self.tol

    def as_dict(self):
        return {
            "passed": self.passed,
            "tol": self.tol,
            "max_residual": self.max_residual,
            "feasibility": self.feasibility,
        }


def check_equilibrium(pop, x_bar, lambda_bar, tol=DEFAULT_CERT_TOL):
    """Certify (x_bar, lambda_bar) as an aggregative equilibrium of `pop`.

    Every x_bar[i] must be the optimal response to C sigma + K lambda_bar with
    sigma = mean(x_bar), and sigma must lie in the coupling set.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    lam = np.asarray(lambda_bar, dtype=float)
    if x_bar.shape != (pop.N, pop.n) or lam.shape != (pop.n,):
        raise InvalidInputError(
            f"expected strategies of shape {(pop.N, pop.n)} and lambda of shape {(pop.n,)}"
        )
    sigma = x_bar.mean(axis=0)
    br = pop.responses(co.signal(pop, sigma, lam))
    residuals = np.linalg.norm(x_bar - br, axis=1)
    feas = float(np.linalg.norm(sigma - pop.project_coupling(sigma)))
    return EquilibriumCertificate(residuals, feas, float(tol), sigma)


def certificate_tolerance(pop, residual):
    """A-priori certificate error implied by a coordinator residual.

    With strategies taken as responses to (sigma, lam), the first block of
    Theta bounds |sigma - mean(x)|, so each best-response residual is at most
    ||C|| / ell times ||Theta||, and the average lies within sqrt(2) ||Theta||
    of the coupling set.
    """
    c_norm = float(np.max(np.abs(np.linalg.eigvalsh(pop.C))))
    return max(c_norm / pop.ell, math.sqrt(2.0)) * float(residual)


# --------------------------------------------------------------------------
# dual decomposition oracle


@dataclass
class OracleResult:
    x0: np.ndarray
    strategies: np.ndarray
    lam: np.ndarray
    gap: float
    iterations: int
    step_rule: str


def _dual_lipschitz(pop):
    k_norm = float(np.max(np.abs(np.linalg.eigvalsh(pop.K))))
    return k_norm**2 * (1.0 / pop.ell + 1.0)


def dual_decomposition_oracle(
    pop, sigma_fixed, step_rule="constant", tol=1e-10, max_iter=200_000, lam0=None, eps0=None
):
    """Primal-dual iteration for the equilibrium at a frozen average.

    With sigma frozen the coordinator solves
        min_{y0 in S} N (0.5 |y0|^2 + (K sigma)^T y0) - N lam^T K y0,
    i.e. y0 = proj_S(K (lam - sigma)), each agent answers x_i*(C sigma + K lam),
    and the multiplier moves along the normalized constraint violation
        lam <- lam + eps_t K (mean_i x_i - y0).

    Parameters
    ----------
    step_rule : {"constant", "diminishing", "accelerated"}
        ``"constant"`` uses 1 / L with L = ||K||^2 (1 / ell + 1), the
        Lipschitz constant of the dual gradient; ``"diminishing"`` uses
        eps0 / (1 + t) with eps0 = 0.1 / ||K|| by default; ``"accelerated"``
        adds Nesterov momentum to the constant rule.
    tol : float
        Stop once |mean_i x_i - y0| <= tol and the last multiplier move is
        below tol as well.

    Raises
    ------
    OracleStall
        If the primal gap is still above tol after max_iter steps.
    """
    sigma = np.asarray(sigma_fixed, dtype=float)
    n = pop.n
    if sigma.shape != (n,):
        raise InvalidInputError(f"sigma must have shape {(n,)}")
    K = pop.K
    L = _dual_lipschitz(pop)
    if step_rule == "diminishing" and eps0 is None:
        eps0 = 0.1 / float(np.max(np.abs(np.linalg.eigvalsh(K))))
    if step_rule not in ("constant", "diminishing", "accelerated"):
        raise InvalidInputError(f"unknown step rule {step_rule!r}")
    lam = np.zeros(n) if lam0 is None else np.asarray(lam0, dtype=float).copy()
    lam_prev = lam.copy()
    base = pop.C @ sigma
    gap = np.inf
    for t in range(max_iter):
        if step_rule == "accelerated":
            probe = lam + (t / (t + 3.0)) * (lam - lam_prev)
        else:
            probe = lam
        x = pop.responses(base + K @ probe)
        x0 = project(pop.S, K @ (probe - sigma))
        viol = x.mean(axis=0) - x0
        gap = float(np.linalg.norm(viol))
        eps_t = eps0 / (1.0 + t) if step_rule == "diminishing" else 1.0 / L
        lam_prev = lam
        lam = probe + eps_t * (K @ viol)
        if gap <= tol and np.linalg.norm(lam - lam_prev) <= tol:
            break
    else:
        raise OracleStall(f"primal gap {gap:.3e} after {max_iter} iterations", gap=gap)
    x = pop.responses(base + K @ lam)
    x0 = project(pop.S, K @ (lam - sigma))
    return OracleResult(x0, x, lam, gap, t + 1, step_rule)


# --------------------------------------------------------------------------
# gap to exact Nash best responses


@dataclass
class EpsNReport:
    sizes: np.ndarray
    eps: np.ndarray
    cost_gap: np.ndarray
    slope: float
    intercept: float

    @property
    def scaled(self):
        """N * eps_N per size."""
        return self.sizes * self.eps

    def as_dict(self):
        return {
            "sizes": self.sizes.tolist(),
            "eps": self.eps.tolist(),
            "cost_gap": self.cost_gap.tolist(),
            "slope": self.slope,
            "scaled": self.scaled.tolist(),
        }


def nash_best_response(pop, i, x_bar, lam):
    """Exact best response of agent i when its own choice enters the average.

    With sigma = (y + s_-i) / N the cost f_i(y) + (C sigma + K lam)^T y gains
    the quadratic y^T C y / N, so the Hessian becomes Q + (C + C^T) / N and the
    linear term c + C s_-i / N + K lam.
    """
    agent = pop.agents[i]
    if not isinstance(agent.cost, Quadratic):
        raise InvalidInputError("Nash best responses need quadratic agent costs")
    N = pop.N
    x_bar = np.asarray(x_bar, dtype=float)
    s_minus = x_bar.sum(axis=0) - x_bar[i]
    Q = agent.cost.Q + (pop.C + pop.C.T) / N
    Q = 0.5 * (Q + Q.T)
    lin = agent.cost.c + pop.C @ s_minus / N + pop.K @ lam
    aug = Agent(agent.id, Quadratic(Q, lin), agent.feasible)
    return optimal_response(aug, np.zeros(pop.n))


def nash_cost(pop, i, y, x_bar, lam):
    """J_i(y, (y + s_-i) / N, lam)."""
    x_bar = np.asarray(x_bar, dtype=float)
    sigma = (y + x_bar.sum(axis=0) - x_bar[i]) / pop.N
    return pop.agents[i].cost_value(y) + float(co.signal(pop, sigma, lam) @ y)


def nash_gaps(pop, x_bar, lam):
    """(max distance to the best response, max cost improvement) over agents."""
    eps, gap = 0.0, 0.0
    for i in range(pop.N):
        br = nash_best_response(pop, i, x_bar, lam)
        eps = max(eps, float(np.linalg.norm(x_bar[i] - br)))
        gap = max(gap, nash_cost(pop, i, x_bar[i], x_bar, lam) - nash_cost(pop, i, br, x_bar, lam))
    return eps, max(gap, 0.0)


def measure_eps_N(family, sizes, seed=0, config=None):
    """Distance of equilibrium strategies from exact best responses versus N.

    Parameters
    ----------
    family : callable
        ``family(N, seed) -> GamePopulation`` with quadratic agent costs.
    sizes : sequence of int
        At least two strictly increasing population sizes.
    config : RunConfig, optional
        Coordinator settings; defaults to a tight tolerance of 1e-12.

    Returns
    -------
    EpsNReport
        The slope is a least-squares fit of log eps_N against log N over the
        sizes with eps_N > 0 (NaN if fewer than two).
    """
    sizes = np.asarray(sizes, dtype=int)
    if sizes.size < 2 or np.any(np.diff(sizes) <= 0) or sizes[0] < 1:
        raise InvalidInputError("sizes must hold at least two strictly increasing entries")
    config = config or co.RunConfig(tol=1e-12, max_iter=1_000_000)
    eps = np.empty(sizes.size)
    gap = np.empty(sizes.size)
    for k, N in enumerate(sizes):
        pop = family(int(N), seed)
        traj = co.run(pop, config)
        state = traj.final_state
        x_bar = co.equilibrium_strategies(pop, state)
        eps[k], gap[k] = nash_gaps(pop, x_bar, state.lam)
    pos = eps > 0
    if np.count_nonzero(pos) >= 2:
        slope, intercept = np.polyfit(np.log(sizes[pos]), np.log(eps[pos]), 1)
    else:
        slope, intercept = math.nan, math.nan
    return EpsNReport(sizes, eps, gap, float(slope), float(intercept))


# --------------------------------------------------------------------------
# convergence audits


def rate_bound_check(trajectory, P, alpha_bar, z_bar, rtol=PROBE_TOL):
    """Check ||z_{t+1} - z_t||_P^2 <= (3 / alpha_bar - 1) / (t + 1) ||z_0 - z_bar||_P^2.

    Only consecutive recorded iterates are compared, so the trajectory should
    be recorded at every step.

    Returns
    -------
    ok : bool
    worst_margin : float
        Smallest (bound - lhs) / bound over the checked steps (1 when the
        bound is zero and every step is zero as well).
    """
    if not 0.0 < alpha_bar <= 1.0:
        raise InvalidInputError("rate bound needs a constant step in (0, 1]")
    metric = P if isinstance(P, MetricP) else None
    Pm = metric.matrix if metric is not None else np.asarray(P, dtype=float)
    z = trajectory.z
    t = trajectory.t
    d0 = z[0] - np.asarray(z_bar, dtype=float)
    r0 = float(d0 @ Pm @ d0)
    ok, worst = True, 1.0
    scale = max(r0, float(z[0] @ Pm @ z[0]), 1.0)
    for k in range(len(t) - 1):
        if t[k + 1] != t[k] + 1:
            continue
        dz = z[k + 1] - z[k]
        lhs = float(dz @ Pm @ dz)
        bound = (3.0 / alpha_bar - 1.0) / (t[k] + 1.0) * r0
        if lhs > bound + rtol * scale:
            ok = False
        if bound > 0:
            worst = min(worst, (bound - lhs) / bound)
        elif lhs > 0:
            worst = min(worst, -math.inf)
    return ok, worst


def fejer_check(trajectory, P, z_bar, rtol=PROBE_TOL):
    """Whether ||z_t - z_bar||_P is nonincreasing along the trajectory."""
    Pm = P.matrix if isinstance(P, MetricP) else np.asarray(P, dtype=float)
    d = trajectory.z - np.asarray(z_bar, dtype=float)
    dist = np.einsum("ij,jk,ik->i", d, Pm, d)
    scale = max(float(dist[0]), 1e-300)
    return bool(np.all(np.diff(dist) <= rtol * scale))


def sample_states(pop, rng, count, lam_scale=1.0, margin=0.5):
    """Random [sigma; lam] points: sigma in an enlarged bounding box of S,
    lam uniform in [-lam_scale, lam_scale]^n."""
    lo, hi = pop.S.bounds()
    width = np.maximum(hi - lo, 1e-3)
    sig = rng.uniform(lo - margin * width, hi + margin * width, size=(count, pop.n))
    lam = rng.uniform(-lam_scale, lam_scale, size=(count, pop.n))
    return np.concatenate([sig, lam], axis=1)


@dataclass
class ProbeReport:
    """Worst relative violations of the cocoercivity and averagedness bounds."""

    pairs: int
    beta: float
    epsilon: float
    cocoercivity: float
    averagedness: float

    def passed(self, tol=1e-7):
        return self.cocoercivity <= tol and self.averagedness <= tol


def operator_probe(pop, pairs, epsilon=None, tight=False):
    """Evaluate both operator inequalities on the given point pairs.

    For each pair (z, w) with dG = Gamma(z) - Gamma(w):

    * cocoercivity  <dG, z - w>_P >= beta |dG|_P^2;
    * averagedness of T = (I + eps M)^{-1} (I - eps Gamma) with constant 2/3,
      |Tz - Tw|_P^2 <= |z - w|_P^2 - 0.5 |(Tz - z) - (Tw - w)|_P^2.

    A violation is the amount by which an inequality fails beyond the
    rounding level eps_mach |z - w|_P (|Gamma z|_P + |Gamma w|_P) (iterates
    instead of Gamma for averagedness), relative to |z - w|_P^2 for
    averagedness and to beta |dG|_P^2 + |<dG, z - w>_P| for cocoercivity.
    """
    metric = build_metric(pop.C, pop.K)
    beta = cocoercivity_constant(pop.ell, metric, tight=tight)
    eps = co.DEFAULT_EPS_FACTOR * beta if epsilon is None else float(epsilon)
    worst_c, worst_a = 0.0, 0.0
    count = 0
    for z, w in pairs:
        z = np.asarray(z, dtype=float)
        w = np.asarray(w, dtype=float)
        gz, gw = co.gamma(pop, z), co.gamma(pop, w)
        dz, dg = z - w, gz - gw
        inner = metric.inner(dg, dz)
        rhs = beta * metric.norm_sq(dg)
        # Gamma is only known to about eps_mach * |Gamma|, which bounds how
        # accurately <dG, dz> can be resolved
        floor = _EPS * metric.norm_of(dz) * (metric.norm_of(gz) + metric.norm_of(gw))
        denom = abs(inner) + abs(rhs)
        if denom > 0:
            worst_c = max(worst_c, (rhs - inner - floor) / denom)
        tz = resolvent_m(eps, z - eps * gz)
        tw = resolvent_m(eps, w - eps * gw)
        dz2 = metric.norm_sq(dz)
        lhs = metric.norm_sq(tz - tw)
        bound = dz2 - 0.5 * metric.norm_sq((tz - z) - (tw - w))
        floor = _EPS * metric.norm_of(dz) * sum(metric.norm_of(v) for v in (z, w, tz, tw))
        if dz2 > 0:
            worst_a = max(worst_a, (lhs - bound - floor) / dz2)
        count += 1
    return ProbeReport(count, beta, eps, max(worst_c, 0.0), max(worst_a, 0.0))
