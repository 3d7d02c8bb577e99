"""Seeded builders for the case-study populations and the two-agent toy game.

Every per-agent draw comes from its own stream, ``SeedSequence(seed,
spawn_key=(tag, i))``, so agent i's parameters do not depend on build order or
on N.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .agents import Agent, Box, BoxWithBudget, LogDisutility, Quadratic, Ray
from .errors import DesignViolation, InfeasibleSetError, InvalidInputError
from .population import GamePopulation

# stream tags
_AGENT = 0
_INIT = 1

# Night valley in the middle of the horizon, daytime peaks at both ends.
# Illustrative only, not read off any published curve.
DEFAULT_DEMAND_PROFILE = (
    0.92, 0.86, 0.74, 0.58, 0.44, 0.34, 0.28,
    0.27, 0.31, 0.40, 0.55, 0.72, 0.85, 0.91,
)


def agent_rng(seed, i, tag=_AGENT):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(tag, int(i))))


@dataclass
class Scenario:
    """Reproducible description of one experiment."""

    name: str
    seed: int
    N: int
    n: int
    params: dict
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def build(self):
        """Rebuild (population, scenario) from this description."""
        return build(self.name, self.N, self.seed, self.params)


@dataclass
class CongestionParams:
    n: int = 5
    beta_e: float = 20.0
    caps: tuple = (2.0, 4.0, 4.0, 4.0, 2.0)
    xi_max: float = 10.0
    w: float = 20.0
    K_gain: float = 1.0


@dataclass
class PevParams:
    n: int = 14
    q_center: float = 0.004
    q_halfwidth: float = 0.002
    c_center: float = 0.075
    c_halfwidth: float = 0.02
    gamma_center: float = 0.8
    gamma_halfwidth: float = 0.2
    xbar: float = 0.25
    a: float = 0.038
    b: float = 0.06
    d_profile: tuple = DEFAULT_DEMAND_PROFILE
    caps: tuple = None
    v2g_frac: float = 0.2
    zero_slot_prob: float = 0.2
    K_gain: float = 0.05
    max_resample: int = 100


def pev_default_caps(n=14, low=0.04, high=0.1, low_slots=(1, 2, 12, 13, 14)):
    return tuple(low if j + 1 in low_slots else high for j in range(n))


def _params(cls, params):
    params = dict(params or {})
    known = set(cls.__dataclass_fields__)
    unknown = set(params) - known
    if unknown:
        raise InvalidInputError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**params)


def build_congestion(N, seed, params=None):
    """Users routing flow a_i * xi_i over n parallel edges with capacities.

    Cost of user i: -w ln(1 + xi) + (diag(1/beta^2) sigma + 1/beta + K lam)^T x.
    """
    p = _params(CongestionParams, params)
    if N < 1:
        raise InvalidInputError("N must be >= 1")
    caps = np.asarray(p.caps, dtype=float)
    if caps.shape != (p.n,):
        raise InvalidInputError(f"caps must have length {p.n}, got {caps.size}")
    beta = np.full(p.n, float(p.beta_e))
    offset = 1.0 / beta
    agents = []
    for i in range(N):
        rng = agent_rng(seed, i)
        # uniform on the simplex: normalized exponentials
        e = rng.exponential(size=p.n)
        a = e / e.sum()
        agents.append(Agent(i, LogDisutility(p.w, offset), Ray(a, 0.0, p.xi_max)))
    pop = GamePopulation(
        agents=agents,
        C=np.diag(1.0 / beta**2),
        K=p.K_gain * np.eye(p.n),
        S=Box(np.zeros(p.n), caps),
        constant_offset=offset,
    )
    scen = Scenario("congestion", int(seed), N, p.n, _jsonable(asdict(p)), {"alpha_bar": 1.0})
    return pop, scen


def _pev_agent(i, seed, p, rng=None):
    rng = rng or agent_rng(seed, i)
    for _ in range(p.max_resample):
        q = p.q_center + rng.uniform(-p.q_halfwidth, p.q_halfwidth)
        c = p.c_center + rng.uniform(-p.c_halfwidth, p.c_halfwidth)
        gam = p.gamma_center + rng.uniform(-p.gamma_halfwidth, p.gamma_halfwidth)
        upper = np.where(rng.uniform(size=p.n) < p.zero_slot_prob, 0.0, p.xbar)
        v2g = rng.uniform() < p.v2g_frac
        lower = -0.5 * upper if v2g else np.zeros(p.n)
        if lower.sum() <= gam <= upper.sum():
            return q, c, gam, lower, upper
    raise InfeasibleSetError(f"agent {i}: no feasible budget after {p.max_resample} draws")


def build_pev(N, seed, params=None):
    """Plug-in vehicles charging over n slots under line capacity limits.

    Cost of vehicle i: q_i x^T x + c_i 1^T x + (a (sigma + d) + b 1 + K lam)^T x,
    stored as 0.5 x^T (2 q_i I) x plus a folded linear term, with C = a I.
    """
    p = _params(PevParams, params)
    if N < 1:
        raise InvalidInputError("N must be >= 1")
    d = np.asarray(p.d_profile, dtype=float)
    if d.shape != (p.n,):
        raise InvalidInputError(f"d_profile must have length {p.n}")
    caps = np.asarray(p.caps if p.caps is not None else pev_default_caps(p.n), dtype=float)
    if caps.shape != (p.n,):
        raise InvalidInputError(f"caps must have length {p.n}")
    shared = p.a * d + p.b
    agents = []
    for i in range(N):
        q, c, gam, lower, upper = _pev_agent(i, seed, p)
        cost = Quadratic(2.0 * q * np.eye(p.n), c + shared)
        agents.append(Agent(i, cost, BoxWithBudget(lower, upper, gam)))
    pop = GamePopulation(
        agents=agents,
        C=p.a * np.eye(p.n),
        K=p.K_gain * np.eye(p.n),
        S=Box(np.zeros(p.n), caps),
        constant_offset=shared,
    )
    params = asdict(p)
    params["caps"] = caps.tolist()
    scen = Scenario("pev", int(seed), N, p.n, _jsonable(params), {"alpha_bar": 1.0})
    return pop, scen


def build_two_agent(K_scalar=2.0):
    """Two-agent toy game: n = 1, f = 0.5 y^2, C = -1, X_1 = X_2 = S = [-1, 1].

    With a negative aggregate weight the game has several aggregative
    equilibria (for instance both agents at 1 with lam = 0), yet the
    controlled operator has the single zero [sigma; lam] = [0; 0].
    """
    K_scalar = float(K_scalar)
    if not K_scalar > 1.0:
        raise DesignViolation(f"K={K_scalar} gives C + K = {K_scalar - 1.0}, not positive")
    box = Box([-1.0], [1.0])
    agents = [Agent(i, Quadratic([[1.0]], [0.0]), box) for i in range(2)]
    pop = GamePopulation(agents=agents, C=[[-1.0]], K=[[K_scalar]], S=box)
    scen = Scenario("two_agent", 0, 2, 1, {"K_scalar": K_scalar}, {"alpha_bar": 1.0})
    return pop, scen


@dataclass
class SymmetricQuadraticParams:
    n: int = 2
    q: float = 1.0
    c: tuple = (0.4, -0.3)
    C_weight: float = 0.5
    bound: float = 2.0
    K_gain: float = 1.0


def build_symmetric_quadratic(N, seed=0, params=None):
    """Identical agents 0.5 q |y|^2 + c^T y on a box, C = C_weight * I.

    With the default data the equilibrium is interior and the coupling set is
    inactive; used for the population-size gap probe.
    """
    p = _params(SymmetricQuadraticParams, params)
    c = np.asarray(p.c, dtype=float)
    if c.shape != (p.n,):
        raise InvalidInputError(f"c must have length {p.n}")
    box = Box(-p.bound * np.ones(p.n), p.bound * np.ones(p.n))
    agents = [Agent(i, Quadratic(p.q * np.eye(p.n), c), box) for i in range(N)]
    pop = GamePopulation(
        agents=agents,
        C=p.C_weight * np.eye(p.n),
        K=p.K_gain * np.eye(p.n),
        S=box,
    )
    scen = Scenario("symmetric", int(seed), N, p.n, _jsonable(asdict(p)), {"alpha_bar": 1.0})
    return pop, scen


@dataclass
class RandomSmallParams:
    n: int = 2
    q_eig: tuple = (0.5, 2.0)
    c_scale: float = 1.0
    box_halfwidth: tuple = (1.0, 2.0)
    C_eig: tuple = (-0.3, 0.6)
    K_eig: tuple = (0.5, 1.5)
    S_halfwidth: tuple = (0.05, 0.5)


def _random_spd(rng, n, lo, hi):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    m = q @ np.diag(rng.uniform(lo, hi, size=n)) @ q.T
    return 0.5 * (m + m.T)


def build_random_small(N, seed, params=None):
    """Random dense quadratic game for cross-checks.

    Agents 0.5 y^T Q_i y + c_i^T y with dense SPD Q_i on boxes; C symmetric
    and possibly indefinite, K dense SPD with C + K positive definite, S a box
    that is often narrower than the agents' range so the coupling binds.
    """
    p = _params(RandomSmallParams, params)
    if N < 1 or p.n < 1:
        raise InvalidInputError("N and n must be >= 1")
    shared = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(2,)))
    n = p.n
    C = _random_spd(shared, n, *p.C_eig)  # eigenvalues may be negative
    K = _random_spd(shared, n, *p.K_eig)
    C = 0.5 * (C + C.T)
    if np.linalg.eigvalsh(C + K)[0] <= 0:
        raise DesignViolation("sampled C + K is not positive definite")
    s_half = shared.uniform(*p.S_halfwidth, size=n)
    agents = []
    for i in range(N):
        rng = agent_rng(seed, i)
        Q = _random_spd(rng, n, *p.q_eig)
        c = p.c_scale * rng.normal(size=n)
        half = rng.uniform(*p.box_halfwidth, size=n)
        agents.append(Agent(i, Quadratic(Q, c), Box(-half, half)))
    pop = GamePopulation(agents=agents, C=C, K=K, S=Box(-s_half, s_half))
    scen = Scenario("random", int(seed), N, n, _jsonable(asdict(p)), {"alpha_bar": 1.0})
    return pop, scen


BUILDERS = {
    "congestion": build_congestion,
    "pev": build_pev,
    "symmetric": build_symmetric_quadratic,
    "random": build_random_small,
}


def build(name, N, seed, params=None):
    if name == "two_agent":
        if N != 2:
            raise InvalidInputError("the two-agent game has N = 2")
        return build_two_agent(**(params or {}))
    try:
        builder = BUILDERS[name]
    except KeyError:
        raise InvalidInputError(f"unknown scenario {name!r}") from None
    return builder(N, seed, params)


def initial_state(pop, seed, replicate=0):
    """lam = 0 and sigma uniform in the bounding box of S, projected onto S."""
    rng = agent_rng(seed, replicate, tag=_INIT)
    lo, hi = pop.S.bounds()
    sigma = pop.project_coupling(rng.uniform(lo, hi))
    return np.concatenate([sigma, np.zeros(pop.n)])


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, np.ndarray):
            v = v.tolist()
        out[k] = v
    return out
