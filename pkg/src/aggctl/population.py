"""The game population: agents plus the shared data (C, K, S).

Responses of all N agents to a common signal are evaluated in one vectorized
pass per agent family; agents without a batched closed form fall back to the
scalar solver in :mod:`aggctl.agents`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .agents import (
    Agent,
    Box,
    BoxWithBudget,
    LogDisutility,
    Quadratic,
    Ray,
    optimal_response,
    project,
    set_from_dict,
)
from ._kernels import budget_rows
from .errors import InfeasibleSetError, InvalidInputError, SolverStall
from .operator_core import as_sym_matrix


class _BoxGroup:
    """Diagonal quadratic on a box: clip(-(c + u) / q, lo, hi)."""

    def __init__(self, idx, agents):
        self.idx = np.asarray(idx)
        self.inv_q = np.array([1.0 / np.diag(a.cost.Q) for a in agents])
        self.c = np.array([a.cost.c for a in agents])
        self.lo = np.array([a.feasible.lower for a in agents])
        self.hi = np.array([a.feasible.upper for a in agents])

    def __call__(self, u):
        return np.clip(-(self.c + u) * self.inv_q, self.lo, self.hi)


class _BudgetGroup:
    """Diagonal quadratic on a box with a budget constraint."""

    def __init__(self, idx, agents):
        self.idx = np.asarray(idx)
        self.w = np.array([1.0 / np.diag(a.cost.Q) for a in agents])
        self.c = np.array([a.cost.c for a in agents])
        self.lo = np.array([a.feasible.lower for a in agents])
        self.hi = np.array([a.feasible.upper for a in agents])
        self.budget = np.array([a.feasible.budget for a in agents])
        self.hw = self.hi / self.w
        self.lw = self.lo / self.w
        # multipliers from the previous call; only a starting guess
        self._mu = np.full(len(agents), np.nan)

    def __call__(self, u):
        return budget_rows(self.c, u, self.w, self.lo, self.hi, self.hw, self.lw, self.budget, self._mu)[0]

    def total(self, u):
        return budget_rows(self.c, u, self.w, self.lo, self.hi, self.hw, self.lw, self.budget, self._mu, False)[1]


class _RayGroup:
    """Log disutility along a ray: xi = clip(w / s - 1) with s = a^T (u + lin)."""

    def __init__(self, idx, agents):
        self.idx = np.asarray(idx)
        n = agents[0].dim
        self.a = np.array([a.feasible.direction for a in agents])
        self.lin = np.array([a.cost._lin(n) for a in agents])
        self.w = np.array([a.cost.weight for a in agents])
        self.xi_lo = np.array([a.feasible.xi_lo for a in agents])
        self.xi_hi = np.array([a.feasible.xi_hi for a in agents])

    def __call__(self, u):
        s = np.einsum("ij,ij->i", self.a, self.lin + u)
        with np.errstate(divide="ignore"):
            xi = np.where(s > 0, self.w / np.where(s > 0, s, 1.0) - 1.0, self.xi_hi)
        xi = np.clip(xi, self.xi_lo, self.xi_hi)
        return self.a * xi[:, None]


class _LoopGroup:
    """Any other agent: one iterative solve each, started from the previous answer."""

    def __init__(self, idx, agents):
        self.idx = np.asarray(idx)
        self.agents = agents
        self._last = [None] * len(agents)

    def __call__(self, u):
        out = []
        for k, a in enumerate(self.agents):
            y = optimal_response(a, u, y0=self._last[k])
            self._last[k] = y
            out.append(y)
        return np.array(out)


def _family(agent):
    cost, cset = agent.cost, agent.feasible
    if isinstance(cost, LogDisutility):
        return _RayGroup
    if isinstance(cost, Quadratic) and cost.diagonal:
        if isinstance(cset, Box):
            return _BoxGroup
        if isinstance(cset, BoxWithBudget):
            return _BudgetGroup
    return _LoopGroup


@dataclass(eq=False)
class GamePopulation:
    """N agents sharing the coupling set S and the matrices C and K.

    Attributes
    ----------
    agents : list of Agent
    C : ndarray
        Weight of the population average in every agent's cost.
    K : ndarray
        Control gain applied to the coordinator vector lambda.
    S : constraint set
        Coupling set for the population average.
    constant_offset : ndarray, optional
        Linear term already folded into the agents' costs; kept for reporting.
    """

    agents: list
    C: np.ndarray
    K: np.ndarray
    S: object
    constant_offset: np.ndarray = None
    _groups: list = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not self.agents:
            raise InvalidInputError("population needs at least one agent")
        self.C = as_sym_matrix(self.C, "C")
        self.K = as_sym_matrix(self.K, "K")
        n = self.C.shape[0]
        if self.K.shape != (n, n) or self.S.dim != n:
            raise InvalidInputError("C, K and S dimensions disagree")
        if any(a.dim != n for a in self.agents):
            raise InvalidInputError("agent dimension differs from C")
        if self.constant_offset is not None:
            self.constant_offset = np.asarray(self.constant_offset, dtype=float)
        lo, hi = self.average_hull()
        s_lo, s_hi = self.S.bounds()
        if np.any(s_lo > hi + 1e-12) or np.any(s_hi < lo - 1e-12):
            raise InfeasibleSetError("coupling set misses the hull of average strategies")
        by_family = {}
        for i, a in enumerate(self.agents):
            by_family.setdefault(_family(a), []).append(i)
        self._groups = [
            cls(idx, [self.agents[i] for i in idx]) for cls, idx in by_family.items()
        ]

    @property
    def N(self):
        return len(self.agents)

    @property
    def n(self):
        return self.C.shape[0]

    @property
    def ell(self):
        return min(a.modulus for a in self.agents)

    def average_hull(self):
        """Componentwise bounding box of (1/N) sum_i X_i."""
        bounds = [a.feasible.bounds() for a in self.agents]
        lo = np.mean([b[0] for b in bounds], axis=0)
        hi = np.mean([b[1] for b in bounds], axis=0)
        return lo, hi

    def coupling_within_hull(self):
        """Whether the bounding box of S sits inside the average hull."""
        lo, hi = self.average_hull()
        s_lo, s_hi = self.S.bounds()
        return bool(np.all(s_lo >= lo - 1e-12) and np.all(s_hi <= hi + 1e-12))

    def responses(self, u):
        """All optimal responses to the signal u, shape (N, n)."""
        u = np.asarray(u, dtype=float)
        if len(self._groups) == 1:
            groups, out = self._groups, None
        else:
            groups, out = self._groups, np.empty((self.N, self.n))
        for g in groups:
            try:
                if out is None:
                    # one family covering agents 0..N-1 in order
                    return g(u)
                out[g.idx] = g(u)
            except SolverStall as exc:
                raise SolverStall(
                    f"agent {exc.agent_id}: {exc}", grad_norm=exc.grad_norm, agent_id=exc.agent_id
                ) from exc
        return out

    def mean_response(self, u):
        """Average of the optimal responses to u."""
        u = np.asarray(u, dtype=float)
        if len(self._groups) == 1 and hasattr(self._groups[0], "total"):
            return self._groups[0].total(u) / self.N
        return self.responses(u).mean(axis=0)

    def project_coupling(self, y):
        return project(self.S, y)

    def to_dict(self):
        return {
            "C": self.C.tolist(),
            "K": self.K.tolist(),
            "S": self.S.to_dict(),
            "constant_offset": None
            if self.constant_offset is None
            else self.constant_offset.tolist(),
            "agents": [a.to_dict() for a in self.agents],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            agents=[Agent.from_dict(a) for a in d["agents"]],
            C=d["C"],
            K=d["K"],
            S=set_from_dict(d["S"]),
            constant_offset=d.get("constant_offset"),
        )

    def serialize(self):
        """Canonical byte serialization (exact float round-trip via repr)."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()

    def fingerprint(self):
        return hashlib.sha256(self.serialize()).hexdigest()
