"""Agent data and the decentralized optimal-response solver.

Each agent i holds a strongly convex cost f_i and a compact convex set X_i.
Given a broadcast signal u it answers with

    x_i*(u) = argmin_{y in X_i}  f_i(y) + u^T y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleSetError, InvalidInputError, SolverStall

RESP_TOL = 1e-10
MAX_INNER = 10_000
BISECTION_STEPS = 100


def _vec(x, name):
    a = np.atleast_1d(np.asarray(x, dtype=float))
    if a.ndim != 1:
        raise InvalidInputError(f"{name} must be a vector")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return a


# --------------------------------------------------------------------------
# constraint sets


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = _vec(self.lower, "lower"), _vec(self.upper, "upper")
        if lo.shape != hi.shape:
            raise InvalidInputError("lower/upper shapes differ")
        if np.any(lo > hi):
            raise InfeasibleSetError("box with lower > upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    def bounds(self):
        return self.lower, self.upper

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def to_dict(self):
        return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class BoxWithBudget:
    """{y : lower <= y <= upper, sum(y) = budget}."""

    lower: np.ndarray
    upper: np.ndarray
    budget: float

    def __post_init__(self):
        lo, hi = _vec(self.lower, "lower"), _vec(self.upper, "upper")
        if lo.shape != hi.shape:
            raise InvalidInputError("lower/upper shapes differ")
        if np.any(lo > hi):
            raise InfeasibleSetError("box with lower > upper")
        g = float(self.budget)
        if not math.isfinite(g):
            raise InvalidInputError("budget must be finite")
        slack = 1e-12 * max(1.0, abs(g))
        if not (lo.sum() - slack <= g <= hi.sum() + slack):
            raise InfeasibleSetError(
                f"budget {g} outside [{lo.sum()}, {hi.sum()}]: empty set"
            )
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "budget", g)

    @property
    def dim(self):
        return self.lower.size

    def bounds(self):
        return self.lower, self.upper

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        in_box = np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol)
        return bool(in_box and abs(x.sum() - self.budget) <= tol)

    def to_dict(self):
        return {
            "kind": "box_budget",
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "budget": self.budget,
        }


@dataclass(frozen=True, eq=False)
class Ray:
    """Segment {direction * xi : xi in [xi_lo, xi_hi]}, direction on the unit simplex."""

    direction: np.ndarray
    xi_lo: float
    xi_hi: float

    def __post_init__(self):
        a = _vec(self.direction, "direction")
        if np.any(a < 0) or abs(a.sum() - 1.0) > 1e-9:
            raise InvalidInputError("ray direction must lie on the unit simplex")
        lo, hi = float(self.xi_lo), float(self.xi_hi)
        if lo > hi:
            raise InfeasibleSetError("ray interval with xi_lo > xi_hi")
        object.__setattr__(self, "direction", a)
        object.__setattr__(self, "xi_lo", lo)
        object.__setattr__(self, "xi_hi", hi)

    @property
    def dim(self):
        return self.direction.size

    def bounds(self):
        ends = np.stack([self.direction * self.xi_lo, self.direction * self.xi_hi])
        return ends.min(axis=0), ends.max(axis=0)

    def coordinate(self, x):
        a = self.direction
        return float(a @ np.asarray(x, dtype=float) / (a @ a))

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        xi = self.coordinate(x)
        on_line = np.linalg.norm(x - xi * self.direction) <= tol
        return bool(on_line and self.xi_lo - tol <= xi <= self.xi_hi + tol)

    def to_dict(self):
        return {
            "kind": "ray",
            "direction": self.direction.tolist(),
            "xi_lo": self.xi_lo,
            "xi_hi": self.xi_hi,
        }


def set_from_dict(d):
    kind = d["kind"]
    if kind == "box":
        return Box(d["lower"], d["upper"])
    if kind == "box_budget":
        return BoxWithBudget(d["lower"], d["upper"], d["budget"])
    if kind == "ray":
        return Ray(d["direction"], d["xi_lo"], d["xi_hi"])
    raise InvalidInputError(f"unknown set kind {kind!r}")


def _budget_bisection(point, lo, hi, budget, steps=BISECTION_STEPS):
    # sum(clip(point - mu, lo, hi)) is nonincreasing in mu; these brackets are exact
    mu_lo = float(np.min(point - hi))
    mu_hi = float(np.max(point - lo))
    for _ in range(steps):
        mid = 0.5 * (mu_lo + mu_hi)
        if np.clip(point - mid, lo, hi).sum() > budget:
            mu_lo = mid
        else:
            mu_hi = mid
    mu = 0.5 * (mu_lo + mu_hi)
    y = np.clip(point - mu, lo, hi)
    # polish: solve for mu exactly on the free coordinates
    free = (point - mu > lo) & (point - mu < hi)
    if np.any(free):
        fixed_sum = y[~free].sum()
        mu = (point[free].sum() - (budget - fixed_sum)) / free.sum()
        y_new = np.clip(point - mu, lo, hi)
        if abs(y_new.sum() - budget) <= abs(y.sum() - budget):
            y = y_new
    return y


def project(cset, point):
    """Euclidean projection of `point` onto `cset`."""
    p = _vec(point, "point")
    if p.size != cset.dim:
        raise InvalidInputError(f"dimension mismatch: {p.size} vs {cset.dim}")
    if isinstance(cset, Box):
        return np.clip(p, cset.lower, cset.upper)
    if isinstance(cset, BoxWithBudget):
        return _budget_bisection(p, cset.lower, cset.upper, cset.budget)
    if isinstance(cset, Ray):
        a = cset.direction
        xi = np.clip(a @ p / (a @ a), cset.xi_lo, cset.xi_hi)
        return a * xi
    raise InvalidInputError(f"unsupported set type {type(cset).__name__}")


def budget_multiplier_batch(t, w, lo, hi, budget):
    """Solve sum_j clip(w_j (t_j - mu), lo_j, hi_j) = budget for mu, row-wise.

    Exact piecewise-linear root finding over the 2n breakpoints of each row;
    used for diagonal-quadratic responses on box-with-budget sets.  Returns
    the clipped solution, shape (N, n).
    """
    t = np.asarray(t, dtype=float)
    N, n = t.shape
    bp = np.concatenate([t - hi / w, t - lo / w], axis=1)
    dslope = np.concatenate([-w, w], axis=1)
    order = np.argsort(bp, axis=1, kind="stable")
    bps = np.take_along_axis(bp, order, axis=1)
    ds = np.take_along_axis(dslope, order, axis=1)
    slope = np.cumsum(ds, axis=1)  # slope of g on (bps[k], bps[k+1])
    g = np.empty_like(bps)
    g[:, 0] = hi.sum(axis=1)
    g[:, 1:] = g[:, :1] + np.cumsum(slope[:, :-1] * np.diff(bps, axis=1), axis=1)
    b = np.asarray(budget, dtype=float).reshape(N)
    # first breakpoint where g has dropped to the budget
    k = np.argmax(g <= b[:, None], axis=1)
    k = np.where(np.any(g <= b[:, None], axis=1), k, 2 * n - 1)
    rows = np.arange(N)
    km1 = np.maximum(k - 1, 0)
    s = slope[rows, km1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = bps[rows, km1] + (g[rows, km1] - b) / (-s)
    mu = np.where((k == 0) | (s == 0), bps[rows, k], mu)
    return np.clip(w * (t - mu[:, None]), lo, hi)


# --------------------------------------------------------------------------
# cost functions


@dataclass(frozen=True, eq=False)
class Quadratic:
    """0.5 y^T Q y + c^T y with Q symmetric positive definite."""

    Q: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        c = _vec(self.c, "c")
        if Q.shape != (c.size, c.size):
            raise InvalidInputError("Q/c shape mismatch")
        if not np.array_equal(Q, Q.T):
            raise InvalidInputError("Q must be symmetric")
        w = np.linalg.eigvalsh(Q)
        if w[0] <= 0:
            raise InvalidInputError("Q must be positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)

    @property
    def dim(self):
        return self.c.size

    @property
    def diagonal(self):
        return bool(np.count_nonzero(self.Q - np.diag(np.diag(self.Q))) == 0)

    def modulus(self, cset=None):
        return float(np.linalg.eigvalsh(self.Q)[0])

    def curvature_bound(self, cset=None):
        return float(np.linalg.eigvalsh(self.Q)[-1])

    def value(self, y, cset=None):
        y = np.asarray(y, dtype=float)
        return float(0.5 * y @ self.Q @ y + self.c @ y)

    def gradient(self, y, cset=None):
        return self.Q @ y + self.c

    def to_dict(self):
        return {"kind": "quadratic", "Q": self.Q.tolist(), "c": self.c.tolist()}


@dataclass(frozen=True, eq=False)
class LogDisutility:
    """-w ln(1 + xi) + linear^T x on a ray x = a xi."""

    weight: float
    linear: np.ndarray = field(default=None)

    def __post_init__(self):
        if not self.weight > 0:
            raise InvalidInputError("weight must be positive")
        object.__setattr__(self, "weight", float(self.weight))
        if self.linear is not None:
            object.__setattr__(self, "linear", _vec(self.linear, "linear"))

    def _lin(self, n):
        return np.zeros(n) if self.linear is None else self.linear

    def modulus(self, cset):
        return self.weight / (1.0 + cset.xi_hi) ** 2

    def curvature_bound(self, cset):
        return self.weight / (1.0 + cset.xi_lo) ** 2

    def value(self, y, cset):
        y = np.asarray(y, dtype=float)
        xi = cset.coordinate(y)
        return float(-self.weight * math.log1p(xi) + self._lin(y.size) @ y)

    def to_dict(self):
        return {
            "kind": "log",
            "weight": self.weight,
            "linear": None if self.linear is None else self.linear.tolist(),
        }


def cost_from_dict(d):
    if d["kind"] == "quadratic":
        return Quadratic(d["Q"], d["c"])
    if d["kind"] == "log":
        return LogDisutility(d["weight"], d["linear"])
    raise InvalidInputError(f"unknown cost kind {d['kind']!r}")


@dataclass(frozen=True, eq=False)
class Agent:
    id: int
    cost: object
    feasible: object

    def __post_init__(self):
        if isinstance(self.cost, LogDisutility):
            if not isinstance(self.feasible, Ray):
                raise InvalidInputError("LogDisutility cost requires a Ray set")
            if self.feasible.xi_lo <= -1.0:
                raise InvalidInputError("ray interval must stay above xi = -1")
        elif isinstance(self.cost, Quadratic):
            if self.cost.dim != self.feasible.dim:
                raise InvalidInputError("cost and set dimensions differ")
        else:
            raise InvalidInputError(f"unsupported cost {type(self.cost).__name__}")

    @property
    def dim(self):
        return self.feasible.dim

    @property
    def modulus(self):
        return self.cost.modulus(self.feasible)

    def cost_value(self, y):
        return self.cost.value(y, self.feasible)

    def to_dict(self):
        return {"id": self.id, "cost": self.cost.to_dict(), "set": self.feasible.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["id"], cost_from_dict(d["cost"]), set_from_dict(d["set"]))


# --------------------------------------------------------------------------
# optimal response


def _grad_map_norm(y, grad, cset, L):
    return L * np.linalg.norm(y - project(cset, y - grad / L))


def _log_response(cost, ray, u):
    a = ray.direction
    s = a @ (u + cost._lin(a.size))
    if s > 0:
        xi = min(max(cost.weight / s - 1.0, ray.xi_lo), ray.xi_hi)
    else:
        xi = ray.xi_hi
    return a * xi


def _pgd(cost, cset, u, y0, tol, max_inner):
    L = cost.curvature_bound(cset)
    y = project(cset, y0)
    g = cost.gradient(y) + u
    for _ in range(max_inner):
        y_next = project(cset, y - g / L)
        g_next = cost.gradient(y_next) + u
        if L * np.linalg.norm(y_next - project(cset, y_next - g_next / L)) <= tol:
            return y_next
        y, g = y_next, g_next
    raise SolverStall(
        "projected gradient did not converge",
        grad_norm=float(_grad_map_norm(y, g, cset, L)),
    )


def optimal_response(agent, u, method="auto", y0=None, tol=RESP_TOL, max_inner=MAX_INNER):
    """Unique minimizer of f(y) + u^T y over the agent's set.

    Parameters
    ----------
    agent : Agent
    u : array_like
        Broadcast signal, shape (n,).
    method : {"auto", "pgd"}
        ``"auto"`` uses the closed form where one exists (diagonal quadratic on a
        box or box-with-budget, log disutility on a ray); ``"pgd"`` forces
        projected gradient with step 1/L.
    y0 : array_like, optional
        Starting point for projected gradient.
    """
    u = _vec(u, "u")
    cost, cset = agent.cost, agent.feasible
    if u.size != agent.dim:
        raise InvalidInputError(f"signal dimension {u.size} != agent dimension {agent.dim}")
    if isinstance(cost, LogDisutility):
        return _log_response(cost, cset, u)
    if method == "auto" and cost.diagonal:
        q = np.diag(cost.Q)
        if isinstance(cset, Box):
            return np.clip(-(cost.c + u) / q, cset.lower, cset.upper)
        if isinstance(cset, BoxWithBudget):
            return budget_multiplier_batch(
                (-(cost.c + u))[None, :],
                (1.0 / q)[None, :],
                cset.lower[None, :],
                cset.upper[None, :],
                np.array([cset.budget]),
            )[0]
    if y0 is None:
        y0 = np.zeros(agent.dim)
    try:
        return _pgd(cost, cset, u, np.asarray(y0, dtype=float), tol, max_inner)
    except SolverStall as exc:
        exc.agent_id = agent.id
        raise


def response_lipschitz_probe(agent, A_gain, samples, seed, scale=1.0):
    """Largest observed ||x*(A u) - x*(A v)|| / ||u - v|| over random pairs.

    Should stay below ||A|| / ell_i.
    """
    if samples < 2:
        raise InvalidInputError("samples must be >= 2")
    A = np.atleast_2d(np.asarray(A_gain, dtype=float))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        u = rng.normal(scale=scale, size=A.shape[1])
        v = u + rng.normal(scale=scale * 10.0 ** rng.uniform(-3, 0), size=A.shape[1])
        du = np.linalg.norm(u - v)
        if du == 0:
            continue
        dx = np.linalg.norm(optimal_response(agent, A @ u) - optimal_response(agent, A @ v))
        worst = max(worst, dx / du)
    return worst
