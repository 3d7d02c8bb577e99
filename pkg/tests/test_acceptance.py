"""Acceptance criteria, one test each, run at the stated tolerances.

Each test records a single PASS/FAIL line (see ``conftest.record_acceptance``)
before asserting, so the summary lists every criterion even when some fail.
"""

import os
import time

import numpy as np
import pytest

from aggctl import coordinator as co
from aggctl import harness as hs
from aggctl import verify as vf
from aggctl.agents import Agent, Box, BoxWithBudget, LogDisutility, Quadratic, Ray, optimal_response
from aggctl.operator_core import build_metric
from aggctl.scenarios import build, build_random_small, build_symmetric_quadratic, build_two_agent

from conftest import record_acceptance

pytestmark = pytest.mark.slow


def random_state(pop, rng, lam_scale):
    """sigma uniform in the bounding box of S then projected, lam uniform."""
    lo, hi = pop.S.bounds()
    sigma = pop.project_coupling(rng.uniform(lo, hi))
    return np.concatenate([sigma, rng.uniform(-lam_scale, lam_scale, pop.n)])


# --------------------------------------------------------------------------
# 1. operator properties


def test_operator_properties():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = {}
    for name, N, lam_scale in (("two_agent", 2, 2.0), ("congestion", 50, 20.0), ("pev", 50, 1.0)):
        pop, _ = build(name, N, seed=11)
        pts = vf.sample_states(pop, rng, 600, lam_scale=lam_scale)
        # 300 independent pairs, 200 pairs at distances from 1e-8 to 1e-1
        pairs = [(pts[k], pts[k + 300]) for k in range(300)]
        for z in pts[:200]:
            d = rng.normal(size=z.size)
            pairs.append((z, z + 10.0 ** rng.uniform(-8, -1) * d / np.linalg.norm(d)))
        rep = vf.operator_probe(pop, pairs)
        worst[name] = (rep.cocoercivity, rep.averagedness)
    elapsed = time.perf_counter() - start
    ok = all(max(v) <= 1e-7 for v in worst.values()) and elapsed <= 60.0
    detail = ", ".join(f"{k}: coco {c:.1e} avg {a:.1e}" for k, (c, a) in worst.items())
    record_acceptance(1, ok, f"{detail}; {elapsed:.1f}s")
    assert ok


# --------------------------------------------------------------------------
# 2. known zero of the two-agent game


def test_two_agent_known_zero():
    pop, _ = build_two_agent(2.0)
    metric = build_metric(pop.C, pop.K)
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    dist, rate_ok, margins = [], True, []
    for _ in range(20):
        z0 = random_state(pop, rng, 2.0)
        traj = co.run(pop, co.RunConfig(tol=1e-9, max_iter=100_000), init=z0)
        dist.append(np.linalg.norm(traj.z[-1]) if traj.converged else np.inf)
        ok, margin = vf.rate_bound_check(traj, metric, 1.0, np.zeros(2))
        rate_ok &= ok
        margins.append(margin)
    elapsed = time.perf_counter() - start
    ok = max(dist) <= 1e-6 and rate_ok
    record_acceptance(
        2, ok, f"max |z - 0| {max(dist):.1e}, rate bound {'held' if rate_ok else 'violated'} "
        f"(min margin {min(margins):.3f}); {elapsed:.1f}s"
    )
    assert ok


# --------------------------------------------------------------------------
# 3. uniqueness of the limit


UNIQUENESS_CASES = (
    # name, N, lam scale, stop tolerance
    ("two_agent", 2, 2.0, 1e-7),
    ("congestion", 20, 10.0, 1e-7),
    ("pev", 20, 0.5, 1e-7),
    ("symmetric", 20, 1.0, 1e-7),
    ("random", 5, 1.0, 1e-7),
)


def test_uniqueness_of_limit():
    rng = np.random.default_rng(303)
    spreads = {}
    ok = True
    for name, N, lam_scale, tol in UNIQUENESS_CASES:
        pop, _ = build(name, N, seed=7)
        metric = build_metric(pop.C, pop.K)
        limits = []
        for _ in range(10):
            traj = co.run(pop, co.RunConfig(tol=tol, max_iter=2_000_000, record_every=10_000),
                          init=random_state(pop, rng, lam_scale))
            ok &= traj.converged
            limits.append(traj.z[-1])
        ref = limits[0]
        spreads[name] = max(metric.norm_of(z - ref) for z in limits[1:])
    ok &= max(spreads.values()) <= 1e-5
    record_acceptance(3, ok, ", ".join(f"{k}: {v:.1e}" for k, v in spreads.items()))
    assert ok


# --------------------------------------------------------------------------
# 4. agreement with the dual decomposition oracle


def test_oracle_equivalence():
    rng = np.random.default_rng(404)
    worst_lam, worst_x = 0.0, 0.0
    for k in range(10):
        N = int(rng.integers(2, 11))
        n = int(rng.integers(1, 4))
        pop, _ = build_random_small(N, seed=1000 + k, params={"n": n})
        traj = co.run(pop, co.RunConfig(tol=1e-10, max_iter=500_000))
        assert traj.converged
        st = traj.final_state
        x = co.equilibrium_strategies(pop, st)
        res = vf.dual_decomposition_oracle(pop, st.sigma, tol=1e-12, max_iter=500_000)
        worst_lam = max(worst_lam, float(np.max(np.abs(res.lam - st.lam))))
        worst_x = max(worst_x, float(np.max(np.abs(res.strategies - x))))
    ok = worst_lam <= 1e-4 and worst_x <= 1e-4
    record_acceptance(4, ok, f"max |dlam| {worst_lam:.1e}, max |dx| {worst_x:.1e}")
    assert ok


# --------------------------------------------------------------------------
# 5. iteration counts independent of N


def test_population_size_independence(tmp_path):
    workers = min(8, os.cpu_count() or 1)
    medians, big_wall = {}, 0.0
    for name in ("congestion", "pev"):
        cfg = hs.ExperimentConfig(
            scenario=name,
            sizes=[100, 1000, 10_000],
            replicates=10,
            thresholds=[1e-3],
            tol=1e-3,
            max_iter=500_000,
            workers=workers,
            traces=False,
            out=str(tmp_path / name),
        )
        for size in cfg.sizes:
            t0 = time.perf_counter()
            res = hs.run_experiments(cfg.replace(sizes=[size]))
            wall = time.perf_counter() - t0
            if size == 10_000:
                big_wall = max(big_wall, wall)
            medians[(name, size)] = res.median_iterations(1e-3)[size]
    spread = {}
    for name in ("congestion", "pev"):
        lo = medians[(name, 100)]
        hi = medians[(name, 10_000)]
        spread[name] = abs(hi - lo) / lo if lo and hi else np.inf
    ok = max(spread.values()) <= 0.25 and big_wall <= 600.0
    detail = "; ".join(
        f"{n}: medians " + "/".join(f"{medians[(n, s)]:.0f}" for s in (100, 1000, 10_000))
        + f" (spread {spread[n]:.1%})"
        for n in ("congestion", "pev")
    )
    record_acceptance(5, ok, f"{detail}; slowest N=1e4 batch {big_wall:.0f}s on {workers} worker(s)")
    assert ok


# --------------------------------------------------------------------------
# 6. equilibrium certificates


def test_equilibrium_certification():
    cases = [("pev", 100, r) for r in range(3)] + [("congestion", 100, r) for r in range(3)]
    cases += [("symmetric", 50, 0), ("random", 8, 0), ("random", 8, 1), ("two_agent", 2, 0)]
    worst, pev_excess, pev_low, runs = 0.0, -np.inf, np.inf, 0
    ok = True
    for name, N, rep in cases:
        cfg = hs.ExperimentConfig(scenario=name, sizes=[N], replicates=1, tol=1e-6,
                                  max_iter=1_000_000, cert_tol=1e-5, traces=False)
        rec = hs.run_one(cfg, N, rep)
        if not rec.converged:
            continue
        runs += 1
        cert = rec.certificate
        ok &= cert["passed"]
        worst = max(worst, cert["max_residual"], cert["feasibility"])
        if name == "pev":
            pev_excess = max(pev_excess, float(np.max(rec.aggregate - rec.caps)))
            pev_low = min(pev_low, float(np.min(rec.aggregate)))
    ok &= runs == len(cases) and pev_excess <= 1e-6 and pev_low >= 0.0
    record_acceptance(
        6, ok, f"{runs}/{len(cases)} converged, worst certificate error {worst:.1e}, "
        f"PEV max(aggregate - cap) {pev_excess:.1e}, min aggregate {pev_low:.1e}"
    )
    assert ok


# --------------------------------------------------------------------------
# 7. decay of the gap to exact best responses


def test_eps_n_decay():
    start = time.perf_counter()
    fam = lambda N, seed: build_symmetric_quadratic(N, seed)[0]
    rep = vf.measure_eps_N(fam, [10, 20, 40, 80, 160])
    elapsed = time.perf_counter() - start
    scaled = rep.scaled
    ok = bool(np.all(scaled <= 3.0 * scaled[0])) and rep.slope <= -0.8 and elapsed <= 120.0
    record_acceptance(
        7, ok, f"N*eps_N {np.array2string(scaled, precision=4)}, slope {rep.slope:.3f}; {elapsed:.1f}s"
    )
    assert ok


# --------------------------------------------------------------------------
# 8. optimal responses against brute-force grids

PITCH = 1e-5


def _grid(lo, hi):
    return np.arange(lo, hi + 0.5 * PITCH, PITCH)


def _quad_box_case(rng, method):
    q = rng.uniform(0.2, 5.0)
    c = rng.normal()
    lo = rng.uniform(-2.0, 0.0)
    hi = lo + rng.uniform(0.1, 3.0)
    u = rng.normal()
    a = Agent(0, Quadratic([[q]], [c]), Box([lo], [hi]))
    y = optimal_response(a, [u], method=method)[0]
    g = _grid(lo, hi)
    return abs(y - g[np.argmin(0.5 * q * g**2 + (c + u) * g)])


def _quad_budget_case(rng):
    # n = 2 with y1 + y2 = b: a line segment parametrized by y1
    q = rng.uniform(0.2, 5.0, 2)
    c = rng.normal(size=2)
    lo = rng.uniform(-1.0, 0.0, 2)
    hi = lo + rng.uniform(0.2, 2.0, 2)
    b = rng.uniform(lo.sum(), hi.sum())
    u = rng.normal(size=2)
    a = Agent(0, Quadratic(np.diag(q), c), BoxWithBudget(lo, hi, b))
    y = optimal_response(a, u)
    t = _grid(max(lo[0], b - hi[1]), min(hi[0], b - lo[1]))
    s = b - t
    f = 0.5 * q[0] * t**2 + 0.5 * q[1] * s**2 + (c[0] + u[0]) * t + (c[1] + u[1]) * s
    k = np.argmin(f)
    return max(abs(y[0] - t[k]), abs(y[1] - s[k]))


def _log_ray_case(rng):
    n = 3
    e = rng.exponential(size=n)
    direction = e / e.sum()
    w = rng.uniform(1.0, 30.0)
    lin = rng.uniform(0.0, 0.2, n)
    xi_hi = rng.uniform(1.0, 10.0)
    u = rng.normal(scale=2.0, size=n)
    a = Agent(0, LogDisutility(w, lin), Ray(direction, 0.0, xi_hi))
    y = optimal_response(a, u)
    xi = _grid(0.0, xi_hi)
    f = -w * np.log1p(xi) + float(direction @ (lin + u)) * xi
    return float(np.linalg.norm(y - direction * xi[np.argmin(f)]))


def test_solver_audit():
    rng = np.random.default_rng(808)
    worst = {
        "quadratic box": max(_quad_box_case(rng, "auto") for _ in range(100)),
        "quadratic box (pgd)": max(_quad_box_case(rng, "pgd") for _ in range(100)),
        "quadratic budget": max(_quad_budget_case(rng) for _ in range(100)),
        "log ray": max(_log_ray_case(rng) for _ in range(100)),
    }
    ok = max(worst.values()) <= 1e-4
    record_acceptance(8, ok, ", ".join(f"{k}: {v:.1e}" for k, v in worst.items()))
    assert ok
