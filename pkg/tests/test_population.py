import numpy as np
import pytest

from aggctl.agents import Agent, Box, BoxWithBudget, Quadratic, optimal_response
from aggctl.errors import InfeasibleSetError, InvalidInputError
from aggctl.population import GamePopulation
from aggctl.scenarios import build


@pytest.mark.parametrize("name,N", [("pev", 40), ("congestion", 40), ("random", 6), ("symmetric", 5)])
def test_batched_responses_match_single_agent_solver(name, N, rng):
    pop, _ = build(name, N, seed=3)
    for _ in range(3):
        u = rng.normal(scale=0.05, size=pop.n)
        batch = pop.responses(u)
        single = np.array([optimal_response(a, u) for a in pop.agents])
        np.testing.assert_allclose(batch, single, atol=1e-9)
        np.testing.assert_allclose(pop.mean_response(u), single.mean(axis=0), atol=1e-10)


def test_mixed_population_keeps_agent_order():
    box = Box([-1.0, -1.0], [1.0, 1.0])
    budget = BoxWithBudget([0.0, 0.0], [1.0, 1.0], 1.0)
    agents = [
        Agent(0, Quadratic(np.eye(2), [0.0, 0.0]), box),
        Agent(1, Quadratic(np.eye(2), [0.0, 0.0]), budget),
        Agent(2, Quadratic([[2.0, 0.5], [0.5, 1.0]], [0.0, 0.0]), box),
    ]
    pop = GamePopulation(agents, C=np.eye(2), K=np.eye(2), S=box)
    u = np.array([0.5, -0.2])
    expect = np.array([optimal_response(a, u) for a in agents])
    np.testing.assert_allclose(pop.responses(u), expect, atol=1e-10)
    np.testing.assert_allclose(expect[1].sum(), 1.0)


def test_serialize_round_trip():
    pop, _ = build("pev", 12, seed=9)
    back = GamePopulation.from_dict(pop.to_dict())
    assert back.serialize() == pop.serialize()
    assert back.fingerprint() == pop.fingerprint()
    assert len(pop.fingerprint()) == 64


def test_coupling_set_outside_hull_rejected():
    box = Box([0.0], [1.0])
    a = Agent(0, Quadratic([[1.0]], [0.0]), box)
    with pytest.raises(InfeasibleSetError):
        GamePopulation([a], C=[[0.0]], K=[[1.0]], S=Box([2.0], [3.0]))


def test_coupling_within_hull_report():
    a = Agent(0, Quadratic([[1.0]], [0.0]), Box([0.0], [1.0]))
    inside = GamePopulation([a], C=[[0.0]], K=[[1.0]], S=Box([0.2], [0.8]))
    overlap = GamePopulation([a], C=[[0.0]], K=[[1.0]], S=Box([0.5], [2.0]))
    assert inside.coupling_within_hull()
    assert not overlap.coupling_within_hull()


def test_dimension_mismatch_rejected():
    a = Agent(0, Quadratic([[1.0]], [0.0]), Box([0.0], [1.0]))
    with pytest.raises(InvalidInputError):
        GamePopulation([a], C=np.eye(2), K=np.eye(2), S=Box([0.0, 0.0], [1.0, 1.0]))
    with pytest.raises(InvalidInputError):
        GamePopulation([], C=[[0.0]], K=[[1.0]], S=Box([0.0], [1.0]))


def test_modulus_is_the_smallest():
    box = Box([0.0], [1.0])
    agents = [Agent(i, Quadratic([[q]], [0.0]), box) for i, q in enumerate((3.0, 0.5, 2.0))]
    pop = GamePopulation(agents, C=[[0.0]], K=[[1.0]], S=box)
    assert pop.ell == 0.5
