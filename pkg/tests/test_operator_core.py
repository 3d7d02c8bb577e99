import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggctl.coordinator import Constant, Mann
from aggctl.errors import DesignViolation, InvalidInputError
from aggctl.operator_core import (
    TIGHT_CONSTANT,
    assemble_p,
    build_metric,
    cocoercivity_constant,
    is_positive_definite,
    m_matrix,
    resolvent_m,
    schedule_is_valid,
    validate_design,
)


def random_sym(rng, n, lo, hi):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    m = q @ np.diag(rng.uniform(lo, hi, n)) @ q.T
    return 0.5 * (m + m.T)


def test_metric_two_agent_data():
    # C = -1, K = 2: P = [[3, -2], [-2, 2]], eigenvalues (5 +- sqrt(17)) / 2
    m = build_metric([[-1.0]], [[2.0]])
    np.testing.assert_array_equal(m.matrix, [[3.0, -2.0], [-2.0, 2.0]])
    assert m.norm == pytest.approx((5 + math.sqrt(17)) / 2, rel=1e-14)
    assert m.min_eig == pytest.approx((5 - math.sqrt(17)) / 2, rel=1e-12)


def test_beta_two_agent_data():
    m = build_metric([[-1.0]], [[2.0]])
    assert cocoercivity_constant(1.0, m) == pytest.approx(1.0 / (3 * (5 + math.sqrt(17))), rel=1e-14)
    assert cocoercivity_constant(1.0, m, tight=True) == pytest.approx(
        2.0 / ((3 + 2 * math.sqrt(2)) * (5 + math.sqrt(17))), rel=1e-14
    )
    assert TIGHT_CONSTANT < 6.0


@pytest.mark.parametrize(
    "eps, z, expected",
    [
        (1.0, [2.0, 2.0], [1.0, 1.0]),  # (I + M)[1; 1] = [2; 2]
        (0.5, [3.0, 0.0], [2.0, -1.0]),  # (I + M/2)[2; -1] = [3; 0]
        (0.0, [1.5, -2.0], [1.5, -2.0]),
    ],
)
def test_resolvent_examples(eps, z, expected):
    np.testing.assert_allclose(resolvent_m(eps, z), expected, rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(
    n=st.integers(1, 4),
    eps=st.floats(1e-6, 10.0),
    seed=st.integers(0, 2**32 - 1),
)
def test_resolvent_matches_linear_solve(n, eps, seed):
    z = np.random.default_rng(seed).normal(size=2 * n)
    direct = np.linalg.solve(np.eye(2 * n) + eps * m_matrix(n), z)
    np.testing.assert_allclose(resolvent_m(eps, z), direct, rtol=1e-12, atol=1e-12)


def test_m_monotone_in_metric(rng):
    # M^T P + P M = diag(2 (C + K), 0)
    for n in (1, 2, 3):
        C = random_sym(rng, n, -0.5, 1.0)
        K = random_sym(rng, n, 1.0, 2.0)
        P = assemble_p(C, K)
        M = m_matrix(n)
        expected = np.zeros((2 * n, 2 * n))
        expected[:n, :n] = 2 * (C + K)
        np.testing.assert_allclose(M.T @ P + P @ M, expected, atol=1e-13)


def test_build_metric_names_failed_block():
    with pytest.raises(DesignViolation, match="^K"):
        build_metric([[0.0]], [[-1.0]])
    with pytest.raises(DesignViolation, match="C \\+ K"):
        build_metric([[-1.0]], [[1.0]])


def test_input_validation():
    with pytest.raises(InvalidInputError):
        build_metric([[1.0, 2.0], [0.0, 1.0]], np.eye(2))
    with pytest.raises(InvalidInputError):
        build_metric([[np.nan]], [[1.0]])
    with pytest.raises(InvalidInputError):
        assemble_p(np.eye(2), np.eye(3))
    with pytest.raises(InvalidInputError):
        cocoercivity_constant(0.0, 1.0)


def test_positive_definite_is_relative():
    assert is_positive_definite(np.diag([1e-8, 1e-8]))
    assert not is_positive_definite(np.diag([1.0, 1e-12]))
    assert not is_positive_definite(np.diag([1.0, 0.0]))


def test_validate_design_reports_each_condition():
    good = validate_design([[-1.0]], [[2.0]], 1.0, 0.01, Constant(1.0))
    assert good.passed and good.failures() == []
    too_big = validate_design([[-1.0]], [[2.0]], 1.0, 0.05, Constant(1.0))
    assert not too_big.passed and not too_big.epsilon_valid
    assert any("epsilon" in f for f in too_big.failures())
    bad_gain = validate_design([[-1.0]], [[1.0]], 1.0, 0.01, Constant(1.0))
    assert not bad_gain.CplusK_pd and bad_gain.K_pd
    assert validate_design([[0.0]], [[1.0]], 1.0, 0.01, Mann()).alpha_schedule_valid
    d = good.as_dict()
    assert d["passed"] and d["beta"] == pytest.approx(good.beta)


def test_schedule_checks():
    assert schedule_is_valid(Constant(0.5))
    assert schedule_is_valid(Mann())
    with pytest.raises(InvalidInputError):
        Constant(1.2)
    with pytest.raises(InvalidInputError):
        Constant(0.0)

    class Summable:
        divergent_sum = False

        def alpha(self, t):
            return 0.5**t

    class TooLarge:
        divergent_sum = True

        def alpha(self, t):
            return 1.5

    assert not schedule_is_valid(Summable())
    assert not schedule_is_valid(TooLarge())
