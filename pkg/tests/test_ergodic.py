import math

import numpy as np
import pytest

from gergodic.ergodic import (DiscountSchedule, ErgodicProblem, HorizonError, LambdaHistoryError,
                              _check_history, abelian_tauberian_check, ebsde_verify, implied_lambda, large_time,
                              lambda_uniqueness_check, vanishing_discount, worst_case_feedback)
from gergodic.mc_oracle import Scenario
from gergodic.pde import Field, Grid
from oracles import LAMBDA_CLASSICAL_OU
from helpers import bench_model, make_model

GRID = Grid(-8.0, 8.0, 0.1)
SCHED = DiscountSchedule.geometric()


@pytest.fixture(scope="module")
def const_problem():
    return ErgodicProblem(bench_model("constant"))


@pytest.fixture(scope="module")
def ou_problem():
    return ErgodicProblem(bench_model("ou"))


@pytest.fixture(scope="module")
def nl_problem():
    return ErgodicProblem(bench_model("ou_nonlinear"))


@pytest.fixture(scope="module")
def nl_solution(nl_problem):
    return vanishing_discount(nl_problem, SCHED, GRID)


def test_problem_validation():
    with pytest.raises(ValueError, match="must be < 0"):
        ErgodicProblem(bench_model("constant"), -1.0, 1.0)
    with pytest.raises(ValueError, match="y"):
        ErgodicProblem(make_model(f="-y"))


def test_schedule():
    assert DiscountSchedule.geometric().eps_list == (0.4, 0.2, 0.1, 0.05, 0.025, 0.0125)
    with pytest.raises(ValueError):
        DiscountSchedule((0.4, 0.2))
    with pytest.raises(ValueError):
        DiscountSchedule((0.4, 0.5, 0.1))


def test_constant_driver(const_problem):
    sol = vanishing_discount(const_problem, SCHED, GRID)
    assert sol.lam == pytest.approx(0.7, abs=1e-6)
    assert np.max(np.abs(sol.v.values)) <= 1e-9
    assert sol.v(0.0) == 0.0
    assert sol.residual_norm <= 1e-8
    lam, rep = large_time(const_problem, Field.constant(0.0, GRID), (4.0, 8.0, 16.0), 0.0, GRID)
    assert lam == pytest.approx(0.7, abs=1e-6)
    assert rep.values[-1] == pytest.approx(0.7 * 16.0, rel=1e-9)


def test_classical_reduction(ou_problem):
    sol = vanishing_discount(ou_problem, SCHED, GRID)
    assert sol.lam == pytest.approx(LAMBDA_CLASSICAL_OU, rel=0.01)
    assert sol.v.values[GRID.index_of(0.0)] == 0.0
    lam, _ = large_time(ou_problem, Field.constant(0.0, GRID), (4.0, 8.0, 16.0), 0.0, GRID)
    assert lam == pytest.approx(LAMBDA_CLASSICAL_OU, rel=0.01)


def test_initial_condition_forgotten(ou_problem):
    a, _ = large_time(ou_problem, Field.constant(0.0, GRID), (4.0, 8.0, 16.0), 0.0, GRID)
    phi = Field.from_function(lambda x: np.clip(x, -1, 1), GRID)
    b, _ = large_time(ou_problem, phi, (4.0, 8.0, 16.0), 0.0, GRID)
    assert a == pytest.approx(b, abs=1e-4)


def test_short_horizons_rejected(nl_problem):
    with pytest.raises(HorizonError):
        large_time(nl_problem, Field.from_function(lambda x: 3 * np.cos(x), GRID), (0.1, 0.2, 0.4), 0.0, GRID)
    with pytest.raises(ValueError):
        large_time(ErgodicProblem(bench_model("ou"), -2.0, 0.0), Field.constant(0.0, GRID), (1, 2), 0.0, GRID)


def test_history_check():
    _check_history([(0.4, 1.0), (0.2, 0.9), (0.1, 0.85)], np.diff([1.0, 0.9, 0.85]))
    with pytest.raises(LambdaHistoryError):
        _check_history([(0.4, 1.0), (0.2, 0.9), (0.1, 1.0)], np.diff([1.0, 0.9, 1.0]))
    with pytest.raises(LambdaHistoryError):
        _check_history([(0.4, 1.0), (0.2, 0.99), (0.1, 0.9)], np.diff([1.0, 0.99, 0.9]))


def test_nonlinear_bounds(nl_problem, nl_solution):
    sol = nl_solution
    bound = nl_problem.lambda_bound
    for eps, val in sol.lambda_history:
        assert abs(val) <= bound + 1e-9
        assert sol.sup_v[eps] <= bound / eps * (1 + 1e-6)
    M = nl_problem.model.lipschitz_bound
    assert max(sol.lipschitz_by_eps.values()) <= 1.1 * M
    assert sol.lipschitz_estimate <= 1.1 * M


def test_three_lambdas_agree(nl_problem, nl_solution):
    lt, _ = large_time(nl_problem, Field.constant(0.0, GRID), (4.0, 8.0, 16.0), 0.0, GRID)
    res = implied_lambda(nl_problem, nl_solution.v)
    assert lt == pytest.approx(nl_solution.lam, rel=0.02)
    assert res == pytest.approx(nl_solution.lam, rel=0.02)
    # uncertainty raises the long-run cost of a convex-ish running cost above the classical value
    assert nl_solution.lam > LAMBDA_CLASSICAL_OU - 0.01


def test_uniqueness_check(nl_problem, nl_solution):
    rep = lambda_uniqueness_check(nl_problem, nl_solution, (-1.0, 0.0, 1.0))
    assert rep.agree
    assert rep.spread <= 1e-4
    assert rep.shift_invariance_error <= 1e-10


def test_ebsde_constant_driver(const_problem):
    sol = vanishing_discount(const_problem, SCHED, GRID)
    rec = ebsde_verify(const_problem, sol, Scenario.constant(2.0, 1.0, 50), 0.0, 200, 0)
    assert np.max(np.abs(rec.mean_K)) <= 1e-9


def test_ebsde_worst_case_and_suboptimal(nl_problem, nl_solution):
    fb = worst_case_feedback(nl_problem, nl_solution)
    worst = ebsde_verify(nl_problem, nl_solution, Scenario.state_feedback(fb, 2.0, 200), 0.0, 4000, 3)
    # the potential is concave near 0, where the maximiser is the low level; force the high one
    high = ebsde_verify(nl_problem, nl_solution, Scenario.constant(4.0, 2.0, 200), 0.0, 4000, 3)
    # under the maximising scenario K has no drift beyond discretisation error; off it, K decreases
    assert abs(worst.K_T_mean) <= 0.01 * 2.0 + 3 * worst.mc_band
    assert high.mean_K[-1] < -10 * high.mc_band
    assert np.all(np.diff(high.mean_K) <= 1e-3)
    with pytest.raises(ValueError):
        ebsde_verify(nl_problem, nl_solution, Scenario.constant(5.0, 1.0, 10), 0.0, 10, 0)


def test_abelian_tauberian(ou_problem):
    rep = abelian_tauberian_check(ou_problem, 0.0, SCHED.eps_list, (4.0, 8.0, 16.0), GRID, lam=LAMBDA_CLASSICAL_OU)
    assert rep.agree
    with pytest.raises(ValueError):
        abelian_tauberian_check(ErgodicProblem(make_model(b="-x", f="0.1*sin(z)", alpha2=0.1)), 0.0,
                                SCHED.eps_list, (4.0, 8.0), GRID)
