import numpy as np
import pytest

from gergodic.control import (FeedbackTable, control_problem, evaluate_J, hamiltonian_gap, optimal_feedback,
                              random_feedbacks)
from gergodic.ergodic import DiscountSchedule, ErgodicSolution, vanishing_discount
from gergodic.mc_oracle import Lattice
from gergodic.models import control_from_dict
from gergodic.pde import Field, Grid
from helpers import bench_config, bench_model, make_model

GRID = Grid(-8.0, 8.0, 0.1)
LAT = Lattice(-8.0, 8.0, 0.1)


@pytest.fixture(scope="module")
def bench():
    cfg = bench_config("control")
    m = bench_model("control")
    c = control_from_dict(cfg["control"])
    sol = vanishing_discount(control_problem(m, c), DiscountSchedule.geometric(), GRID)
    return m, c, sol


def _fake_solution(values):
    v = Field(values, GRID)
    return ErgodicSolution(0.0, v, [], 0.0, 0.0)


def test_singleton_gives_constant_feedback():
    c = control_from_dict({"U": [0.3], "kappa": "x^2", "R": "u"})
    fb = optimal_feedback(c, _fake_solution(np.sin(GRID.nodes)), make_model(), GRID)
    assert np.all(fb.u_index == 0)


def test_sign_selection():
    c = control_from_dict({"U": [-1.0, 1.0], "kappa": "0", "R": "u"})
    fb = optimal_feedback(c, _fake_solution(np.sin(GRID.nodes)), make_model(), GRID)
    Z = np.cos(GRID.nodes)
    strict = np.abs(Z) > 1e-2
    np.testing.assert_array_equal(fb.values()[strict, 0], -np.sign(Z[strict]))


def test_five_point_direct_argmin():
    rng = np.random.default_rng(11)
    U = rng.normal(size=5)
    a, b = (float(t) for t in rng.normal(size=2))
    c = control_from_dict({"U": U.tolist(), "kappa": f"{a!r}*u^2 + x*u", "R": f"{b!r}*u"})
    vals = 0.7 * GRID.nodes**2
    fb = optimal_feedback(c, _fake_solution(vals), make_model(), GRID)
    j = GRID.index_of(0.4)
    z = Field(vals, GRID).derivative(0.4, step=GRID.hx)
    brute = int(np.argmin([a * u * u + 0.4 * u + b * u * z for u in U]))
    assert fb.u_index[j] == brute


def test_constant_cost():
    c = control_from_dict({"U": [-1.0, 1.0], "kappa": "0.4", "R": "0.5*u"})
    m = make_model(b="-x", alpha2=0.5)
    for idx in (0, 1):
        fb = FeedbackTable(GRID.nodes, np.full(GRID.n_nodes, idx), c.U)
        assert evaluate_J(m, c, fb, 0.0, (4.0, 8.0), LAT).J == pytest.approx(0.4, rel=1e-10)


def test_optimal_attains_lambda(bench):
    m, c, sol = bench
    fb = optimal_feedback(c, sol, m, GRID)
    assert hamiltonian_gap(c, fb, sol, m) == 0.0
    est = evaluate_J(m, c, fb, 0.0, (8.0, 16.0), LAT, lam=sol.lam)
    assert abs(est.gap) <= 0.03 * abs(sol.lam)


def test_perturbed_feedback_not_below_lambda(bench):
    m, c, sol = bench
    fb = optimal_feedback(c, sol, m, GRID)
    flipped = fb.u_index.copy()
    flipped[::2] = 1 - flipped[::2]
    J = evaluate_J(m, c, FeedbackTable(GRID.nodes, flipped, c.U), 0.0, (8.0, 16.0), LAT).J
    assert J >= sol.lam - 0.03 * abs(sol.lam)
    for f in random_feedbacks(c, GRID.nodes, 4, seed=2):
        assert evaluate_J(m, c, f, 0.0, (8.0, 16.0), LAT).J >= sol.lam - 0.03 * abs(sol.lam)


def test_feedback_csv(tmp_path):
    c = control_from_dict({"U": [-1.0, 1.0], "kappa": "0", "R": "u"})
    fb = FeedbackTable(np.array([0.0, 0.5, 1.0]), np.array([0, 1, 1]), c.U)
    fb.to_csv(tmp_path / "fb.csv")
    text = (tmp_path / "fb.csv").read_text().splitlines()
    assert text[0] == "x,u_index,u_value" and text[2] == "0.5,1,1.0"
    back = FeedbackTable.from_csv(tmp_path / "fb.csv", c.U)
    np.testing.assert_array_equal(back.u_index, fb.u_index)
    np.testing.assert_array_equal(fb.index_at(np.array([0.1, 0.3, 7.0])), [0, 1, 1])


def test_table_validation():
    with pytest.raises(ValueError):
        FeedbackTable(np.zeros(3), np.array([0, 2, 0]), np.array([[0.0], [1.0]]))
