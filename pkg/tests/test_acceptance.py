"""The sixteen acceptance criteria, each printed as one PASS/FAIL line."""

import math

import numpy as np
import pytest

from acceptance_log import record
from gergodic.control import control_problem, evaluate_J, optimal_feedback, random_feedbacks
from gergodic.ergodic import (DiscountSchedule, ErgodicProblem, abelian_tauberian_check, large_time,
                              vanishing_discount)
from gergodic.gcalculus import UncertaintyInterval
from gergodic.mc_oracle import Lattice, LinearDriver, Scenario, lattice_value, linear_bsde_explicit, simulate_forward
from gergodic.models import AffineYDriver, control_from_dict
from gergodic.pde import Field, Grid, solve_finite_bsde, solve_infinite, solve_parabolic
from helpers import bench_config, bench_model, make_model
from oracles import LAMBDA_CLASSICAL_OU

H = 0.05
GRID = Grid(-8.0, 8.0, H)
LAT = Lattice(-8.0, 8.0, H)
SCHED = DiscountSchedule.geometric()
T_LIST = (4.0, 8.0, 16.0)
ZERO = Field.constant(0.0, GRID)
MONOTONE_OU = make_model(b="-x", f="-y + 1/(1+x^2)", mu=1.0, L=1.0, alpha=1.0, eta=1.0)


@pytest.fixture(scope="module")
def problems():
    return {name: ErgodicProblem(bench_model(name)) for name in ("constant", "ou", "ou_nonlinear")}


@pytest.fixture(scope="module")
def solutions(problems):
    return {name: vanishing_discount(p, SCHED, GRID) for name, p in problems.items()}


def test_criterion_01_g_heat():
    g = Grid(-8.0, 8.0, 0.02)
    m = make_model()
    up = solve_parabolic(m, Field.from_function(lambda x: x**2, g), 1.0).initial(0.0)
    dn = solve_parabolic(m, Field.from_function(lambda x: -x**2, g), 1.0).initial(0.0)
    ok = abs(up - 4.0) <= 0.02 * 4.0 and abs(dn + 1.0) <= 0.02 * 1.0
    record(1, "G-heat exactness", ok, f"u(0,0)={up:.6f} (4), {dn:.6f} (-1)")


def test_criterion_02_constant_driver(problems, solutions):
    lam_vd = solutions["constant"].lam
    lam_lt, _ = large_time(problems["constant"], ZERO, T_LIST, 0.0, GRID)
    ok = abs(lam_vd - 0.7) <= 1e-6 and abs(lam_lt - 0.7) <= 1e-6
    record(2, "constant-driver lambda", ok, f"vd={lam_vd:.10f} lt={lam_lt:.10f}")


def test_criterion_03_classical_reduction(solutions):
    lam = solutions["ou"].lam
    rel = abs(lam - LAMBDA_CLASSICAL_OU) / LAMBDA_CLASSICAL_OU
    record(3, "classical reduction vs quadrature", rel <= 0.01, f"lambda={lam:.6f} oracle={LAMBDA_CLASSICAL_OU:.6f} rel={rel:.2e}")


def _monotone_versions():
    out = {name: bench_model(name) for name in ("constant", "ou", "ou_nonlinear")}
    cfg = bench_config("control")
    c = control_from_dict(cfg["control"])
    out["control"] = control_problem(bench_model("control"), c).model
    return {k: m.replace(f=AffineYDriver(m.f, -1.0), mu=1.0) for k, m in out.items()}


def test_criterion_04_apriori_bound(solutions):
    tol = 1e-8
    worst = -math.inf
    details = []
    for name, m in _monotone_versions().items():
        u = solve_infinite(m, tol, GRID)
        slack = u.sup() - (m.alpha / m.mu + tol)
        worst = max(worst, slack)
        details.append(f"{name}:{u.sup():.4f}<={m.alpha / m.mu:.4f}")
    for name, sol in solutions.items():
        p = ErgodicProblem(bench_model(name))
        for eps in SCHED.eps_list:
            worst = max(worst, sol.sup_v[eps] - p.lambda_bound / eps * (1 + 1e-6))
    record(4, "a-priori bound sup|u| <= alpha/mu + tol", worst <= 0, " ".join(details))


def test_criterion_05_truncation_decay():
    m = MONOTONE_OU
    coarse = Grid(-8.0, 8.0, 2 * H)

    def u_at(n, grid):
        return solve_parabolic(m, Field.constant(0.0, grid), float(n), save_every=10**9).initial(0.0)

    ok = True
    parts = []
    for n, k in ((2, 4), (4, 8)):
        fine_n, fine_k = u_at(n, GRID), u_at(k, GRID)
        err = max(abs(fine_n - u_at(n, coarse)), abs(fine_k - u_at(k, coarse)))
        lhs = abs(fine_n - fine_k)
        rhs = (m.alpha / m.mu) * (math.exp(-m.mu * n) - math.exp(-m.mu * k)) + 3 * err
        ok &= lhs <= rhs
        parts.append(f"({n},{k}): {lhs:.3e} <= {rhs:.3e}")
    record(5, "truncation decay", ok, "; ".join(parts))


def test_criterion_06_discrete_comparison():
    rng = np.random.default_rng(2024)
    g = Grid(-6.0, 6.0, 0.1)
    tol = 1e-9
    violations = 0
    for _ in range(10):
        a, k, c, s = rng.uniform(-1, 1), rng.uniform(0.5, 3), rng.uniform(0, 1), rng.uniform(0, 0.4)
        d, w = rng.uniform(0, 0.5), rng.uniform(0.2, 2)
        base = f"-y + {a:.6f}*sin({k:.6f}*x) + {c:.6f}/(1+x^2) + {s:.6f}*tanh(z)"
        bump = f" + {d:.6f}*exp(-{w:.6f}*x^2)"
        kw = dict(b="-x", g="0.1*cos(x)", mu=1.0, L=3.0, alpha=3.0, alpha2=0.4)
        u1 = solve_infinite(make_model(f=base, **kw), tol, g)
        u2 = solve_infinite(make_model(f=base + bump, **kw), tol, g)
        violations += int(np.sum(u1.values > u2.values + tol))
    record(6, "discrete comparison", violations == 0, f"{violations} violations over 10 pairs")


def test_criterion_07_lipschitz(problems, solutions):
    M = problems["ou_nonlinear"].model.lipschitz_bound
    worst = max(solutions["ou_nonlinear"].lipschitz_by_eps.values())
    record(7, "Lipschitz bound", worst <= 1.1 * M, f"max sup|Dv_eps|={worst:.4f}, M={M:.4f}")


def test_criterion_08_discount_bound(problems, solutions):
    worst = 0.0
    for name, sol in solutions.items():
        b = problems[name].lambda_bound
        for eps in SCHED.eps_list:
            worst = max(worst, sol.sup_v[eps] / (b / eps))
    record(8, "discount bound", worst <= 1 + 1e-6, f"max sup|v_eps| / bound = {worst:.8f}")


def test_criterion_09_residual_convergence(problems, solutions):
    coarse = vanishing_discount(problems["ou_nonlinear"], SCHED, Grid(-8.0, 8.0, 2 * H))
    r1, r2 = coarse.residual_norm, solutions["ou_nonlinear"].residual_norm
    ratio = r2 / r1
    record(9, "residual convergence", 0.3 <= ratio <= 0.7, f"{r1:.3e} -> {r2:.3e}, ratio {ratio:.3f}")


def test_criterion_10_cross_method(problems, solutions):
    lam = solutions["ou_nonlinear"].lam
    lt, rep = large_time(problems["ou_nonlinear"], ZERO, T_LIST, 0.0, GRID)
    rel = abs(lt - lam) / abs(lam)
    ok = rel <= 0.02 and rep.consistent
    record(10, "cross-method lambda", ok, f"vd={lam:.6f} lt={lt:.6f} rel={rel:.2e} C_est={['%.4f' % c for c in rep.C_est]}")


def test_criterion_11_dual_solver():
    tol = 2 * (GRID.hx + LAT.dx)
    rows = []
    heat = make_model()
    phi = Field.from_function(lambda x: x**2, GRID)
    rows.append(("G-heat", solve_finite_bsde(heat, phi, 1.0, 0.0)[0], lattice_value(heat, "x^2", 1.0, LAT)(0.0)))
    ou = make_model(b="-x", f="1/(1+x^2)")
    rows.append(("OU", solve_finite_bsde(ou, ZERO, 2.0, 0.5)[0], lattice_value(ou, "0", 2.0, LAT)(0.5)))
    lin = make_model(f="-y", g="0.5*z", alpha2=0.5, L=1.0)
    y_lin = solve_finite_bsde(lin, phi, 1.0, 0.0)[0]
    rows.append(("linear", y_lin, lattice_value(lin, "x^2", 1.0, LAT)(0.0)))
    y_exp = linear_bsde_explicit(LinearDriver(a=-1.0, d=0.5, payoff="x^2"), 1.0, UncertaintyInterval(1.0, 4.0))
    ok = all(abs(a - b) <= tol for _, a, b in rows) and abs(y_lin - y_exp) <= tol
    detail = "; ".join(f"{n}: {a:.5f}/{b:.5f}" for n, a, b in rows) + f"; explicit {y_exp:.5f}; tol {tol:g}"
    record(11, "dual-solver agreement", ok, detail)


def test_criterion_12_abelian_tauberian(problems, solutions):
    gaps = {}
    for name, p in problems.items():
        rep = abelian_tauberian_check(p, 0.0, SCHED.eps_list, T_LIST, GRID, lam=solutions[name].lam)
        gaps[name] = rep.rel_gap
    ok = all(g <= 0.02 for g in gaps.values())
    record(12, "Abelian-Tauberian", ok, " ".join(f"{k}:{v:.2e}" for k, v in gaps.items()))


def test_criterion_13_control():
    cfg = bench_config("control")
    m = bench_model("control")
    c = control_from_dict(cfg["control"])
    sol = vanishing_discount(control_problem(m, c), SCHED, GRID)
    fb = optimal_feedback(c, sol, m, GRID)
    T = tuple(cfg["ergodic"]["T_list"])
    J_opt = evaluate_J(m, c, fb, 0.0, T, LAT).J
    J_rand = [evaluate_J(m, c, f, 0.0, T, LAT).J for f in random_feedbacks(c, GRID.nodes, 20, seed=0)]
    tol = 0.03 * abs(sol.lam)
    ok = J_opt - sol.lam <= tol and min(J_rand) >= sol.lam - tol
    record(13, "control optimality", ok, f"lambda={sol.lam:.5f} J*={J_opt:.5f} min J(random)={min(J_rand):.5f}")


def test_criterion_14_forward_contraction():
    eta = 0.5
    m = make_model(b="-x - 0.5*sin(x)", sigma="1", eta=eta)
    T, K = 2.0, 400
    dt = T / K
    x, xp = -0.5, 1.0
    scenarios = {
        "low": Scenario.constant(1.0, T, K),
        "high": Scenario.constant(4.0, T, K),
        "switching": Scenario.state_feedback(lambda s: np.where(np.sin(3 * s) > 0, 4.0, 1.0), T, K),
    }
    ok = True
    worst = 0.0
    for sc in scenarios.values():
        a = simulate_forward(m, sc, x, 20_000, seed=11)
        b = simulate_forward(m, sc, xp, 20_000, seed=11)
        for t in (1.0, 2.0):
            k = int(round(t / dt))
            msd = float(np.mean((a.X[k, 0] - b.X[k, 0]) ** 2))
            bound = math.exp(-2 * eta * t) * (x - xp) ** 2 * 1.05 + dt
            ok &= msd <= bound
            worst = max(worst, msd / bound)
    record(14, "forward contraction", ok, f"max E|dX|^2 / bound = {worst:.3f}")


def test_criterion_15_stability():
    delta, tol = 0.05, 1e-9
    pert = make_model(b="-x", f="-y + 1/(1+x^2) + 0.05*cos(x)", mu=1.0, L=1.0, alpha=1.05)
    u = solve_infinite(MONOTONE_OU, tol, GRID)
    v = solve_infinite(pert, tol, GRID)
    diff = float(np.max(np.abs(u.values - v.values)))
    record(15, "stability", diff <= delta / 1.0 + tol, f"sup|u_delta - u| = {diff:.5f} <= {delta}")


def test_criterion_16_flow_property():
    tol = 1e-10
    u = solve_infinite(MONOTONE_OU, tol, GRID)
    u_coarse = solve_infinite(MONOTONE_OU, tol, Grid(-8.0, 8.0, 2 * H))
    scheme_err = float(np.max(np.abs(u_coarse.values - u.values[::2])))
    tf = solve_parabolic(MONOTONE_OU, u, 2.0)
    drift = max(float(np.max(np.abs(s.values - u.values))) for s in tf.slices)
    record(16, "flow property", drift <= 2 * scheme_err, f"max slice deviation {drift:.2e}, scheme error {scheme_err:.2e}")
