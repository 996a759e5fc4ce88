"""Command-line orchestration of the solvers and oracles.

Usage: ``python -m gergodic <subcommand> --config PATH [--out DIR] ...``.
Every subcommand writes ``report.txt`` and ``results.csv`` (stage,
quantity, value) into the output directory plus stage-specific CSVs.
Exit status: 0 pass, 1 config error, 2 numerical failure, 3 acceptance
failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import control as ctl
from . import ergodic as erg
from . import mc_oracle as mc
from .config import ConfigError, config_hash, load_config, require
from .expression import Expression, ExpressionError, variable_names
from .models import check_assumptions, control_from_dict, model_from_dict
from .pde import Field, Grid, SolverError, solve_discounted, solve_finite_bsde, solve_infinite, solve_parabolic

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 1, 2, 3

SUBCOMMANDS = ("check", "parabolic", "elliptic", "discounted", "ergodic", "large-time", "oracle", "control",
               "verify", "report")


class RunReport:
    def __init__(self, cfg: dict, seed: int, subcommand: str):
        self.cfg_hash = config_hash(cfg)
        self.seed = seed
        self.subcommand = subcommand
        self.lines: list[str] = []
        self.rows: list[tuple] = []
        self.verdicts: list[tuple] = []
        self.timings: list[tuple] = []

    def value(self, stage: str, key: str, val) -> None:
        self.rows.append((stage, key, val))
        self.lines.append(f"  {key:<34s} {_fmt(val)}")

    def section(self, title: str) -> None:
        self.lines.append(f"[{title}]")

    def verdict(self, name: str, ok: bool, detail: str = "") -> None:
        self.verdicts.append((name, bool(ok), detail))

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.verdicts)

    def text(self) -> str:
        out = [f"subcommand: {self.subcommand}", f"config hash: {self.cfg_hash}", f"seed: {self.seed}", ""]
        out += self.lines
        if self.verdicts:
            out += ["", "[acceptance]"]
            out += [f"  {'PASS' if ok else 'FAIL'} {name}" + (f" ({d})" if d else "") for name, ok, d in self.verdicts]
        out += ["", f"overall: {'PASS' if self.passed else 'FAIL'}"]
        return "\n".join(out) + "\n"

    def write(self, out: Path) -> None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(self.text())
        with open(out / "results.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stage", "quantity", "value"])
            for stage, key, val in self.rows:
                w.writerow([stage, key, _fmt(val)])
        with open(out / "timings.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stage", "seconds"])
            for stage, sec in self.timings:
                w.writerow([stage, f"{sec:.3f}"])


def _fmt(val) -> str:
    if isinstance(val, (bool, np.bool_)):
        return str(bool(val)).lower()
    if isinstance(val, (float, np.floating)):
        return f"{float(val) + 0.0:.10g}"
    return str(val)


class Context:
    def __init__(self, cfg: dict, args):
        self.cfg = cfg
        self.args = args
        self.model = model_from_dict(cfg)
        gb = cfg.get("grid", {})
        hx = args.grid_h if args.grid_h is not None else float(gb.get("hx", 0.05))
        try:
            self.grid = Grid(float(gb.get("x_lo", -8.0)), float(gb.get("x_hi", 8.0)), hx,
                             dt=gb.get("dt"), boundary=gb.get("boundary", "linear-extrapolation"))
        except ValueError as exc:
            raise ConfigError(f"[grid]: {exc}") from None
        self.out = Path(args.out)
        self.seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        self.tol = args.tol
        self.expected = cfg.get("expected", {})
        self._ergodic = None

    def block(self, name: str) -> dict:
        if name not in self.cfg:
            raise ConfigError(f"missing [{name}] block required by this subcommand")
        return self.cfg[name]

    def problem(self) -> erg.ErgodicProblem:
        eb = self.cfg.get("ergodic", {})
        m = self.model
        if "control" in self.cfg:
            c = control_from_dict(self.cfg["control"], m.n, m.d)
            return ctl.control_problem(m, c, float(eb.get("gamma1", -1.0)))
        try:
            return erg.ErgodicProblem(m, float(eb.get("gamma1", -1.0)), float(eb.get("gamma2", 0.0)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def schedule(self) -> erg.DiscountSchedule:
        eb = self.cfg.get("ergodic", {})
        if "eps_list" in eb:
            return erg.DiscountSchedule(tuple(eb["eps_list"]))
        return erg.DiscountSchedule.geometric(float(eb.get("eps0", 0.4)), float(eb.get("ratio", 0.5)),
                                              int(eb.get("count", 6)))

    def horizons(self) -> tuple:
        return tuple(float(T) for T in self.cfg.get("ergodic", {}).get("T_list", (4.0, 8.0, 16.0)))

    def x_eval(self) -> float:
        return float(self.cfg.get("ergodic", {}).get("x", 0.0))

    def vd(self) -> erg.ErgodicSolution:
        if self._ergodic is None:
            kw = {} if self.tol is None else {"tol": self.tol}
            self._ergodic = erg.vanishing_discount(self.problem(), self.schedule(), self.grid, **kw)
        return self._ergodic

    def field_expr(self, text: str) -> Field:
        e = Expression(str(text), variable_names(n=1))
        return Field.from_function(lambda x: np.broadcast_to(e.bind(x=x[None, :]), x.shape), self.grid)


def _lambda_expected(ctx: Context, rep: RunReport, lam: float, label: str) -> None:
    ex = ctx.expected
    if "lambda" not in ex:
        return
    ref = float(ex["lambda"])
    tol = float(ex["lambda_atol"]) if "lambda_atol" in ex else float(ex.get("lambda_rtol", 0.01)) * abs(ref)
    rep.verdict(f"{label} lambda = {ref:.8g}", abs(lam - ref) <= tol, f"got {lam:.10g}, tol {tol:.3g}")


# --- stages -----------------------------------------------------------------

def stage_check(ctx: Context, rep: RunReport) -> None:
    rep.section("assumptions")
    ar = check_assumptions(ctx.model)
    for name, v in ar.verdicts.items():
        rep.value("check", f"{name} status", v.status)
        rep.value("check", f"{name} margin", v.margin)
    req = [k for k in ("B1", "B2", "B3", "B4", "B5") if k in ar.verdicts]
    rep.verdict("assumptions B1-B5 hold on sample", all(ar[k].holds for k in req))


def stage_parabolic(ctx: Context, rep: RunReport) -> None:
    pb = ctx.block("parabolic")
    T = float(require(pb, "T", "parabolic"))
    phi = ctx.field_expr(require(pb, "phi", "parabolic"))
    x0 = float(pb.get("x", 0.0))
    tf = solve_parabolic(ctx.model, phi, T, ctx.grid, save_every=pb.get("save_every"))
    tf.to_csv(ctx.out / "parabolic.csv")
    rep.section("parabolic")
    rep.value("parabolic", "T", T)
    rep.value("parabolic", "u(0,x)", tf.initial(x0))
    rep.value("parabolic", "steps", tf.meta["steps"])
    if "u0" in pb:
        ref = float(pb["u0"])
        tol = float(pb.get("rtol", 0.02)) * max(abs(ref), 1e-12)
        rep.verdict("parabolic u(0,x) matches expected", abs(tf.initial(x0) - ref) <= tol)


def stage_elliptic(ctx: Context, rep: RunReport) -> None:
    m = ctx.model
    if not m.mu > 0:
        raise ConfigError("elliptic needs a strictly monotone driver: set mu > 0 in [model]")
    tol = ctx.tol or 1e-8
    u = solve_infinite(m, tol, ctx.grid)
    u.to_csv(ctx.out / "elliptic.csv")
    rep.section("elliptic")
    rep.value("elliptic", "u(0)", u(0.0) if ctx.grid.contains(0.0) else float("nan"))
    rep.value("elliptic", "sup|u|", u.sup())
    rep.value("elliptic", "alpha/mu", m.apriori_bound)
    rep.value("elliptic", "unit horizons", u.meta["horizon"])
    rep.verdict("a-priori bound sup|u| <= alpha/mu + tol", u.sup() <= m.apriori_bound + tol)


def stage_discounted(ctx: Context, rep: RunReport) -> None:
    p = ctx.problem()
    sched = ctx.schedule()
    rep.section("discounted")
    init = None
    ok = True
    with open(ctx.out / "discounted.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "eps_v0", "sup_v", "bound"])
        for eps in sched.eps_list:
            kw = {} if ctx.tol is None else {"tol": ctx.tol}
            v = solve_discounted(p.model, eps, p.gamma1, p.gamma2, ctx.grid, initial=init, **kw)
            bound = p.lambda_bound / eps
            sup = v.sup()
            ok &= sup <= bound * (1 + 1e-6)
            w.writerow([_fmt(eps), _fmt(eps * v(0.0)), _fmt(sup), _fmt(bound)])
            rep.value("discounted", f"eps*v(0) at eps={eps:g}", eps * v(0.0))
            init = v
    rep.verdict("discount bound sup|v| <= alpha/(-margin eps)", ok)


def _write_history(path: Path, sol: erg.ErgodicSolution) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "eps_v0", "sup_v", "lipschitz"])
        for eps, val in sol.lambda_history:
            w.writerow([_fmt(eps), _fmt(val), _fmt(sol.sup_v[eps]), _fmt(sol.lipschitz_by_eps[eps])])


def stage_ergodic(ctx: Context, rep: RunReport) -> None:
    p = ctx.problem()
    sol = ctx.vd()
    _write_history(ctx.out / "lambda_history.csv", sol)
    sol.v.to_csv(ctx.out / "potential.csv")
    rep.section("ergodic (vanishing discount)")
    rep.value("ergodic", "lambda", sol.lam)
    rep.value("ergodic", "fit residual", sol.fit_residual)
    rep.value("ergodic", "residual norm (core)", sol.residual_norm)
    rep.value("ergodic", "lipschitz estimate", sol.lipschitz_estimate)
    rep.value("ergodic", "lipschitz bound M", p.model.lipschitz_bound)
    _lambda_expected(ctx, rep, sol.lam, "vanishing-discount")
    M = p.model.lipschitz_bound
    if np.isfinite(M) and p.model.L > 0:
        worst = max(sol.lipschitz_by_eps.values())
        rep.verdict("Lipschitz bound sup|Dv_eps| <= 1.1 M", worst <= 1.1 * M, f"{worst:.4g} vs M={M:.4g}")
    if p.gamma1 == -1.0 and p.gamma2 == 0.0:
        stage_large_time(ctx, rep, sol)


def stage_large_time(ctx: Context, rep: RunReport, sol: erg.ErgodicSolution | None = None) -> None:
    p = ctx.problem()
    T_list = ctx.horizons()
    x = ctx.x_eval()
    phi = ctx.field_expr(ctx.cfg.get("ergodic", {}).get("phi", "0"))
    lam, lt = erg.large_time(p, phi, T_list, x, ctx.grid)
    with open(ctx.out / "large_time.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T", "u", "abs_u_over_T_minus_lambda", "C_est"])
        for row in zip(lt.horizons, lt.values, lt.errors, lt.C_est):
            w.writerow([_fmt(v) for v in row])
    rep.section("large time")
    rep.value("large-time", "lambda", lam)
    rep.value("large-time", "C_est max", max(lt.C_est))
    rep.verdict("large-time error decays like 1/T", lt.consistent)
    if sol is None:
        _lambda_expected(ctx, rep, lam, "large-time")
        return
    if "lambda_atol" in ctx.expected or "lambda" in ctx.expected:
        _lambda_expected(ctx, rep, lam, "large-time")
    rtol = float(ctx.expected.get("cross_method_rtol", 0.02))
    gap = abs(lam - sol.lam) / max(abs(sol.lam), 1e-12)
    rep.value("large-time", "relative gap to vanishing discount", gap)
    rep.verdict("cross-method lambda agreement", gap <= rtol or abs(lam - sol.lam) <= 1e-6,
                f"gap {gap:.3g}, rtol {rtol:g}")


def stage_oracle(ctx: Context, rep: RunReport) -> None:
    ob = ctx.block("oracle")
    m = ctx.model
    T = float(ob.get("T", 1.0))
    K = int(ob.get("K", 4))
    M = int(ob.get("levels", 2))
    n_paths = int(ob.get("n_paths", 10000))
    payoff = str(ob.get("payoff", "x^2"))
    x0 = float(ob.get("x0", 0.0))
    res = mc.upper_expectation_scenarios(m, payoff, T, K, M, x0, n_paths, ctx.seed, details=True)
    lat = mc.Lattice(ctx.grid.x_lo, ctx.grid.x_hi, ctx.grid.hx)
    lv = mc.lattice_value(m, payoff, T, lat, driver=False)(x0)
    pb = mc.simulate_forward(m, mc.Scenario(res.levels, T), x0, min(n_paths, 50), ctx.seed)
    pb.to_csv(ctx.out / "paths.csv")
    rep.section("oracle")
    rep.value("oracle", "open-loop max", res.value)
    rep.value("oracle", "open-loop stderr", res.stderr)
    rep.value("oracle", "open-loop maximiser", " ".join(f"{v:g}" for v in res.levels))
    rep.value("oracle", "lattice (adapted) value", lv)
    bias = 2.0 * ctx.grid.hx
    rep.verdict("open-loop <= adapted", res.value <= lv + 3.0 * res.stderr + bias)


def stage_control(ctx: Context, rep: RunReport) -> None:
    m = ctx.model
    c = control_from_dict(ctx.block("control"), m.n, m.d)
    sol = ctx.vd()
    fb = ctl.optimal_feedback(c, sol, m, ctx.grid)
    fb.to_csv(ctx.out / "feedback.csv")
    x = ctx.x_eval()
    T_list = ctx.horizons()
    lat = mc.Lattice(ctx.grid.x_lo, ctx.grid.x_hi, ctx.grid.hx)
    est = ctl.evaluate_J(m, c, fb, x, T_list, lat, lam=sol.lam)
    rtol = float(ctx.expected.get("control_rtol", 0.03))
    tol = rtol * max(abs(sol.lam), 1e-12)
    n_rand = int(ctx.cfg["control"].get("n_random", 20))
    Js = [ctl.evaluate_J(m, c, f, x, T_list, lat).J for f in ctl.random_feedbacks(c, ctx.grid.nodes, n_rand, ctx.seed)]
    rep.section("control")
    rep.value("control", "lambda", sol.lam)
    rep.value("control", "J(u*)", est.J)
    rep.value("control", "J(u*) - lambda", est.gap)
    rep.value("control", "min J over random feedbacks", min(Js))
    rep.value("control", "hamiltonian gap", ctl.hamiltonian_gap(c, fb, sol, m))
    rep.verdict("optimal feedback attains lambda", abs(est.gap) <= tol, f"tol {tol:.3g}")
    rep.verdict("random feedbacks bounded below by lambda", min(Js) >= sol.lam - tol)


def stage_verify(ctx: Context, rep: RunReport) -> None:
    p = ctx.problem()
    m = p.model
    sol = ctx.vd()
    x = ctx.x_eval()
    T_list = ctx.horizons()
    lam_lt, _ = erg.large_time(p, Field.constant(0.0, ctx.grid), T_list, x, ctx.grid) \
        if (p.gamma1 == -1.0 and p.gamma2 == 0.0) else (float("nan"), None)
    lam_res = erg.implied_lambda(p, sol.v)
    rtol = float(ctx.expected.get("cross_method_rtol", 0.02))
    rep.section("dual-method lambda")
    rep.value("verify", "lambda vanishing discount", sol.lam)
    rep.value("verify", "lambda large time", lam_lt)
    rep.value("verify", "lambda implied by residual", lam_res)
    scale = max(abs(sol.lam), 1e-12)
    for name, other in (("large time", lam_lt), ("residual", lam_res)):
        if np.isfinite(other):
            ok = abs(other - sol.lam) <= max(rtol * scale, 1e-6)
            rep.verdict(f"lambda: vanishing discount vs {name}", ok)

    rep.section("dual-solver finite horizon")
    lat = mc.Lattice(ctx.grid.x_lo, ctx.grid.x_hi, ctx.grid.hx)
    T = float(ctx.cfg.get("verify", {}).get("T", 2.0))
    zero = Field.constant(0.0, ctx.grid)
    y_pde, _ = solve_finite_bsde(m, zero, T, x, ctx.grid)
    y_lat = mc.lattice_value(m, "0", T, lat)(x)
    tol = 2.0 * (ctx.grid.hx + lat.dx)
    rep.value("verify", "finite-horizon Y0 (pde)", y_pde)
    rep.value("verify", "finite-horizon Y0 (lattice)", y_lat)
    rep.verdict("pde vs lattice finite-horizon value", abs(y_pde - y_lat) <= tol, f"tol {tol:.3g}")

    if not m.drivers_use_z:
        at = erg.abelian_tauberian_check(p, x, ctx.schedule().eps_list, T_list, ctx.grid, lam=sol.lam)
        rep.value("verify", "discounted functional limit", at.discounted_limit)
        rep.value("verify", "time-average limit", at.time_average_limit)
        rep.verdict("discounted vs time-averaged functionals", at.agree, f"gap {at.rel_gap:.3g}")

    rep.section("EBSDE along paths")
    fbk = erg.worst_case_feedback(p, sol)
    n_paths = int(ctx.cfg.get("verify", {}).get("n_paths", 5000))
    rec = erg.ebsde_verify(p, sol, mc.Scenario.state_feedback(fbk, 2.0, 200), x, n_paths, ctx.seed)
    rep.value("verify", "worst-case mean K_T", rec.K_T_mean)
    rep.value("verify", "worst-case closure error per unit time", rec.closure_error)
    rep.value("verify", "MC band", rec.mc_band)


STAGES = {
    "check": [stage_check],
    "parabolic": [stage_parabolic],
    "elliptic": [stage_elliptic],
    "discounted": [stage_discounted],
    "ergodic": [stage_ergodic],
    "large-time": [stage_large_time],
    "oracle": [stage_oracle],
    "control": [stage_control],
    "verify": [stage_verify],
}


def _report_stages(cfg: dict) -> list:
    stages = [stage_check, stage_ergodic]
    if "oracle" in cfg:
        stages.append(stage_oracle)
    if "control" in cfg:
        stages.append(stage_control)
    return stages


NUMERICAL_ERRORS = (SolverError, mc.OracleError, erg.LambdaHistoryError, erg.HorizonError, ArithmeticError,
                    FloatingPointError, NotImplementedError)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gergodic", description="Ergodic G-BSDE solvers and oracles")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="TOML or JSON run configuration")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--grid-h", type=float, default=None, dest="grid_h", help="override the grid spacing")
        sp.add_argument("--tol", type=float, default=None, help="override the solver tolerance")
        sp.add_argument("--quiet", action="store_true")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    say = (lambda *a: None) if args.quiet else (lambda *a: print(*a, file=sys.stderr))
    try:
        cfg = load_config(args.config)
        ctx = Context(cfg, args)
    except (ConfigError, ExpressionError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rep = RunReport(cfg, ctx.seed, args.subcommand)
    stages = _report_stages(cfg) if args.subcommand == "report" else STAGES[args.subcommand]
    ctx.out.mkdir(parents=True, exist_ok=True)
    for stage in stages:
        name = stage.__name__.removeprefix("stage_")
        t0 = time.perf_counter()
        try:
            stage(ctx, rep)
        except (ConfigError, ExpressionError) as exc:
            print(f"config error in stage {name}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except NUMERICAL_ERRORS as exc:
            print(f"numerical failure in stage {name}: {type(exc).__name__}: {exc}", file=sys.stderr)
            rep.write(ctx.out)
            return EXIT_NUMERICAL
        rep.timings.append((name, time.perf_counter() - t0))
        say(f"{name}: done in {rep.timings[-1][1]:.1f}s")
    rep.write(ctx.out)
    if not args.quiet:
        print(rep.text(), end="")
    return EXIT_OK if rep.passed else EXIT_ACCEPTANCE


def main() -> None:
    sys.exit(run())
