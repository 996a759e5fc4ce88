"""Ergodic constant and potential: vanishing discount and large-time limits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import mc_oracle
from .gcalculus import dissipativity_margin
from .models import ModelSpec
from .pde import Field, Grid, _guard, _Scheme, residual, solve_discounted


class LambdaHistoryError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


class HorizonError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class ErgodicProblem:
    model: ModelSpec
    gamma1: float = -1.0
    gamma2: float = 0.0

    def __post_init__(self):
        if self.model.drivers_use_y:
            raise ValueError("ergodic drivers f, g must not depend on y")
        if self.margin >= 0:
            raise ValueError(f"gamma1 + 2G(gamma2) = {self.margin:g} must be < 0")

    @property
    def margin(self) -> float:
        return dissipativity_margin(self.model.g_fun, self.gamma1, self.gamma2)

    @property
    def lambda_bound(self) -> float:
        """alpha / -(gamma1 + 2G(gamma2)), the bound on eps v^eps(0)."""
        return self.model.alpha / -self.margin


@dataclass(frozen=True)
class DiscountSchedule:
    eps_list: tuple

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_list)
        if len(eps) < 3:
            raise ValueError("a discount schedule needs at least 3 entries")
        if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("discount factors must be positive and strictly decreasing")
        object.__setattr__(self, "eps_list", eps)

    @classmethod
    def geometric(cls, eps0: float = 0.4, ratio: float = 0.5, count: int = 6) -> "DiscountSchedule":
        return cls(tuple(eps0 * ratio**k for k in range(count)))


@dataclass
class ErgodicSolution:
    lam: float
    v: Field
    lambda_history: list
    lipschitz_estimate: float
    residual_norm: float
    fit_residual: float = 0.0
    vbar: dict = field(default_factory=dict, repr=False)
    sup_v: dict = field(default_factory=dict, repr=False)
    lipschitz_by_eps: dict = field(default_factory=dict, repr=False)


def core_region(grid: Grid) -> tuple:
    """Middle half of the box, where truncation effects are negligible."""
    quarter = 0.25 * (grid.x_hi - grid.x_lo)
    return grid.x_lo + quarter, grid.x_hi - quarter


def _linear_intercept(eps, vals):
    A = np.vstack([np.ones(len(eps)), eps]).T
    coef, *_ = np.linalg.lstsq(A, np.asarray(vals, dtype=float), rcond=None)
    fit = A @ coef
    return coef[0], coef[1], float(np.max(np.abs(fit - vals)))


def ergodic_residual(p: ErgodicProblem, v: Field, lam: float) -> Field:
    return residual(p.model, v, lam, p.gamma1, p.gamma2)


def vanishing_discount(p: ErgodicProblem, sched: DiscountSchedule | None = None, grid: Grid | None = None,
                       tol: float = 1e-9, v_mode: str = "extrapolate") -> ErgodicSolution:
    """lambda = lim eps v^eps(0) and v = lim (v^eps - v^eps(0)).

    The limit of ``eps v^eps(0)`` is the intercept of a least-squares line
    through the last three schedule points.  ``v_mode="extrapolate"`` applies
    the same nodewise fit to the normalised potentials; ``"last"`` keeps the
    one at the smallest eps.
    """
    sched = sched or DiscountSchedule.geometric()
    if grid is None:
        raise ValueError("a grid is required")
    i0 = grid.index_of(0.0)
    if abs(grid.nodes[i0]) > 1e-12:
        raise ValueError("the grid must contain x = 0 as a node")
    history, vbars, sups, lips = [], {}, {}, {}
    prev = None
    for eps in sched.eps_list:
        init = None
        if prev is not None:
            lam_prev, vbar_prev = prev
            init = Field(vbar_prev.values + lam_prev / eps, grid)
        aug_bound = p.model.alpha / (-p.margin * eps)
        v_eps = solve_discounted(p.model, eps, p.gamma1, p.gamma2, grid,
                                 tol=tol * max(1.0, aug_bound), initial=init)
        v0 = float(v_eps.values[i0])
        vbar = Field(v_eps.values - v0, grid)
        history.append((eps, eps * v0))
        vbars[eps] = vbar
        sups[eps] = float(np.max(np.abs(v_eps.values)))
        lips[eps] = float(np.max(np.abs(np.diff(vbar.values)))) / grid.hx
        prev = (eps * v0, vbar)

    eps_tail = np.array([e for e, _ in history[-3:]])
    lam_tail = np.array([val for _, val in history[-3:]])
    diffs = np.diff([val for _, val in history])
    _check_history(history, diffs)
    lam, _, fit_res = _linear_intercept(eps_tail, lam_tail)
    if v_mode == "extrapolate":
        stack = np.stack([vbars[e].values for e in eps_tail])
        A = np.vstack([np.ones(3), eps_tail]).T
        coef, *_ = np.linalg.lstsq(A, stack, rcond=None)
        vals = coef[0] - coef[0][i0]
        v = Field(vals, grid)
    elif v_mode == "last":
        v = vbars[sched.eps_list[-1]]
    else:
        raise ValueError(f"unknown v_mode {v_mode!r}")
    res = ergodic_residual(p, v, lam)
    return ErgodicSolution(
        lam=float(lam),
        v=v,
        lambda_history=history,
        lipschitz_estimate=float(np.max(np.abs(np.diff(v.values))) / grid.hx),
        residual_norm=res.sup(core_region(grid)),
        fit_residual=fit_res,
        vbar=vbars,
        sup_v=sups,
        lipschitz_by_eps=lips,
    )


def _check_history(history, diffs, atol=1e-9):
    tail = diffs[-2:]
    if len(tail) == 2:
        same_sign = tail[0] * tail[1] >= -atol**2 or np.all(np.abs(tail) <= atol)
        shrinking = abs(tail[1]) <= 1.5 * abs(tail[0]) + atol
        if not (same_sign and shrinking):
            raise LambdaHistoryError(
                "eps * v^eps(0) is not settling (non-monotone or non-Cauchy tail): "
                + ", ".join(f"({e:g}, {v:.8g})" for e, v in history), history)


def implied_lambda(p: ErgodicProblem, v: Field, region: tuple | None = None) -> float:
    """The lambda making the mean ergodic residual over ``region`` vanish."""
    region = region or core_region(v.grid)

    def mean_res(lam):
        return float(np.mean(ergodic_residual(p, v, lam).restrict(region)))

    span = 10.0 * max(1.0, p.lambda_bound)
    return brentq(mean_res, -span, span, xtol=1e-14)


# --- large-time behaviour ------------------------------------------------

def march_horizons(m: ModelSpec, phi: Field, horizons, grid: Grid | None = None) -> list:
    """Parabolic solutions at time-to-go ``T`` for each ``T`` in ``horizons``.

    The coefficients are time-homogeneous, so one marching pass yields them
    all; each segment uses its own step count so every horizon is hit exactly.
    """
    grid = grid or phi.grid
    sch = _Scheme(m, grid)
    dt_req = sch.resolve_dt(grid.dt)
    out = []
    u = np.array(phi.values, dtype=float)
    t = 0.0
    for T in horizons:
        span = T - t
        if span < 0:
            raise ValueError("horizons must be increasing")
        if span > 0:
            steps = max(1, math.ceil(span / dt_req - 1e-9))
            guard = _guard(m, float(np.max(np.abs(phi.values))), T, sch)
            u = sch.march(u, span / steps, steps, guard=guard)
        out.append(Field(u, grid))
        t = T
    return out


@dataclass
class LargeTimeReport:
    lambda_est: float
    horizons: tuple
    values: tuple
    slopes: tuple
    errors: tuple
    C_est: tuple
    consistent: bool


def large_time(p: ErgodicProblem, phi: Field, T_list, x: float, grid: Grid | None = None,
               slope_tol: float = 0.05, fields: list | None = None) -> tuple:
    """Slope of ``u(T, x)`` over the two largest horizons, with the 1/T bound diagnostics."""
    if p.gamma1 != -1.0 or p.gamma2 != 0.0:
        raise ValueError("large_time needs gamma1 = -1 and gamma2 = 0")
    T_list = tuple(float(T) for T in T_list)
    if len(T_list) < 2 or any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise ValueError("T_list must hold at least two increasing horizons")
    if fields is None:
        fields = march_horizons(p.model, phi, T_list, grid)
    vals = tuple(fld(x) for fld in fields)
    slopes = tuple((vals[k + 1] - vals[k]) / (T_list[k + 1] - T_list[k]) for k in range(len(T_list) - 1))
    lam = slopes[-1]
    if len(slopes) >= 2 and abs(slopes[-1] - slopes[-2]) > slope_tol * max(1.0, abs(lam)):
        raise HorizonError("horizons too short: slope not yet stable "
                           + ", ".join(f"{s:.6g}" for s in slopes), slopes)
    errs = tuple(abs(v / T - lam) for v, T in zip(vals, T_list))
    C = tuple(e * T / (1.0 + abs(x)) for e, T in zip(errs, T_list))
    consistent = all(c <= 1.25 * C[0] + 1e-9 for c in C)
    rep = LargeTimeReport(lam, T_list, vals, slopes, errs, C, consistent)
    return lam, rep


@dataclass
class UniquenessReport:
    lambda_by_x: dict
    spread: float
    max_deviation: float
    shift_invariance_error: float
    agree: bool


def lambda_uniqueness_check(p: ErgodicProblem, sol: ErgodicSolution, x_list, T_list=(4.0, 8.0, 16.0),
                            phi: Field | None = None, tol: float = 0.02, shift: float = 5.0) -> UniquenessReport:
    grid = sol.v.grid
    phi = phi or Field.constant(0.0, grid)
    fields = march_horizons(p.model, phi, T_list, grid)
    lams = {}
    for x in x_list:
        lam, _ = large_time(p, phi, T_list, x, grid, fields=fields)
        lams[float(x)] = lam
    vals = np.array(list(lams.values()))
    r0 = ergodic_residual(p, sol.v, sol.lam).values
    r1 = ergodic_residual(p, sol.v.shifted(shift), sol.lam).values
    dev = float(np.max(np.abs(vals - sol.lam)))
    return UniquenessReport(lams, float(vals.max() - vals.min()), dev, float(np.max(np.abs(r1 - r0))),
                            dev <= tol * max(1.0, abs(sol.lam)))


# --- EBSDE identity along simulated paths ---------------------------------

def worst_case_feedback(p: ErgodicProblem, sol: ErgodicSolution):
    """State feedback v(x) selecting the maximiser of G(H(x)) nodewise."""
    sch = _Scheme(p.model, sol.v.grid)
    H, _, _ = sch.pieces(np.asarray(sol.v.values), upwind=False)
    H = H + 2.0 * p.gamma2 * sol.lam
    levels = p.model.g_fun.argmax(H)
    x = sol.v.x
    hx = sol.v.grid.hx
    x_lo = sol.v.grid.x_lo

    def feedback(state):
        i = np.clip(np.rint((np.asarray(state) - x_lo) / hx).astype(int), 0, len(x) - 1)
        return levels[i]

    return feedback


@dataclass
class BsdePathRecord:
    times: np.ndarray
    mean_K: np.ndarray
    K_T_mean: float
    K_T_std: float
    mc_band: float
    closure_error: float
    frac_K_T_nonpositive: float
    frac_mean_K_nonincreasing: float
    Y0: float
    Z0: float


def ebsde_verify(p: ErgodicProblem, sol: ErgodicSolution, scenario: "mc_oracle.Scenario", x0: float,
                 n_paths: int, seed: int, tol: float | None = None) -> BsdePathRecord:
    """Discrete K increments of ``Y = v(X)``, ``Z = sigma Dv(X)`` under one scenario."""
    m = p.model
    lo, hi = m.g_fun.interval.lo[0], m.g_fun.interval.hi[0]
    if scenario.feedback is None and (np.any(scenario.levels < lo - 1e-12) or np.any(scenario.levels > hi + 1e-12)):
        raise ValueError("scenario levels outside the uncertainty interval")
    pb = mc_oracle.simulate_forward(m, scenario, x0, n_paths, seed)
    v = sol.v
    X = pb.X[:, 0, :]
    Xc = np.clip(X, v.grid.x_lo, v.grid.x_hi)
    Y = np.interp(Xc, v.x, v.values)
    sig = m.diffusion(X[None, :-1].reshape(1, -1))[0, 0].reshape(X[:-1].shape)
    Z = sig * v.derivative(Xc[:-1])
    dt = pb.dt
    Xk = X[:-1][None, ...]
    zk = Z[None, ...]
    fval = np.broadcast_to(m.f(Xk, Y[:-1], zk), Z.shape)
    gval = np.broadcast_to(m.g(Xk, Y[:-1], zk), Z.shape)
    dK = (Y[1:] - Y[:-1] + (fval + p.gamma1 * sol.lam) * dt
          + (gval + p.gamma2 * sol.lam) * pb.dQ - Z * pb.dB)
    K = np.concatenate([np.zeros((1, X.shape[1])), np.cumsum(dK, axis=0)])
    mean_K = K.mean(axis=1)
    K_T = K[-1]
    band = 3.0 * float(K_T.std(ddof=1)) / math.sqrt(n_paths) if n_paths > 1 else 0.0
    tol = band if tol is None else tol
    T = pb.times[-1]
    return BsdePathRecord(
        times=pb.times,
        mean_K=mean_K,
        K_T_mean=float(K_T.mean()),
        K_T_std=float(K_T.std(ddof=1)) if n_paths > 1 else 0.0,
        mc_band=band,
        closure_error=abs(float(K_T.mean())) / T,
        frac_K_T_nonpositive=float(np.mean(K_T <= tol)),
        frac_mean_K_nonincreasing=float(np.mean(np.diff(mean_K) <= tol / max(1, len(mean_K) - 1) + 1e-15)),
        Y0=float(Y[0, 0]),
        Z0=float(Z[0, 0]),
    )


# --- Abelian-Tauberian comparison ----------------------------------------

@dataclass
class AbelianTauberianReport:
    discounted_limit: float
    time_average_limit: float
    discounted_history: list
    time_average_raw: float
    lam: float | None
    agree: bool
    rel_gap: float


def abelian_tauberian_check(p: ErgodicProblem, x: float, eps_list, T_list, grid: Grid,
                            lam: float | None = None, rtol: float = 0.02, tol: float = 1e-9) -> AbelianTauberianReport:
    """Discounted (eps -> 0) versus time-averaged (T -> oo) running costs at ``x``."""
    if p.model.drivers_use_z:
        raise ValueError("the Abelian-Tauberian comparison needs z-free drivers")
    hist = []
    init = None
    for eps in eps_list:
        v_eps = solve_discounted(p.model, eps, p.gamma1, p.gamma2, grid,
                                 tol=tol * max(1.0, p.model.alpha / (-p.margin * eps)), initial=init)
        hist.append((eps, eps * v_eps(x)))
        init = v_eps
    e_tail = np.array([e for e, _ in hist[-3:]])
    v_tail = np.array([v for _, v in hist[-3:]])
    disc, _, _ = _linear_intercept(e_tail, v_tail)
    fields = march_horizons(p.model, Field.constant(0.0, grid), T_list, grid)
    avg, _ = large_time(p, Field.constant(0.0, grid), T_list, x, grid, fields=fields)
    raw = fields[-1](x) / T_list[-1]
    ref = lam if lam is not None else avg
    gap = max(abs(disc - ref), abs(avg - ref)) / max(abs(ref), 1e-12)
    return AbelianTauberianReport(float(disc), float(avg), hist, float(raw), lam, gap <= rtol, float(gap))
