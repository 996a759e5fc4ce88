"""Monotone explicit finite differences for the G-heat-type equations.

All equations share the spatial operator

    F[u](x) = G(H) + b(x) Du + f(x, u, sigma(x) Du),
    H       = sigma(x)^2 D2u + 2 h(x) Du + 2 g(x, u, sigma(x) Du),

discretised with central second differences, upwind first differences for
the ``b`` and ``h`` terms and a central difference for the ``z`` argument of
the drivers.  The parabolic problem ``u_t + F[u] = 0, u(T) = phi`` is
marched backwards with explicit Euler steps; elliptic and discounted
problems are its stationary limits.  The state space is one-dimensional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gcalculus import dissipativity_margin
from .models import AffineYDriver, ModelSpec

BOUNDARY_POLICIES = ("linear-extrapolation", "clamped-gradient")
CFL_SAFETY = 0.95


class SolverError(RuntimeError):
    pass


class CFLError(SolverError):
    pass


class BlowUpError(SolverError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = list(history)


class InfeasibleWeightingError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    x_lo: float
    x_hi: float
    hx: float
    dt: float | None = None
    boundary: str = "linear-extrapolation"

    def __post_init__(self):
        if not self.x_hi > self.x_lo:
            raise ValueError("need x_hi > x_lo")
        if not self.hx > 0:
            raise ValueError("need hx > 0")
        cells = (self.x_hi - self.x_lo) / self.hx
        if abs(cells - round(cells)) > 1e-8 * max(1.0, cells):
            raise ValueError(f"domain length {self.x_hi - self.x_lo} is not a multiple of hx={self.hx}")
        if round(cells) < 4:
            raise ValueError("grid needs at least 5 nodes")
        if self.boundary not in BOUNDARY_POLICIES:
            raise ValueError(f"unknown boundary policy {self.boundary!r}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("need dt > 0")

    @classmethod
    def around(cls, x_eval: float, eta: float, hx: float, **kw) -> "Grid":
        """Symmetric box of half-width max(8/eta, 4)(1 + |x_eval|), snapped to hx."""
        half = max(8.0 / eta if eta > 0 else 8.0, 4.0) * (1.0 + abs(x_eval))
        half = math.ceil(half / hx - 1e-9) * hx
        return cls(-half, half, hx, **kw)

    @property
    def n_nodes(self) -> int:
        return int(round((self.x_hi - self.x_lo) / self.hx)) + 1

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n_nodes)

    def with_(self, **changes) -> "Grid":
        return Grid(**{**self.__dict__, **changes})

    def index_of(self, x: float) -> int:
        i = int(round((x - self.x_lo) / self.hx))
        if not 0 <= i < self.n_nodes:
            raise DomainError(f"x={x} outside [{self.x_lo}, {self.x_hi}]")
        return i

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= self.x_lo - 1e-12) & (x <= self.x_hi + 1e-12)))

    def max_stable_dt(self, m: ModelSpec) -> float:
        return _Scheme(m, self).dt_max

    def check_cfl(self, m: ModelSpec, dt: float | None = None) -> float:
        """Return the time step to use, raising :class:`CFLError` if monotonicity would fail."""
        return _Scheme(m, self).resolve_dt(dt if dt is not None else self.dt)


@dataclass(frozen=True)
class Field:
    values: np.ndarray
    grid: Grid
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.n_nodes,):
            raise ValueError(f"expected {self.grid.n_nodes} values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, fn, grid: Grid) -> "Field":
        return cls(np.broadcast_to(np.asarray(fn(grid.nodes), dtype=float), (grid.n_nodes,)), grid)

    @classmethod
    def constant(cls, c: float, grid: Grid) -> "Field":
        return cls(np.full(grid.n_nodes, float(c)), grid)

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    def __call__(self, x):
        """Linear interpolation; raises :class:`DomainError` outside the grid."""
        if not self.grid.contains(x):
            raise DomainError(f"evaluation point(s) outside [{self.grid.x_lo}, {self.grid.x_hi}]")
        out = np.interp(x, self.x, self.values)
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, x, step: float | None = None):
        """Central difference of the interpolant with half-width ``step`` (default hx)."""
        s = self.grid.hx if step is None else step
        x = np.asarray(x, dtype=float)
        lo = np.clip(x - s, self.grid.x_lo, self.grid.x_hi)
        hi = np.clip(x + s, self.grid.x_lo, self.grid.x_hi)
        out = (np.interp(hi, self.x, self.values) - np.interp(lo, self.x, self.values)) / (hi - lo)
        return float(out) if out.ndim == 0 else out

    def gradient(self) -> np.ndarray:
        """Nodal central differences (one-sided at the ends)."""
        return np.gradient(self.values, self.grid.hx)

    def hessian(self) -> np.ndarray:
        ue = _extend(self.values, self.grid.boundary)
        return (ue[2:] - 2.0 * ue[1:-1] + ue[:-2]) / self.grid.hx**2

    def sup(self, region: tuple | None = None) -> float:
        return float(np.max(np.abs(self.restrict(region))))

    def restrict(self, region: tuple | None) -> np.ndarray:
        if region is None:
            return self.values
        lo, hi = region
        mask = (self.x >= lo - 1e-12) & (self.x <= hi + 1e-12)
        return self.values[mask]

    def shifted(self, c: float) -> "Field":
        return Field(self.values + c, self.grid)

    def to_csv(self, path) -> None:
        g = self.grid
        lines = [f"# grid {g.x_lo!r} {g.x_hi!r} {g.hx!r}"]
        lines += [f"{x!r},{u!r}" for x, u in zip(self.x.tolist(), self.values.tolist())]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path, boundary: str = "linear-extrapolation") -> "Field":
        text = Path(path).read_text().splitlines()
        _, _, lo, hi, hx = text[0].split()[:5]
        grid = Grid(float(lo), float(hi), float(hx), boundary=boundary)
        vals = np.array([float(line.split(",")[1]) for line in text[1:] if line.strip()])
        return cls(vals, grid)


@dataclass(frozen=True)
class TimeField:
    times: np.ndarray
    slices: tuple
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or len(times) != len(self.slices):
            raise ValueError("times and slices must have equal length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "slices", tuple(self.slices))

    @property
    def grid(self) -> Grid:
        return self.slices[0].grid

    @property
    def initial(self) -> Field:
        return self.slices[0]

    @property
    def terminal(self) -> Field:
        return self.slices[-1]

    def at(self, t: float) -> Field:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no stored slice at t={t}")
        return self.slices[k]

    def to_csv(self, path) -> None:
        g = self.grid
        lines = [f"# grid {g.x_lo!r} {g.x_hi!r} {g.hx!r} t"]
        for t, sl in zip(self.times.tolist(), self.slices):
            lines += [f"{x!r},{t!r},{u!r}" for x, u in zip(sl.x.tolist(), sl.values.tolist())]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path, boundary: str = "linear-extrapolation") -> "TimeField":
        text = Path(path).read_text().splitlines()
        _, _, lo, hi, hx = text[0].split()[:5]
        grid = Grid(float(lo), float(hi), float(hx), boundary=boundary)
        rows = np.array([[float(v) for v in line.split(",")] for line in text[1:] if line.strip()])
        times = np.unique(rows[:, 1])
        slices = [Field(rows[rows[:, 1] == t, 2], grid) for t in times]
        return cls(times, slices)


@dataclass(frozen=True)
class PointwiseOperator:
    H: np.ndarray
    drift_term: float
    driver_term: float
    total: float


def _extend(u: np.ndarray, boundary: str) -> np.ndarray:
    ue = np.empty(u.shape[0] + 2)
    ue[1:-1] = u
    if boundary == "linear-extrapolation":
        ue[0] = 2.0 * u[0] - u[1]
        ue[-1] = 2.0 * u[-1] - u[-2]
    else:
        ue[0] = u[0]
        ue[-1] = u[-1]
    return ue


def _split_driver(drv):
    """Peel affine-in-y wrappers: returns (base, total y-coefficient)."""
    coef = 0.0
    while isinstance(drv, AffineYDriver):
        coef += drv.coef
        drv = drv.base
    return drv, coef


class _Scheme:
    """Precomputed coefficients of the discrete operator on one grid."""

    def __init__(self, m: ModelSpec, grid: Grid):
        if m.n != 1:
            raise NotImplementedError("the finite-difference solver handles n = 1 only")
        self.m = m
        self.grid = grid
        x = grid.nodes
        self.x = x
        X = x[None, :]
        self.X = X
        self.b = m.drift(X)[0]
        self.h = m.qv_drift(X)[0]
        self.sig = m.diffusion(X)[0, 0]
        self.s2 = self.sig**2
        self.b_pos, self.b_neg = np.maximum(self.b, 0.0), np.minimum(self.b, 0.0)
        self.h_pos, self.h_neg = np.maximum(self.h, 0.0), np.minimum(self.h, 0.0)
        self.lo = m.g_fun.interval.lo[0]
        self.hi = m.g_fun.interval.hi[0]
        self.boundary = grid.boundary
        hx = grid.hx
        self.hx = hx

        self.f_base, self.f_coef = _split_driver(m.f)
        self.g_base, self.g_coef = _split_driver(m.g)
        zero = np.zeros_like(x)
        zz = zero[None, :]
        self.f_static = None if (self.f_base.uses_y or self.f_base.uses_z) else \
            np.broadcast_to(self.f_base(X, zero, zz), x.shape).copy()
        self.g_static = None if (self.g_base.uses_y or self.g_base.uses_z) else \
            np.broadcast_to(self.g_base(X, zero, zz), x.shape).copy()
        self.uses_z = bool(self.f_base.uses_z or self.g_base.uses_z)
        # driver size at (y, z) = 0 on the nodes; backs up an undeclared alpha in the blow-up guard
        f0 = np.broadcast_to(self.f_base(X, zero, zz), x.shape)
        g0 = np.broadcast_to(self.g_base(X, zero, zz), x.shape)
        self.alpha_seen = float(np.max(np.abs(f0) + self.hi * np.abs(g0)))

        zero_order = abs(self.f_coef) + self.hi * abs(self.g_coef)
        if self.f_base.uses_y or self.g_base.uses_y:
            zero_order += m.L * max(1.0, self.hi)
        rate = self.hi * self.s2 / hx**2 + (np.abs(self.b) + self.hi * np.abs(self.h)) / hx
        self.diag_rate = float(np.max(rate) + zero_order)
        self.dt_max = 1.0 / self.diag_rate if self.diag_rate > 0 else math.inf

        self.z_ok = True
        if self.uses_z:
            lip = max(m.alpha2, getattr(self.f_base, "z_lipschitz", 0.0), getattr(self.g_base, "z_lipschitz", 0.0))
            active = np.abs(self.sig) > 0
            need = hx * lip * max(1.0, self.lo)
            self.z_ok = bool(np.all(self.lo * np.abs(self.sig[active]) >= need - 1e-12))
            self.z_lip = lip

    def resolve_dt(self, dt: float | None) -> float:
        if not self.z_ok:
            raise CFLError(
                f"hx={self.hx} too coarse for the z-dependence: need hx * alpha2 * max(1, sigma_lo^2)"
                f" <= sigma_lo^2 |sigma| (alpha2={self.z_lip})")
        if dt is None:
            return CFL_SAFETY * self.dt_max
        if dt * self.diag_rate > 1.0 + 1e-12:
            raise CFLError(f"dt={dt:g} violates the monotonicity bound dt <= {self.dt_max:g}")
        return dt

    def pieces(self, u: np.ndarray, upwind: bool = True):
        ue = _extend(u, self.boundary)
        fwd = (ue[2:] - ue[1:-1]) / self.hx
        bwd = (ue[1:-1] - ue[:-2]) / self.hx
        d2 = (fwd - bwd) / self.hx
        dc = 0.5 * (fwd + bwd)
        if upwind:
            drift = self.b_pos * fwd + self.b_neg * bwd
            hterm = self.h_pos * fwd + self.h_neg * bwd
        else:
            drift = self.b * dc
            hterm = self.h * dc
        z = (self.sig * dc)[None, :] if self.uses_z else None
        fval = self.f_static if self.f_static is not None else self.f_base(self.X, u, z)
        gval = self.g_static if self.g_static is not None else self.g_base(self.X, u, z)
        if self.f_coef:
            fval = fval + self.f_coef * u
        if self.g_coef:
            gval = gval + self.g_coef * u
        H = self.s2 * d2 + 2.0 * hterm + 2.0 * gval
        return H, drift, np.broadcast_to(fval, u.shape)

    def G(self, H):
        return 0.5 * np.where(H > 0.0, self.hi * H, self.lo * H)

    def rhs(self, u: np.ndarray) -> np.ndarray:
        H, drift, fval = self.pieces(u)
        return self.G(H) + drift + fval

    def march(self, u: np.ndarray, dt: float, steps: int, guard: float = math.inf, record=None) -> np.ndarray:
        u = np.array(u, dtype=float)
        for k in range(steps):
            u = u + dt * self.rhs(u)
            if record is not None:
                record(k + 1, u)
            if (k & 63) == 63 or k == steps - 1:
                big = np.max(np.abs(u))
                if not np.isfinite(big):
                    bad = int(np.argmax(~np.isfinite(u)))
                    raise BlowUpError(f"non-finite value at node {bad} (x={self.x[bad]:g}) after {k + 1} steps")
                if big > guard:
                    raise BlowUpError(f"|u| = {big:g} exceeds the a-priori guard {guard:g} after {k + 1} steps")
        return u


def _guard(m: ModelSpec, phi_sup: float, horizon: float, sch: "_Scheme") -> float:
    alpha = max(m.alpha, sch.alpha_seen)
    if m.mu > 0:
        bound = alpha * (1.0 - math.exp(-m.mu * horizon)) / m.mu
    else:
        bound = alpha * horizon
    return 10.0 * (bound + phi_sup) + 1e-8


def assemble_operator(m: ModelSpec, u: Field, node: int) -> PointwiseOperator:
    sch = _Scheme(m, u.grid)
    H, drift, fval = sch.pieces(np.asarray(u.values))
    total = sch.G(H) + drift + fval
    if not np.isfinite(total[node]):
        raise SolverError(f"non-finite operator value at node {node} (x={sch.x[node]:g})")
    return PointwiseOperator(H=np.array([[H[node]]]), drift_term=float(drift[node]),
                             driver_term=float(fval[node]), total=float(total[node]))


def solve_parabolic(m: ModelSpec, phi: Field, T: float, grid: Grid | None = None,
                    save_every: int | None = None) -> TimeField:
    """Backward explicit marching of ``u_t + F[u] = 0`` from ``u(T) = phi``.

    Slices are stored every ``save_every`` steps (default: every step for
    short runs, about 200 slices otherwise) plus both endpoints.
    """
    grid = grid or phi.grid
    if phi.grid != grid:
        raise ValueError("terminal condition lives on a different grid")
    if not T > 0:
        raise ValueError("horizon T must be positive")
    sch = _Scheme(m, grid)
    dt_req = sch.resolve_dt(grid.dt)
    steps = max(1, math.ceil(T / dt_req - 1e-9))
    dt = T / steps
    if save_every is None:
        save_every = 1 if steps <= 2000 else max(1, steps // 200)
    times = [T]
    slices = [phi.values.copy()]

    def record(k, u):
        if k % save_every == 0 or k == steps:
            times.append(T - k * dt)
            slices.append(u.copy())

    sch.march(phi.values, dt, steps, guard=_guard(m, float(np.max(np.abs(phi.values))), T, sch), record=record)
    times[-1] = 0.0
    order = np.argsort(times)
    fields = [phi if k == 0 else Field(slices[k], grid) for k in order]
    return TimeField(np.asarray(times)[order], fields, meta={"dt": dt, "steps": steps})


def solve_finite_bsde(m: ModelSpec, phi: Field, T: float, x: float, grid: Grid | None = None):
    """``(Y0, Z0)`` of the Markovian G-BSDE started at ``x``."""
    grid = grid or phi.grid
    if not grid.contains(x):
        raise DomainError(f"x={x} outside [{grid.x_lo}, {grid.x_hi}]")
    tf = solve_parabolic(m, phi, T, grid, save_every=10**12)
    u0 = tf.initial
    sig = float(m.diffusion(np.array([[x]]))[0, 0, 0])
    return u0(x), np.array([sig * u0.derivative(x)])


def solve_infinite(m: ModelSpec, tol: float, grid: Grid, initial: Field | None = None,
                   accelerate: bool = True) -> Field:
    """Stationary solution of ``F[u] = 0`` for a strictly monotone driver (mu > 0).

    Marching starts from ``initial`` (default 0).  With ``accelerate`` the
    slow constant mode is corrected after every unit of time by a Newton step
    on the mean residual; the fixed point is unchanged.  Stops once a unit
    horizon moves the field by at most ``tol/2 * min(1, mu)`` in sup norm.
    """
    if not m.mu > 0:
        raise ValueError("solve_infinite needs mu > 0")
    sch = _Scheme(m, grid)
    dt_req = sch.resolve_dt(grid.dt)
    steps = max(1, math.ceil(1.0 / dt_req - 1e-9))
    dt = 1.0 / steps
    bound = max(m.alpha, sch.alpha_seen) / m.mu
    n_bound = max(4.0, math.log(max(2.0 * bound / tol, 1.0)) / m.mu)
    u = np.zeros(grid.n_nodes) if initial is None else np.array(initial.values, dtype=float)
    guard = 10.0 * (bound + float(np.max(np.abs(u)))) + 1e-8
    thresh = 0.5 * tol * min(1.0, m.mu)
    history = []
    horizon = 0
    while True:
        if accelerate and horizon > 0:
            r0 = sch.rhs(u)
            delta = max(1.0, float(np.max(np.abs(u))))
            slope = float(np.mean(sch.rhs(u + delta) - r0)) / delta
            if slope < -1e-14:
                u = u - float(np.mean(r0)) / slope
        prev = u
        u = sch.march(u, dt, steps, guard=guard)
        horizon += 1
        change = float(np.max(np.abs(u - prev)))
        history.append(change)
        if change <= thresh and (accelerate or horizon >= n_bound):
            break
        if horizon > 4 * n_bound:
            raise ConvergenceError(
                f"no stationarity within horizon {horizon} (last unit change {change:.3e}, target {thresh:.3e})",
                history)
    return Field(u, grid, meta={"horizon": horizon, "history": history, "dt": dt, "tol": tol})


def discounted_model(m: ModelSpec, eps: float, gamma1: float, gamma2: float) -> ModelSpec:
    margin = dissipativity_margin(m.g_fun, gamma1, gamma2)
    if margin >= 0:
        raise InfeasibleWeightingError(f"gamma1 + 2G(gamma2) = {margin:g} >= 0: infeasible ergodic weighting")
    if not eps > 0:
        raise ValueError("eps must be positive")
    return m.replace(f=AffineYDriver(m.f, gamma1 * eps), g=AffineYDriver(m.g, gamma2 * eps), mu=-margin * eps)


def solve_discounted(m: ModelSpec, eps: float, gamma1: float, gamma2: float, grid: Grid,
                     tol: float | None = None, initial: Field | None = None) -> Field:
    """Bounded solution of the discounted equation ``F[v] + gamma1 eps v (+ gamma2 eps v in H) = 0``."""
    aug = discounted_model(m, eps, gamma1, gamma2)
    if tol is None:
        tol = 1e-7 * max(1.0, aug.apriori_bound)
    return solve_infinite(aug, tol, grid, initial=initial)


def residual(m: ModelSpec, u: Field, lam: float | None = None, gamma1: float = 0.0, gamma2: float = 0.0,
             upwind: bool = False) -> Field:
    """Nodewise residual of the elliptic (``lam`` None) or ergodic equation.

    First differences are central unless ``upwind``, so the residual of a
    solution of the upwind scheme measures its consistency error.
    """
    sch = _Scheme(m, u.grid)
    H, drift, fval = sch.pieces(np.asarray(u.values), upwind=upwind)
    if lam is None:
        total = sch.G(H) + drift + fval
    else:
        total = sch.G(H + 2.0 * gamma2 * lam) + drift + fval + gamma1 * lam
    return Field(total, u.grid)
