"""Probabilistic oracles for worst-case expectations.

Everything here is computed without the finite-difference machinery of
:mod:`gergodic.pde`: forward Euler paths per volatility scenario, a
trinomial lattice dynamic program, and a quadrature recursion for linear
G-BSDEs with constant coefficients.  Agreement with the PDE solvers is
therefore a genuine cross-check.
"""

from __future__ import annotations

import csv
import itertools
import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .expression import EvaluationError, Expression, variable_names
from .gcalculus import UncertaintyInterval
from .models import ModelSpec
from .pde import Field, Grid

MAX_SCENARIOS = 6561
MAX_STEPS_ENUMERATED = 8


class OracleError(RuntimeError):
    pass


class SimulationError(OracleError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class EnumerationError(OracleError):
    pass


class LatticeError(OracleError):
    """A stencil weight went negative; the lattice is too coarse or dt too large."""


# --- scenarios and paths ---------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Piecewise-constant volatility control on ``K`` equal steps of ``[0, T]``.

    ``feedback`` optionally maps the current state (shape ``(n_paths,)``) to
    a level per path; it then overrides ``levels``.
    """

    levels: np.ndarray
    T: float
    feedback: Callable | None = None

    def __post_init__(self):
        lv = np.atleast_1d(np.asarray(self.levels, dtype=float))
        if lv.ndim != 1 or lv.size == 0:
            raise ValueError("scenario levels must be a non-empty 1-d sequence")
        if not self.T > 0:
            raise ValueError("scenario horizon must be positive")
        object.__setattr__(self, "levels", lv)

    @classmethod
    def constant(cls, level: float, T: float, K: int) -> "Scenario":
        return cls(np.full(K, float(level)), T)

    @classmethod
    def state_feedback(cls, fn: Callable, T: float, K: int) -> "Scenario":
        return cls(np.full(K, np.nan), T, feedback=fn)

    @property
    def K(self) -> int:
        return self.levels.size

    @property
    def dt(self) -> float:
        return self.T / self.K

    def validate(self, interval: UncertaintyInterval) -> None:
        if self.feedback is not None:
            return
        lo, hi = interval.lo[0], interval.hi[0]
        bad = (self.levels < lo - 1e-12) | (self.levels > hi + 1e-12)
        if np.any(bad):
            k = int(np.argmax(bad))
            raise ValueError(f"level {self.levels[k]:g} at step {k} outside [{lo:g}, {hi:g}]")


@dataclass
class PathBundle:
    times: np.ndarray
    X: np.ndarray          # (K+1, n, n_paths)
    dB: np.ndarray         # (K, n_paths) increments of the canonical process
    dQ: np.ndarray         # (K, n_paths) bracket increments v dt
    V: np.ndarray          # (K, n_paths) levels used
    scenario: Scenario = field(repr=False)
    seed: int = 0

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_paths(self) -> int:
        return self.X.shape[2]

    def to_csv(self, path, max_paths: int | None = None) -> None:
        n = self.X.shape[1]
        cols = ["x"] if n == 1 else [f"x{i + 1}" for i in range(n)]
        P = self.n_paths if max_paths is None else min(max_paths, self.n_paths)
        K = self.dB.shape[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "path_id", *cols, "dB", "v"])
            for p in range(P):
                for k in range(K + 1):
                    xs = [repr(float(self.X[k, i, p])) for i in range(n)]
                    tail = [repr(float(self.dB[k, p])), repr(float(self.V[k, p]))] if k < K else ["", ""]
                    w.writerow([repr(float(self.times[k])), p, *xs, *tail])


def simulate_forward(m: ModelSpec, sc: Scenario, x0, n_paths: int, seed: int) -> PathBundle:
    """Euler-Maruyama paths ``dX = b dt + h v dt + sigma sqrt(v) dW`` under one scenario.

    Paths for two starting points with the same seed share their noise.
    """
    sc.validate(m.g_fun.interval)
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    K, dt, n = sc.K, sc.dt, m.n
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (n,):
        raise ValueError(f"x0 must have {n} components")
    rng = np.random.default_rng(seed)
    dW = rng.standard_normal((K, n_paths)) * math.sqrt(dt)
    X = np.empty((K + 1, n, n_paths))
    X[0] = x0[:, None]
    V = np.empty((K, n_paths))
    for k in range(K):
        x = X[k]
        v = np.broadcast_to(sc.feedback(x[0] if n == 1 else x), (n_paths,)) if sc.feedback else sc.levels[k]
        V[k] = v
        sq = np.sqrt(V[k])
        try:
            drift = m.drift(x) + m.qv_drift(x) * V[k]
            X[k + 1] = x + drift * dt + m.diffusion(x)[:, 0, :] * (sq * dW[k])
        except EvaluationError as exc:
            raise SimulationError(f"coefficient evaluation failed at step {k}: {exc}", k) from None
        if not np.all(np.isfinite(X[k + 1])):
            raise SimulationError(f"non-finite state at step {k + 1}", k + 1)
    dB = np.sqrt(V) * dW
    return PathBundle(np.linspace(0.0, sc.T, K + 1), X, dB, V * dt, V, sc, seed)


def _payoff_fn(payoff, n: int):
    if isinstance(payoff, str):
        payoff = Expression(payoff, variable_names(n=n))
    if isinstance(payoff, Expression):
        return lambda x: np.broadcast_to(payoff.bind(x=x), np.shape(x)[1:])
    if callable(payoff):
        return payoff
    raise TypeError("payoff must be an expression string, Expression or callable")


@dataclass
class ScenarioSearch:
    value: float
    levels: np.ndarray
    stderr: float
    n_scenarios: int


def upper_expectation_scenarios(m: ModelSpec, payoff, T: float, K: int, M_levels: int, x0, n_paths: int,
                                seed: int, details: bool = False):
    """Max over all open-loop level sequences of the Monte-Carlo mean of ``payoff(X_T)``.

    Open-loop controls are a subset of the adapted ones, so this is a lower
    bound to the worst-case expectation (up to sampling error).
    """
    if M_levels < 2:
        raise ValueError("M_levels must be >= 2")
    total = M_levels**K
    if K > MAX_STEPS_ENUMERATED or total > MAX_SCENARIOS:
        raise EnumerationError(f"{M_levels}^{K} = {total} scenarios exceeds the guard "
                               f"(K <= {MAX_STEPS_ENUMERATED}, at most {MAX_SCENARIOS})")
    grid_levels = m.g_fun.interval.levels(M_levels)
    fn = _payoff_fn(payoff, m.n)
    best = None
    for combo in itertools.product(grid_levels, repeat=K):
        pb = simulate_forward(m, Scenario(np.array(combo), T), x0, n_paths, seed)
        vals = fn(pb.X[-1])
        mean = float(np.mean(vals))
        if best is None or mean > best.value:
            se = float(np.std(vals, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
            best = ScenarioSearch(mean, np.array(combo), se, total)
    return best if details else best.value


# --- trinomial lattice -------------------------------------------------------

@dataclass(frozen=True)
class Lattice:
    x_lo: float
    x_hi: float
    dx: float
    dt: float | None = None

    def __post_init__(self):
        if not (self.dx > 0 and self.x_hi > self.x_lo):
            raise ValueError("invalid lattice box")
        k = (self.x_hi - self.x_lo) / self.dx
        if abs(k - round(k)) > 1e-9 * max(1.0, k):
            raise ValueError("dx must divide the lattice box")

    @property
    def nodes(self) -> np.ndarray:
        k = int(round((self.x_hi - self.x_lo) / self.dx))
        return self.x_lo + self.dx * np.arange(k + 1)

    def as_grid(self) -> Grid:
        return Grid(self.x_lo, self.x_hi, self.dx)


def _stable_dt(dx: float, var_max: float, mean_rate_max: float, safety: float = 0.9) -> float:
    # largest dt with var_max dt + (mean_rate_max dt)^2 <= safety dx^2
    a, b, c = mean_rate_max**2, var_max, -safety * dx * dx
    if a == 0:
        return -c / b if b > 0 else math.inf
    return (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)


class _TrinomialDP:
    """One-step worst-case recursion on a fixed space lattice."""

    def __init__(self, m: ModelSpec, lat: Lattice, levels, extra_drift=None):
        if m.n != 1:
            raise NotImplementedError("the lattice oracle handles n = 1 only")
        self.m = m
        self.x = lat.nodes
        X = self.x[None, :]
        self.X = X
        b = m.drift(X)[0] + (0.0 if extra_drift is None else extra_drift)
        h = m.qv_drift(X)[0]
        self.sig = m.diffusion(X)[0, 0]
        self.levels = np.asarray(levels, dtype=float)
        self.dx = lat.dx
        vmax = float(self.levels.max())
        rate = float(np.max(np.abs(b) + vmax * np.abs(h)))
        dt_max = _stable_dt(lat.dx, vmax * float(np.max(self.sig**2)), rate)
        self.dt_req = dt_max if lat.dt is None else lat.dt
        self.b, self.h = b, h

    def weights(self, dt: float):
        out = []
        for v in self.levels:
            mean = (self.b + v * self.h) * dt
            var = v * self.sig**2 * dt
            q = (var + mean**2) / self.dx**2
            r = mean / self.dx
            pu, pd, p0 = 0.5 * (q + r), 0.5 * (q - r), 1.0 - q
            neg = np.minimum.reduce([pu, pd, p0])
            if np.any(neg < -1e-12):
                j = int(np.argmin(neg))
                raise LatticeError(f"negative stencil weight {neg[j]:.3g} at x={self.x[j]:g}, level {v:g} "
                                   f"(dx={self.dx:g}, dt={dt:g})")
            out.append((v, pu, p0, pd, mean))
        return out

    @staticmethod
    def neighbours(w):
        up = np.empty_like(w)
        dn = np.empty_like(w)
        up[:-1], dn[1:] = w[1:], w[:-1]
        up[-1] = 2.0 * w[-1] - w[-2]
        dn[0] = 2.0 * w[0] - w[1]
        return up, dn

    def run(self, terminal, T: float, driver: bool = True, running=None, checkpoints=()):
        q = 1
        for c in checkpoints:
            q = math.lcm(q, Fraction(c / T).limit_denominator(1000).denominator)
        steps = q * max(1, math.ceil(T / self.dt_req / q - 1e-9))
        dt = T / steps
        W = self.weights(dt)
        m = self.m
        w = np.array(terminal, dtype=float)
        marks = {int(round(c / dt)): c for c in checkpoints if abs(round(c / dt) * dt - c) < 1e-9 * max(1.0, T)}
        saved = {}
        use_drv = driver and not (_is_zero(m.f) and _is_zero(m.g))
        for k in range(1, steps + 1):
            up, dn = self.neighbours(w)
            best = None
            for v, pu, p0, pd, mean in W:
                ev = pu * up + p0 * w + pd * dn
                val = ev
                if use_drv:
                    cov = self.dx * (pu * up - pd * dn) - ev * mean
                    with np.errstate(divide="ignore", invalid="ignore"):
                        z = np.where(self.sig != 0, cov / (v * self.sig * dt), 0.0)
                    zz = z[None, :]
                    val = val + dt * np.broadcast_to(m.f(self.X, ev, zz), ev.shape) \
                        + v * dt * np.broadcast_to(m.g(self.X, ev, zz), ev.shape)
                best = val if best is None else np.maximum(best, val)
            if running is not None:
                best = best + running * dt
            w = best
            if k in marks:
                saved[marks[k]] = w.copy()
            if (k & 255) == 0 and not np.all(np.isfinite(w)):
                raise OracleError(f"non-finite lattice value after {k} steps")
        return w, saved, dt


def _is_zero(e) -> bool:
    return isinstance(e, Expression) and e.is_constant and float(e.evaluate({})) == 0.0


def default_levels(m: ModelSpec) -> np.ndarray:
    return m.g_fun.interval.levels(3)


def lattice_value(m: ModelSpec, payoff, T: float, lattice: Lattice, levels=None, driver: bool = True) -> Field:
    """Worst-case value at ``t = 0`` of ``payoff(X_T)`` plus the model drivers, on every lattice node."""
    dp = _TrinomialDP(m, lattice, default_levels(m) if levels is None else levels)
    fn = _payoff_fn(payoff, 1)
    w, _, dt = dp.run(fn(dp.X), T, driver=driver)
    return Field(w, lattice.as_grid(), meta={"dt": dt, "oracle": "trinomial"})


# --- explicit linear G-BSDE ----------------------------------------------------

@dataclass(frozen=True)
class LinearDriver:
    """``f = a y + b z + m`` and ``g = c y + d z + n`` with constant coefficients; payoff in ``B_T``."""

    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    m: float = 0.0
    n: float = 0.0
    payoff: Any = "0"
    alpha2: float | None = None

    def check(self, interval: UncertaintyInterval, mu: float | None = None) -> None:
        if self.alpha2 is not None and (abs(self.b) > self.alpha2 or abs(self.d) > self.alpha2):
            raise ValueError(f"|b|, |d| must not exceed alpha2 = {self.alpha2:g}")
        if mu is not None:
            lo, hi = interval.lo[0], interval.hi[0]
            gc = 0.5 * (hi * self.c if self.c > 0 else lo * self.c)
            if self.a + 2.0 * gc > -mu:
                raise ValueError("a + 2G(c) must be <= -mu for infinite-horizon use")


def _interp_extrap(xq, x, y):
    out = np.interp(xq, x, y)
    lo = xq < x[0]
    hi = xq > x[-1]
    if np.any(lo):
        out[lo] = y[0] + (xq[lo] - x[0]) * (y[1] - y[0]) / (x[1] - x[0])
    if np.any(hi):
        out[hi] = y[-1] + (xq[hi] - x[-1]) * (y[-1] - y[-2]) / (x[-1] - x[-2])
    return out


def linear_bsde_explicit(ld: LinearDriver, T: float, interval: UncertaintyInterval,
                         x_half_width: float = 10.0, dx: float = 0.02, steps: int = 200,
                         n_quad: int = 12, n_levels: int = 3, mu: float | None = None) -> float:
    """``Y_0`` of the linear G-BSDE through its explicit representation.

    Under a level ``v`` the auxiliary increment is ``v^{-1} dB``, so the
    adjoint factor is ``exp(int (a + c v) dt)`` times the stochastic
    exponential of ``(d + b/v) dB``.  Removing the latter by a change of
    measure gives ``B`` the drift ``b + d v``; the supremum over adapted
    levels is then a one-step maximisation in a backward recursion whose
    conditional expectations use Gauss-Hermite quadrature.
    """
    ld.check(interval, mu)
    xs = np.arange(-x_half_width, x_half_width + 0.5 * dx, dx)
    fn = _payoff_fn(ld.payoff, 1)
    w = np.array(fn(xs[None, :]), dtype=float)
    dt = T / steps
    nodes, wts = np.polynomial.hermite_e.hermegauss(n_quad)
    wts = wts / wts.sum()
    levels = interval.levels(n_levels)
    for _ in range(steps):
        best = None
        for v in levels:
            shift = (ld.b + ld.d * v) * dt
            spread = math.sqrt(v * dt)
            ev = np.zeros_like(w)
            for zq, wq in zip(nodes, wts):
                ev += wq * _interp_extrap(xs + shift + spread * zq, xs, w)
            val = math.exp((ld.a + ld.c * v) * dt) * ev + (ld.m + ld.n * v) * dt
            best = val if best is None else np.maximum(best, val)
        w = best
    return float(np.interp(0.0, xs, w))


# --- Girsanov-shifted running cost -----------------------------------------------

def _feedback_controls(feedback, c, x: np.ndarray) -> np.ndarray:
    """Control values ``u(x)`` with shape ``(m, len(x))``."""
    if hasattr(feedback, "index_at"):
        return c.U[feedback.index_at(x)].T
    if isinstance(feedback, str):
        feedback = Expression(feedback, variable_names(n=1))
    if isinstance(feedback, Expression):
        u = np.broadcast_to(feedback.bind(x=x[None, :]), x.shape)
        return u[None, :]
    out = np.asarray(feedback(x), dtype=float)
    return out.reshape(c.m, x.size) if out.size == c.m * x.size else np.broadcast_to(out, (c.m, x.size))


def girsanov_expectation(m: ModelSpec, feedback, c, T, lattice: Lattice, x: float | None = None,
                         levels=None, checkpoints=None):
    """Worst-case expectation of ``int_0^T kappa(X_s, u(X_s)) ds`` with drift ``b + sigma R(u)``.

    Returns the value at ``x`` (or the whole field if ``x`` is None).  With
    ``checkpoints`` (horizons <= T) returns a dict horizon -> value instead;
    time homogeneity makes the intermediate steps of one recursion equal to
    the values for shorter horizons.
    """
    xs = lattice.nodes
    U = _feedback_controls(feedback, c, xs)
    Rv = np.stack([np.broadcast_to(e.bind(u=U), xs.shape) for e in c.R])
    bound = m.alpha2
    if np.max(np.linalg.norm(Rv, axis=0)) > bound + 1e-12:
        raise ValueError(f"|R(u(x))| exceeds alpha2 = {bound:g} on the lattice")
    sig = m.diffusion(xs[None, :])[0, 0]
    kap = np.broadcast_to(c.kappa.bind(x=xs[None, :], u=U), xs.shape)
    dp = _TrinomialDP(m, lattice, default_levels(m) if levels is None else levels, extra_drift=sig * Rv[0])
    cps = tuple(checkpoints or ())
    if any(t > T + 1e-12 for t in cps):
        raise ValueError("checkpoints must not exceed T")
    w, saved, dt = dp.run(np.zeros_like(xs), T, driver=False, running=kap, checkpoints=cps)
    if checkpoints is not None:
        saved[T] = w
        out = {}
        for t in cps + (T,):
            arr = saved.get(t)
            if arr is None:
                raise ValueError(f"checkpoint {t:g} is not a multiple of the lattice step {dt:g}")
            out[float(t)] = float(np.interp(0.0 if x is None else x, xs, arr))
        return out
    if x is None:
        return Field(w, lattice.as_grid(), meta={"dt": dt})
    return float(np.interp(x, xs, w))
