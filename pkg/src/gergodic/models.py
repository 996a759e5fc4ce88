"""Coefficient bundles (b, h, sigma, f, g), structural constants and checks.

The drift ``b``, quadratic-variation drift ``h`` and diffusion ``sigma`` are
functions of the state ``x``; the driver ``f`` and quadratic-variation driver
``g`` take ``(x, y, z)``.  Drivers are any objects with the call signature
``drv(x, y, z)`` (``x`` of shape ``(n, ...)``, ``z`` of shape ``(d, ...)``)
and boolean attributes ``uses_y`` / ``uses_z``; :class:`Expression`
satisfies this, as do :class:`HamiltonianDriver` and :class:`AffineYDriver`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .config import ConfigError, load_config_text, require
from .expression import EvaluationError, Expression, ExpressionError, variable_names
from .gcalculus import GFunction, UncertaintyInterval, g_eval


@dataclass(frozen=True)
class ModelSpec:
    n: int
    d: int
    b: tuple
    h: tuple
    sigma: tuple
    f: Any
    g: Any
    g_fun: GFunction
    L: float = 0.0
    alpha1: float = 0.0
    alpha2: float = 0.0
    mu: float = 0.0
    eta: float = 0.0
    alpha: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ConfigError(f"state dimension n must be 1 or 2, got {self.n}")
        if self.d != 1:
            raise ConfigError(f"Brownian dimension d must be 1, got {self.d}")
        if self.g_fun.dim != self.d:
            raise ConfigError("uncertainty interval dimension does not match d")
        if len(self.b) != self.n or len(self.h) != self.n:
            raise ConfigError(f"b and h need {self.n} components")
        if len(self.sigma) != self.n or any(len(row) != self.d for row in self.sigma):
            raise ConfigError(f"sigma must be {self.n}x{self.d}")
        for key in ("L", "alpha1", "alpha2", "mu", "eta", "alpha"):
            val = getattr(self, key)
            if not np.isfinite(val) or val < 0:
                raise ConfigError(f"constant {key} must be finite and >= 0, got {val}")

    # -- coefficient evaluation; x has shape (n, ...) --------------------

    def drift(self, x) -> np.ndarray:
        return np.stack([np.broadcast_to(e.bind(x=x), np.shape(x)[1:]) for e in self.b])

    def qv_drift(self, x) -> np.ndarray:
        return np.stack([np.broadcast_to(e.bind(x=x), np.shape(x)[1:]) for e in self.h])

    def diffusion(self, x) -> np.ndarray:
        """Array of shape ``(n, d, ...)``."""
        shape = np.shape(x)[1:]
        return np.stack([np.stack([np.broadcast_to(e.bind(x=x), shape) for e in row]) for row in self.sigma])

    def driver(self, x, y, z):
        return self.f(x, y, z)

    def qv_driver(self, x, y, z):
        return self.g(x, y, z)

    # -- derived constants -----------------------------------------------

    @property
    def sigma_hi_sq(self) -> float:
        return self.g_fun.sigma_hi_sq

    @property
    def forward_margin(self) -> float:
        """eta - (1 + bar sigma^2) alpha1 alpha2; positive when the ergodic theory applies."""
        return self.eta - (1.0 + self.sigma_hi_sq) * self.alpha1 * self.alpha2

    @property
    def lipschitz_bound(self) -> float:
        """M = (1 + bar sigma^2) L / (eta - (1 + bar sigma^2) alpha1 alpha2)."""
        margin = self.forward_margin
        if margin <= 0:
            return float("inf")
        return (1.0 + self.sigma_hi_sq) * self.L / margin

    @property
    def apriori_bound(self) -> float:
        """alpha / mu, the sup bound of infinite-horizon solutions."""
        return self.alpha / self.mu if self.mu > 0 else float("inf")

    @property
    def drivers_use_y(self) -> bool:
        return bool(getattr(self.f, "uses_y", True) or getattr(self.g, "uses_y", True))

    @property
    def drivers_use_z(self) -> bool:
        return bool(getattr(self.f, "uses_z", True) or getattr(self.g, "uses_z", True))

    def replace(self, **changes) -> "ModelSpec":
        return dataclasses.replace(self, **changes)

    def with_interval(self, sigma_lo_sq, sigma_hi_sq) -> "ModelSpec":
        return self.replace(g_fun=GFunction.from_bounds(sigma_lo_sq, sigma_hi_sq, self.d))


class AffineYDriver:
    """``base(x, y, z) + coef * y``; used for the discount augmentation."""

    def __init__(self, base, coef: float):
        self.base = base
        self.coef = float(coef)
        self.uses_y = True
        self.uses_z = bool(getattr(base, "uses_z", True))

    def __call__(self, x, y, z):
        return self.base(x, y, z) + self.coef * np.asarray(y, dtype=float)

    def __repr__(self):
        return f"AffineYDriver({self.base!r}, {self.coef!r})"


# --- control specification and Hamiltonian ------------------------------

@dataclass(frozen=True)
class ControlSpec:
    U: np.ndarray
    kappa: Expression
    R: tuple

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        object.__setattr__(self, "U", U)

    @property
    def m(self) -> int:
        return self.U.shape[1]

    def R_values(self) -> np.ndarray:
        """R at every control point, shape ``(len(U), d)``."""
        return np.stack([np.broadcast_to(e.bind(u=self.U.T), (len(self.U),)) for e in self.R], axis=1)

    def kappa_values(self, x) -> np.ndarray:
        """kappa(x, u_k) for every control point, shape ``(len(U), ...)``."""
        x = np.asarray(x, dtype=float)
        out = []
        for k in range(len(self.U)):
            u = self.U[k].reshape((self.m,) + (1,) * (x.ndim - 1))
            out.append(np.broadcast_to(self.kappa.bind(x=x, u=u), x.shape[1:]))
        return np.stack(out)

    @property
    def R_bound(self) -> float:
        return float(np.max(np.linalg.norm(self.R_values(), axis=1)))


class HamiltonianDriver:
    """f(x, z) = min over U of kappa(x, u) + R(u) z."""

    uses_y = False
    uses_z = True

    def __init__(self, control: ControlSpec):
        self.control = control
        self._R = control.R_values()
        self._cache = (None, None)

    def _kappa(self, x):
        # the solvers call with the same node array every step
        if self._cache[0] is x:
            return self._cache[1]
        kap = self.control.kappa_values(x)
        if isinstance(x, np.ndarray):
            self._cache = (x, kap)
        return kap

    def candidates(self, x, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        kap = self._kappa(x)
        lin = np.tensordot(self._R, z, axes=([1], [0]))
        return kap + lin

    def __call__(self, x, y, z):
        return self.candidates(x, z).min(axis=0)

    def argmin(self, x, z) -> np.ndarray:
        """Index into U of the minimiser; ties go to the lowest index."""
        return np.argmin(self.candidates(x, z), axis=0)

    @property
    def z_lipschitz(self) -> float:
        return float(np.max(np.linalg.norm(self._R, axis=1)))


def hamiltonian_from_control(c: ControlSpec, alpha2: float | None = None) -> HamiltonianDriver:
    if len(c.U) == 0:
        raise ValueError("control set U is empty")
    if alpha2 is not None and c.R_bound > alpha2 + 1e-12:
        raise ValueError(f"|R(u)| reaches {c.R_bound:g} > alpha2 = {alpha2:g}")
    return HamiltonianDriver(c)


# --- parsing ---------------------------------------------------------------

def _as_list(val, name: str) -> list:
    if isinstance(val, (str, int, float)):
        return [val]
    if isinstance(val, list):
        return val
    raise ConfigError(f"coefficient {name!r} must be a string or a list")


def _expr(text, allowed, name: str) -> Expression:
    try:
        return Expression(text, allowed)
    except ExpressionError as exc:
        raise ConfigError(f"in coefficient {name!r}: {exc}") from None


def model_from_dict(cfg: dict, name: str = "") -> ModelSpec:
    """Build a :class:`ModelSpec` from a config mapping with ``model`` and ``uncertainty`` blocks."""
    if "model" not in cfg:
        raise ConfigError("missing [model] block")
    mb = cfg["model"]
    ub = cfg.get("uncertainty", {})
    n = int(mb.get("n", 1))
    d = int(mb.get("d", ub.get("d", 1)))
    if d != 1:
        raise ConfigError(f"dimension mismatch: only d=1 models are supported, got d={d}")
    xs = variable_names(n=n)
    drv_vars = variable_names(n=n, d=d, y=True)
    for key in ("b", "sigma", "f"):
        if key not in mb:
            raise ConfigError(f"missing coefficient {key!r}")
    b = _as_list(mb["b"], "b")
    h = _as_list(mb.get("h", ["0"] * n), "h")
    if len(b) != n:
        raise ConfigError(f"dimension mismatch: b has {len(b)} components but n={n}")
    if len(h) != n:
        raise ConfigError(f"dimension mismatch: h has {len(h)} components but n={n}")
    sig = mb["sigma"]
    if isinstance(sig, (str, int, float)):
        if n != 1 or d != 1:
            raise ConfigError("dimension mismatch: scalar sigma needs n=d=1")
        sig = [[sig]]
    sig = [row if isinstance(row, list) else [row] for row in sig]
    if len(sig) != n or any(len(row) != d for row in sig):
        raise ConfigError(f"dimension mismatch: sigma must be {n}x{d}")
    consts = dict(mb.get("constants", {}))
    for key in ("L", "alpha1", "alpha2", "mu", "eta", "alpha"):
        if key in mb:
            consts[key] = mb[key]
    if "sigma_lo_sq" not in ub or "sigma_hi_sq" not in ub:
        raise ConfigError("missing [uncertainty] sigma_lo_sq / sigma_hi_sq")
    try:
        gf = GFunction(UncertaintyInterval(float(ub["sigma_lo_sq"]), float(ub["sigma_hi_sq"]), d))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ModelSpec(
        n=n,
        d=d,
        b=tuple(_expr(t, xs, "b") for t in b),
        h=tuple(_expr(t, xs, "h") for t in h),
        sigma=tuple(tuple(_expr(t, xs, "sigma") for t in row) for row in sig),
        f=_expr(mb["f"], drv_vars, "f"),
        g=_expr(mb.get("g", "0"), drv_vars, "g"),
        g_fun=gf,
        name=str(mb.get("name", name)),
        **{k: float(v) for k, v in consts.items()},
    )


def parse_model(config_text: str) -> ModelSpec:
    return model_from_dict(load_config_text(config_text))


def control_from_dict(block: dict, n: int = 1, d: int = 1) -> ControlSpec:
    U = np.asarray(require(block, "U", "control"), dtype=float)
    if U.size == 0:
        raise ConfigError("control set U is empty")
    if U.ndim == 1:
        U = U[:, None]
    m = U.shape[1]
    kappa = _expr(require(block, "kappa", "control"), variable_names(n=n, m=m), "kappa")
    R = [_expr(t, variable_names(m=m), "R") for t in _as_list(require(block, "R", "control"), "R")]
    if len(R) != d:
        raise ConfigError(f"dimension mismatch: R has {len(R)} components but d={d}")
    return ControlSpec(U=U, kappa=kappa, R=tuple(R))


# --- assumption checks -----------------------------------------------------

@dataclass(frozen=True)
class SamplingPlan:
    x_box: tuple = (-5.0, 5.0)
    y_box: tuple = (-5.0, 5.0)
    z_box: tuple = (-5.0, 5.0)
    n_pairs: int = 4000
    seed: int = 0


@dataclass
class AssumptionVerdict:
    name: str
    status: str
    margin: float = float("nan")
    witness: dict | None = None
    note: str = ""

    @property
    def holds(self) -> bool:
        return self.status != "violated"


@dataclass
class AssumptionReport:
    verdicts: dict = field(default_factory=dict)

    def __getitem__(self, key) -> AssumptionVerdict:
        return self.verdicts[key]

    @property
    def all_hold(self) -> bool:
        return all(v.holds for v in self.verdicts.values())

    def to_text(self) -> str:
        lines = []
        for v in self.verdicts.values():
            line = f"{v.name:4s} {v.status:16s} margin={v.margin:+.3e}"
            if v.witness:
                line += "  witness=" + ", ".join(f"{k}={np.round(val, 6).tolist()}" for k, val in v.witness.items())
            if v.note:
                line += f"  ({v.note})"
            lines.append(line)
        return "\n".join(lines)


class AssumptionCheckError(RuntimeError):
    pass


_SLACK = 1e-9


def _verdict(name, margins, witnesses, note=""):
    k = int(np.argmin(margins))
    worst = float(margins[k])
    if worst >= -_SLACK:
        return AssumptionVerdict(name, "holds-on-sample", worst, None, note)
    return AssumptionVerdict(name, "violated", worst, {key: np.asarray(val)[..., k] for key, val in witnesses.items()}, note)


def _safe(fn, what, **point):
    try:
        return fn()
    except EvaluationError as exc:
        raise AssumptionCheckError(f"evaluating {what} failed: {exc}; probe points {point}") from None


def check_assumptions(m: ModelSpec, samples: SamplingPlan | None = None) -> AssumptionReport:
    """Probe the structural inequalities on random secant pairs.

    Margins are normalised by the squared (or plain) distance of the pair so
    they read as "slack in the constant".  A "holds-on-sample" verdict is
    evidence, not a proof.
    """
    sp = samples or SamplingPlan()
    rng = np.random.default_rng(sp.seed)
    N = sp.n_pairs
    G = m.g_fun

    def box(lo_hi, shape):
        lo, hi = lo_hi
        return rng.uniform(lo, hi, size=shape)

    x = box(sp.x_box, (m.n, N))
    xp = box(sp.x_box, (m.n, N))
    y = box(sp.y_box, (N,))
    yp = box(sp.y_box, (N,))
    z = box(sp.z_box, (m.d, N))
    zp = box(sp.z_box, (m.d, N))
    # a share of the pairs differ in one argument only, to isolate each constant
    near = N // 4
    xp[:, :near] = x[:, :near] + rng.normal(scale=1e-3, size=(m.n, near))
    # canonical first probe: x=0, x'=1, y=1, y'=0, z=z'=0
    x[:, 0], xp[:, 0], y[0], yp[0], z[:, 0], zp[:, 0] = 0.0, 1.0, 1.0, 0.0, 0.0, 0.0

    rep = AssumptionReport()
    zero_y = np.zeros(N)
    zero_z = np.zeros((m.d, N))

    f0 = _safe(lambda: np.broadcast_to(m.f(x, zero_y, zero_z), (N,)), "f(x,0,0)", x=x)
    g0 = _safe(lambda: np.broadcast_to(m.g(x, zero_y, zero_z), (N,)), "g(x,0,0)", x=x)
    lhs = np.abs(f0) + 2.0 * G.scalar(np.abs(g0))
    rep.verdicts["B1"] = _verdict("B1", m.alpha - lhs, {"x": x})
    h4 = np.abs(f0) + m.sigma_hi_sq * np.abs(g0)
    rep.verdicts["H4"] = _verdict("H4", m.alpha - h4, {"x": x}, "L2 identified with alpha")

    dx = np.linalg.norm(x - xp, axis=0)
    dx = np.where(dx == 0, 1e-300, dx)
    bx, bxp = _safe(lambda: (m.drift(x), m.drift(xp)), "b", x=x)
    hx, hxp = _safe(lambda: (m.qv_drift(x), m.qv_drift(xp)), "h", x=x)
    sx, sxp = _safe(lambda: (m.diffusion(x), m.diffusion(xp)), "sigma", x=x)
    lip_bh = (np.linalg.norm(bx - bxp, axis=0) + np.linalg.norm(hx - hxp, axis=0)) / dx
    lip_s = np.sqrt(np.sum((sx - sxp) ** 2, axis=(0, 1))) / dx
    fx = _safe(lambda: np.broadcast_to(m.f(x, y, z), (N,)), "f", x=x, y=y, z=z)
    fp = _safe(lambda: np.broadcast_to(m.f(xp, yp, zp), (N,)), "f", x=xp, y=yp, z=zp)
    gx = _safe(lambda: np.broadcast_to(m.g(x, y, z), (N,)), "g", x=x, y=y, z=z)
    gp = _safe(lambda: np.broadcast_to(m.g(xp, yp, zp), (N,)), "g", x=xp, y=yp, z=zp)
    rhs = m.L * (dx + np.abs(y - yp)) + m.alpha2 * np.linalg.norm(z - zp, axis=0)
    drv = np.abs(fx - fp) + np.abs(gx - gp)
    scale = np.maximum(rhs, 1e-300)
    b2 = np.minimum.reduce([m.L - lip_bh, m.alpha1 - lip_s, (rhs - drv) / scale])
    rep.verdicts["B2"] = _verdict("B2", b2, {"x": x, "x'": xp, "y": y, "y'": yp, "z": z, "z'": zp})

    dy = y - yp
    dy = np.where(dy == 0, 1e-300, dy)
    fyp = _safe(lambda: np.broadcast_to(m.f(x, yp, z), (N,)), "f", x=x, y=yp, z=z)
    gyp = _safe(lambda: np.broadcast_to(m.g(x, yp, z), (N,)), "g", x=x, y=yp, z=z)
    mono = (fx - fyp) * dy + 2.0 * G.scalar((gx - gyp) * dy)
    b3 = (-m.mu * dy**2 - mono) / dy**2
    note = "mu = 0: ergodic setting, only monotonicity is required" if m.mu == 0 else ""
    for key in ("B3", "H3"):
        rep.verdicts[key] = _verdict(key, b3, {"x": x, "y": y, "y'": yp, "z": z}, note)

    dsig = np.sum((sx - sxp)[:, 0, :] ** 2, axis=0)
    inner_h = np.sum((x - xp) * (hx - hxp), axis=0)
    inner_b = np.sum((x - xp) * (bx - bxp), axis=0)
    b4 = (-m.eta * dx**2 - (G.scalar(dsig + 2.0 * inner_h) + inner_b)) / dx**2
    rep.verdicts["B4"] = _verdict("B4", b4, {"x": x, "x'": xp})

    b5 = m.forward_margin
    rep.verdicts["B5"] = AssumptionVerdict(
        "B5", "holds-on-sample" if b5 > 0 else "violated", b5,
        None if b5 > 0 else {"eta": np.asarray(m.eta), "alpha1": np.asarray(m.alpha1), "alpha2": np.asarray(m.alpha2)},
        "exact arithmetic")
    rep.verdicts["H1"] = AssumptionVerdict("H1", "not-checkable", float("nan"), None,
                                           "integrability exponent has no finite-sample counterpart")
    return rep


def g_of(m: ModelSpec, a) -> float:
    return g_eval(m.g_fun, a)
