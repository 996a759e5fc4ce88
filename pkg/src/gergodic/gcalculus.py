"""Sublinear generator G of a volatility uncertainty interval.

For a one-dimensional G-Brownian motion with ``<B>_t`` ranging over
``[sigma_lo_sq, sigma_hi_sq] * t`` the generator is

    G(a) = 1/2 * (sigma_hi_sq * a^+ - sigma_lo_sq * a^-)

and for a product of two independent intervals (diagonal covariance) the
per-coordinate formula is summed over the diagonal of ``a``.  Off-diagonal
entries never contribute because the cross brackets vanish.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Matrix argument does not match the Brownian dimension."""


@dataclass(frozen=True)
class UncertaintyInterval:
    sigma_lo_sq: float | tuple[float, float]
    sigma_hi_sq: float | tuple[float, float]
    dim: int = 1

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"Brownian dimension must be 1 or 2, got {self.dim}")
        lo = np.broadcast_to(np.asarray(self.sigma_lo_sq, dtype=float), (self.dim,))
        hi = np.broadcast_to(np.asarray(self.sigma_hi_sq, dtype=float), (self.dim,))
        if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)):
            raise ValueError("variance bounds must be finite")
        if np.any(lo <= 0.0):
            raise ValueError("lower variance bound must be > 0 (non-degenerate G)")
        if np.any(lo > hi):
            raise ValueError("need sigma_lo_sq <= sigma_hi_sq")

    @property
    def lo(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.sigma_lo_sq, dtype=float), (self.dim,)).copy()

    @property
    def hi(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.sigma_hi_sq, dtype=float), (self.dim,)).copy()

    @property
    def lo_max(self) -> float:
        return float(self.lo.max())

    @property
    def hi_max(self) -> float:
        """Largest upper bound, the scalar ``bar sigma^2`` entering every constant."""
        return float(self.hi.max())

    @property
    def lo_min(self) -> float:
        return float(self.lo.min())

    @property
    def is_classical(self) -> bool:
        return bool(np.all(self.lo == self.hi))

    def levels(self, m: int = 3) -> np.ndarray:
        """``m`` equispaced variance levels spanning the interval (d=1)."""
        if self.dim != 1:
            raise DimensionError("scenario levels are defined for d=1 only")
        return np.linspace(self.lo[0], self.hi[0], m)


@dataclass(frozen=True)
class GFunction:
    interval: UncertaintyInterval

    @classmethod
    def from_bounds(cls, sigma_lo_sq, sigma_hi_sq, dim: int = 1) -> "GFunction":
        return cls(UncertaintyInterval(sigma_lo_sq, sigma_hi_sq, dim))

    @property
    def dim(self) -> int:
        return self.interval.dim

    @property
    def sigma_lo_sq(self) -> float:
        return self.interval.lo_min

    @property
    def sigma_hi_sq(self) -> float:
        return self.interval.hi_max

    def __call__(self, a):
        return g_eval(self, a)

    def scalar(self, a):
        """Vectorised G for d=1 on an array of scalars (the hot path of the solvers)."""
        a = np.asarray(a, dtype=float)
        lo = self.interval.lo[0]
        hi = self.interval.hi[0]
        return 0.5 * np.where(a > 0.0, hi * a, lo * a)

    def argmax(self, a):
        """Variance level attaining the sup in G(a) (d=1); ties resolve to the lower bound."""
        a = np.asarray(a, dtype=float)
        return np.where(a > 0.0, self.interval.hi[0], self.interval.lo[0])


def g_eval(g: GFunction, a) -> float:
    """Evaluate G on a symmetric ``d x d`` matrix (a scalar is accepted for d=1)."""
    arr = np.asarray(a, dtype=float)
    d = g.dim
    if arr.ndim == 0:
        if d != 1:
            raise DimensionError(f"scalar argument given for d={d}")
        arr = arr.reshape(1, 1)
    if arr.shape != (d, d):
        raise DimensionError(f"expected a {d}x{d} matrix, got shape {arr.shape}")
    if not np.allclose(arr, arr.T, rtol=0.0, atol=1e-12 * (1.0 + np.abs(arr).max())):
        raise ValueError("argument of G must be symmetric")
    diag = np.diag(arr)
    lo = g.interval.lo
    hi = g.interval.hi
    return float(0.5 * np.sum(hi * np.maximum(diag, 0.0) - lo * np.maximum(-diag, 0.0)))


def dissipativity_margin(g: GFunction, gamma1: float, gamma2) -> float:
    """``gamma1 + 2 G(gamma2)``; the ergodic weighting is feasible only when this is < 0."""
    return float(gamma1) + 2.0 * g_eval(g, gamma2)
