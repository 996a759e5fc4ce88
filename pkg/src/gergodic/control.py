"""Ergodic optimal control with uncertain volatility.

The Hamiltonian driver ``min_u kappa(x, u) + R(u) z`` turns the control
problem into an ergodic equation; its potential yields the optimal
feedback, and the long-run cost of any feedback is evaluated on the
Girsanov-shifted worst-case lattice.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .ergodic import ErgodicProblem, ErgodicSolution, HorizonError
from .mc_oracle import Lattice, girsanov_expectation
from .models import ControlSpec, HamiltonianDriver, ModelSpec, hamiltonian_from_control
from .pde import Grid

__all__ = ["ControlSpec", "CostEstimate", "FeedbackTable", "control_problem", "evaluate_J", "hamiltonian_gap", "optimal_feedback",
           "random_feedbacks"]


@dataclass(frozen=True)
class FeedbackTable:
    """A feedback map stored as control indices on grid nodes (nearest-node lookup in between)."""

    x: np.ndarray
    u_index: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.u_index, dtype=int)
        if idx.shape != np.shape(self.x):
            raise ValueError("one control index per node is required")
        if idx.size and (idx.min() < 0 or idx.max() >= len(self.U)):
            raise ValueError("control index out of range")
        object.__setattr__(self, "u_index", idx)
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "U", np.asarray(self.U, dtype=float).reshape(len(self.U), -1))

    def index_at(self, xq) -> np.ndarray:
        xq = np.asarray(xq, dtype=float)
        h = self.x[1] - self.x[0]
        j = np.clip(np.rint((xq - self.x[0]) / h).astype(int), 0, self.x.size - 1)
        return self.u_index[j]

    def values(self) -> np.ndarray:
        return self.U[self.u_index]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            m = self.U.shape[1]
            w.writerow(["x", "u_index", *(["u_value"] if m == 1 else [f"u_value{i + 1}" for i in range(m)])])
            for xv, k in zip(self.x, self.u_index):
                w.writerow([repr(float(xv)), int(k), *(repr(float(u)) for u in self.U[k])])

    @classmethod
    def from_csv(cls, path, U) -> "FeedbackTable":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1].astype(int), U)


@dataclass
class CostEstimate:
    horizons: tuple
    values: tuple
    per_horizon: tuple
    J: float
    gap: float | None = None


def control_problem(m: ModelSpec, c: ControlSpec, gamma1: float = -1.0) -> ErgodicProblem:
    """Ergodic problem whose driver is the Hamiltonian of ``c``."""
    return ErgodicProblem(m.replace(f=hamiltonian_from_control(c, m.alpha2)), gamma1, 0.0)


def optimal_feedback(c: ControlSpec, sol: ErgodicSolution, m: ModelSpec, grid: Grid | None = None) -> FeedbackTable:
    grid = grid or sol.v.grid
    x = grid.nodes
    X = x[None, :]
    Z = m.diffusion(X)[0, 0] * sol.v.derivative(x, step=grid.hx)
    idx = HamiltonianDriver(c).argmin(X, Z[None, :])
    return FeedbackTable(x, idx, c.U)


def hamiltonian_gap(c: ControlSpec, fb: FeedbackTable, sol: ErgodicSolution, m: ModelSpec) -> float:
    """max |kappa(x, u*) + R(u*) Z - f(x, Z)| over the nodes of ``fb``."""
    x = fb.x
    X = x[None, :]
    Z = (m.diffusion(X)[0, 0] * sol.v.derivative(x, step=sol.v.grid.hx))[None, :]
    drv = HamiltonianDriver(c)
    cand = drv.candidates(X, Z)
    chosen = cand[fb.u_index, np.arange(x.size)]
    return float(np.max(np.abs(chosen - drv(X, None, Z))))


def evaluate_J(m: ModelSpec, c: ControlSpec, feedback, x: float, T_list, lattice: Lattice | None = None,
               lam: float | None = None, slope_tol: float = 0.02) -> CostEstimate:
    """Long-run worst-case cost of ``feedback`` started at ``x``: the slope over the two largest horizons."""
    T_list = tuple(float(T) for T in T_list)
    if len(T_list) < 2 or any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise ValueError("T_list must hold at least two increasing horizons")
    lattice = lattice or Lattice(-8.0, 8.0, 0.05)
    vals = girsanov_expectation(m, feedback, c, T_list[-1], lattice, x, checkpoints=T_list[:-1])
    vals = tuple(vals[T] for T in T_list)
    slopes = [(vals[k + 1] - vals[k]) / (T_list[k + 1] - T_list[k]) for k in range(len(T_list) - 1)]
    J = slopes[-1]
    if len(slopes) >= 2 and abs(slopes[-1] - slopes[-2]) > slope_tol * max(1.0, abs(J)):
        raise HorizonError("cost slope not stable across horizons: " + ", ".join(f"{s:.6g}" for s in slopes), slopes)
    return CostEstimate(T_list, vals, tuple(v / T for v, T in zip(vals, T_list)), float(J),
                        None if lam is None else float(J - lam))


def random_feedbacks(c: ControlSpec, x: np.ndarray, count: int, seed: int) -> list:
    """Random feedback tables: a mix of i.i.d. nodewise draws and piecewise-constant switches."""
    rng = np.random.default_rng(seed)
    out = []
    k = len(c.U)
    for i in range(count):
        if i % 2 == 0:
            idx = rng.integers(0, k, size=x.size)
        else:
            cuts = np.sort(rng.uniform(x[0], x[-1], size=rng.integers(1, 5)))
            labels = rng.integers(0, k, size=cuts.size + 1)
            idx = labels[np.searchsorted(cuts, x)]
        out.append(FeedbackTable(x, idx, c.U))
    return out
