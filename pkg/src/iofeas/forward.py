"""Recovered forward problem ``min c(s)'x  s.t.  x = A(s) z + b(s), z in Z``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conic import INFEASIBLE, OPTIMAL, UNBOUNDED, ConicProgram, SolveOptions, solve
from .geometry import Cone, ZERO
from .hypothesis import eval_A, eval_b


class InfeasibleForward(RuntimeError):
    """The recovered feasible region is empty at this signal."""


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    """Affine cost map ``c(s) = c0 + C s``."""

    C: np.ndarray
    c0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "C", np.atleast_2d(np.asarray(self.C, dtype=float)))
        object.__setattr__(self, "c0", np.asarray(self.c0, dtype=float).reshape(-1))
        if self.C.shape[0] != self.c0.size:
            raise ValueError("C rows must match c0 length")

    @property
    def n(self):
        return self.c0.size

    def __call__(self, s):
        return self.c0 + self.C @ np.atleast_1d(np.asarray(s, dtype=float))

    def batch(self, S):
        return np.atleast_2d(S) @ self.C.T + self.c0

    @classmethod
    def signal_is_cost(cls, K, idx=None):
        """``c(s)`` equals the coordinates ``idx`` of the signal (all by default)."""
        idx = list(range(K)) if idx is None else list(idx)
        C = np.zeros((len(idx), K))
        C[np.arange(len(idx)), idx] = 1.0
        return cls(C, np.zeros(len(idx)))

    def to_dict(self):
        return {"C": self.C.tolist(), "c0": self.c0.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["C"], dtype=float), np.asarray(d["c0"], dtype=float))


@dataclass(frozen=True, eq=False)
class Region:
    """Lifted conic description ``{x : exists w, F x + E w - f in K}``."""

    F: np.ndarray
    E: np.ndarray
    f: np.ndarray
    cones: tuple

    @property
    def n(self):
        return self.F.shape[1]

    @property
    def n_lift(self):
        return self.E.shape[1]


def hypothesis_region(theta, Z, s):
    """The set ``{A(s) z + b(s) : z in Z}`` as a :class:`Region`."""
    A = eval_A(theta, s)
    b = eval_b(theta, s)
    return region_from_matrices(A, b, Z)


def region_from_matrices(A, b, Z):
    n = A.shape[0]
    A_full = np.hstack([A, np.zeros((n, Z.n_aux))])
    F = np.vstack([np.eye(n), np.zeros((Z.l, n))])
    E = np.vstack([-A_full, Z.H])
    f = np.concatenate([b, Z.h])
    return Region(F, E, f, (Cone(ZERO, n),) + tuple(Z.cones))


def minimize_over(region, c, opts=None):
    """``min c'x`` over a region; returns ``(status, value, x, w)``."""
    n, m = region.n, region.n_lift
    prog = ConicProgram(n + m)
    prog.add_linear(np.arange(n), c)
    prog.add_constraint(np.hstack([region.F, region.E]), region.f, region.cones)
    sol = solve(prog, opts)
    if sol.status == OPTIMAL:
        return OPTIMAL, float(c @ sol.primal[:n]), sol.primal[:n], sol.primal[n:]
    if sol.status == UNBOUNDED:
        return UNBOUNDED, -math.inf, None, None
    if sol.status == INFEASIBLE:
        return INFEASIBLE, math.inf, None, None
    return sol.status, math.nan, None, None


@dataclass
class ForwardResult:
    x_star: np.ndarray | None
    value: float
    z_star: np.ndarray | None
    status: str


def solve_forward(theta, Z, obj, s, opts=None):
    """Optimal decision of the recovered problem at signal ``s``.

    Works directly in ``z``: minimizes ``(A'c)'z + c'b`` over ``Z`` and maps
    back through ``x = A z + b``.  Unboundedness is reported in ``status``.
    """
    A = eval_A(theta, s)
    b = eval_b(theta, s)
    c = obj(s)
    if A.shape[0] != c.size:
        raise ValueError(f"objective length {c.size} does not match n={A.shape[0]}")
    prog = ConicProgram(Z.p_total)
    prog.add_linear(np.arange(Z.p), A.T @ c)
    prog.add_constraint(Z.H, Z.h, Z.cones)
    sol = solve(prog, opts)
    if sol.status == OPTIMAL:
        z = sol.primal
        x = A @ z[:Z.p] + b
        return ForwardResult(x, float(c @ x), z, OPTIMAL)
    if sol.status == UNBOUNDED:
        return ForwardResult(None, -math.inf, None, UNBOUNDED)
    if sol.status == INFEASIBLE:
        return ForwardResult(None, math.inf, None, INFEASIBLE)
    return ForwardResult(None, math.nan, None, sol.status)


def subopt_gap(theta, Z, obj, x, s, opts=None):
    """``c(s)'x - V_theta(s)``; ``+inf`` when the recovered problem is unbounded."""
    res = solve_forward(theta, Z, obj, s, opts)
    if res.status == UNBOUNDED:
        return math.inf
    if res.status == INFEASIBLE:
        raise InfeasibleForward("recovered problem is infeasible at this signal")
    if res.status != OPTIMAL:
        raise RuntimeError(f"forward solve failed with status {res.status}")
    return float(obj(s) @ np.asarray(x, dtype=float)) - res.value
