"""True forward problems with linear cost, described as conic regions.

An oracle answers three questions at a signal ``s``: the cost ``c(s)``, the
feasible region (as a :class:`~iofeas.forward.Region`), and derived from
those the optimal value ``V(s)`` and the feasibility residual ``g(x, s)``.
"""

from __future__ import annotations

import math

import numpy as np

from .forward import Region, minimize_over
from .geometry import NONNEG, ZERO, Cone


class TrueProblemOracle:
    """Base class; subclasses implement :meth:`cost` and :meth:`region`."""

    name = "oracle"

    def cost(self, s):
        raise NotImplementedError

    def region(self, s):
        raise NotImplementedError

    def solve(self, s):
        """``(status, value, x)`` of the true problem at ``s``."""
        status, val, x, _ = minimize_over(self.region(s), self.cost(s))
        return status, val, x

    def value(self, s):
        status, val, _ = self.solve(s)
        if status != "optimal":
            raise RuntimeError(f"oracle has no finite optimum at s (status {status})")
        return val

    def residual(self, x, s):
        """Euclidean distance from ``x`` to the true feasible set (``g`` in the losses)."""
        from .losses import distance_to_region
        from .norms import NormSpec
        return distance_to_region(self.region(s), NormSpec("l2"), x)

    def to_dict(self):
        raise NotImplementedError


class ToyDispatchOracle(TrueProblemOracle):
    """``min s x1 + (1-s) x2  s.t.  x1 + x2 = 1, x in [0, 2]^2``."""

    name = "toy"

    def cost(self, s):
        s = float(np.atleast_1d(s)[0])
        return np.array([s, 1.0 - s])

    def region(self, s):
        F = np.vstack([np.ones((1, 2)), np.eye(2), -np.eye(2)])
        f = np.array([1.0, 0.0, 0.0, -2.0, -2.0])
        return Region(F, np.zeros((5, 0)), f, (Cone(ZERO, 1), Cone(NONNEG, 4)))

    def to_dict(self):
        return {"name": self.name}


class L1BallOracle(TrueProblemOracle):
    """``min c'x  s.t.  ||x - e||_1 <= h`` with ``c`` read from the signal."""

    name = "l1_ball"

    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def cost(self, s):
        return np.asarray(s, dtype=float)[: self.center.size]

    def region(self, s):
        n = self.center.size
        eye = np.eye(n)
        # lift t: t - (x - e) >= 0, t + (x - e) >= 0, h - sum t >= 0
        F = np.vstack([-eye, eye, np.zeros((1, n))])
        E = np.vstack([eye, eye, -np.ones((1, n))])
        f = np.concatenate([-self.center, self.center, [-self.radius]])
        return Region(F, E, f, (Cone(NONNEG, 2 * n + 1),))

    def vertex_solution(self, c):
        """Closed-form optimum: move ``h`` along the largest-magnitude cost coordinate."""
        c = np.asarray(c, dtype=float)
        j = int(np.argmax(np.abs(c)))
        x = self.center.copy()
        x[j] -= self.radius * math.copysign(1.0, c[j])
        return x

    def to_dict(self):
        return {"name": self.name, "center": self.center.tolist(), "radius": self.radius}


class NetworkDispatchOracle(TrueProblemOracle):
    """Transport-model economic dispatch on a fixed network.

    Signal layout: ``s = (costs[0:G], demands[0:R])``.  Decisions are the
    generator outputs; line flows are lifted (unobserved) variables.
    """

    name = "network"

    def __init__(self, n_nodes, gen_nodes, lines, gen_cap, line_cap):
        self.n_nodes = int(n_nodes)
        self.gen_nodes = [int(v) for v in gen_nodes]
        self.lines = [(int(a), int(b)) for a, b in lines]
        self.gen_cap = np.broadcast_to(np.asarray(gen_cap, dtype=float), (len(self.gen_nodes),)).copy()
        self.line_cap = np.broadcast_to(np.asarray(line_cap, dtype=float), (len(self.lines),)).copy()

    @property
    def n_gen(self):
        return len(self.gen_nodes)

    @property
    def placement(self):
        P = np.zeros((self.n_nodes, self.n_gen))
        for g, r in enumerate(self.gen_nodes):
            P[r, g] = 1.0
        return P

    @property
    def incidence(self):
        B = np.zeros((self.n_nodes, len(self.lines)))
        for m, (a, b) in enumerate(self.lines):
            B[a, m] = 1.0
            B[b, m] = -1.0
        return B

    def cost(self, s):
        return np.asarray(s, dtype=float)[: self.n_gen]

    def demand(self, s):
        return np.asarray(s, dtype=float)[self.n_gen: self.n_gen + self.n_nodes]

    def region(self, s):
        G, R, M = self.n_gen, self.n_nodes, len(self.lines)
        d = self.demand(s)
        # P x - B f - d = 0 ; x >= 0 ; C - x >= 0 ; fbar + f >= 0 ; fbar - f >= 0
        F = np.vstack([self.placement, np.eye(G), -np.eye(G), np.zeros((2 * M, G))])
        E = np.vstack([-self.incidence, np.zeros((2 * G, M)), np.eye(M), -np.eye(M)])
        f = np.concatenate([d, np.zeros(G), -self.gen_cap, -self.line_cap, -self.line_cap])
        return Region(F, E, f, (Cone(ZERO, R), Cone(NONNEG, 2 * G + 2 * M)))

    def to_dict(self):
        return {"name": self.name, "n_nodes": self.n_nodes, "gen_nodes": self.gen_nodes,
                "lines": [list(l) for l in self.lines], "gen_cap": self.gen_cap.tolist(),
                "line_cap": self.line_cap.tolist()}


def oracle_from_dict(d):
    name = d["name"]
    if name == "toy":
        return ToyDispatchOracle()
    if name == "l1_ball":
        return L1BallOracle(d["center"], d["radius"])
    if name == "network":
        return NetworkDispatchOracle(d["n_nodes"], d["gen_nodes"], d["lines"], d["gen_cap"], d["line_cap"])
    raise ValueError(f"unknown oracle {name!r}")
