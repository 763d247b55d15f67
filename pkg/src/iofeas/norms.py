"""Norm choices for the losses and their conic encodings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import NONNEG, SOC, Cone

NORMS = ("l1", "l2", "l2_squared", "linf")
PAIR_NORMS = ("l1", "l2", "linf")

_ALIASES = {"l2sq": "l2_squared", "sq": "l2_squared", "inf": "linf"}


def canonical(kind):
    kind = _ALIASES.get(kind, kind)
    if kind not in NORMS:
        raise ValueError(f"unknown norm {kind!r}; expected one of {NORMS}")
    return kind


@dataclass(frozen=True)
class NormSpec:
    """Norm on the repositioning ``gamma`` and on the pair ``(gamma_f, gamma_o)``.

    The pair norm defaults to the separable ``|gamma_f| + |gamma_o|``.
    """

    kind: str = "l2_squared"
    pair: str = "l1"

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical(self.kind))
        if self.pair not in PAIR_NORMS:
            raise ValueError(f"pair norm must be one of {PAIR_NORMS}")

    def value(self, v):
        return norm_value(self.kind, v)

    def pair_value(self, gf, go):
        return norm_value(self.pair, np.array([gf, go]))


def norm_value(kind, v):
    v = np.asarray(v, dtype=float).reshape(-1)
    if kind == "l1":
        return float(np.abs(v).sum())
    if kind == "l2":
        return float(np.linalg.norm(v))
    if kind == "l2_squared":
        return float(v @ v)
    if kind == "linf":
        return float(np.max(np.abs(v), initial=0.0))
    raise ValueError(kind)


def add_norm_objective(prog, idx, weight, kind):
    """Add ``weight * ||v[idx]||`` to the objective of ``prog``."""
    idx = np.asarray(idx)
    if kind == "l2_squared":
        # 1/2 v'Qv convention
        prog.add_diag_quadratic(idx, 2.0 * weight)
        return
    t = add_norm_epigraph(prog, idx, kind)
    prog.add_linear(t, weight)


def add_norm_objective_many(prog, idx, weight, kind):
    """Same as :func:`add_norm_objective` for a 2-D array of row-wise index groups."""
    idx = np.atleast_2d(np.asarray(idx))
    if kind == "l2_squared":
        prog.add_diag_quadratic(idx.ravel(), 2.0 * weight)
        return
    t = add_norm_epigraph_many(prog, idx, kind)
    prog.add_linear(t, weight)


def add_norm_epigraph(prog, idx, kind):
    """New variable ``t`` with ``t >= ||v[idx]||``; returns its index."""
    return int(add_norm_epigraph_many(prog, np.atleast_2d(idx), kind)[0])


def add_norm_epigraph_many(prog, idx, kind):
    """Vectorized epigraphs, one per row of ``idx``; returns the t indices."""
    idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
    G, d = idx.shape
    t = prog.add_vars(G)
    if kind == "l1":
        u = prog.add_vars(G * d).reshape(G, d)
        # u >= v, u >= -v, t >= sum(u)
        rows_idx = np.stack([u.ravel(), idx.ravel()], axis=1)
        prog.add_rows(rows_idx, np.array([1.0, -1.0]), np.zeros(G * d), NONNEG)
        prog.add_rows(rows_idx, np.array([1.0, 1.0]), np.zeros(G * d), NONNEG)
        prog.add_rows(np.hstack([t[:, None], u]), np.concatenate([[1.0], -np.ones(d)]), np.zeros(G), NONNEG)
    elif kind == "linf":
        tt = np.repeat(t, d)
        rows_idx = np.stack([tt, idx.ravel()], axis=1)
        prog.add_rows(rows_idx, np.array([1.0, -1.0]), np.zeros(G * d), NONNEG)
        prog.add_rows(rows_idx, np.array([1.0, 1.0]), np.zeros(G * d), NONNEG)
    elif kind == "l2":
        for g in range(G):
            m = d + 1
            rows = np.arange(m)
            cols = np.concatenate([[t[g]], idx[g]])
            prog.add_constraint((rows, cols, np.ones(m), m), np.zeros(m), Cone(SOC, m))
    elif kind == "l2_squared":
        # ||v||^2 <= t  <=>  ||(2v, t - 1)|| <= t + 1
        for g in range(G):
            m = d + 2
            rows = np.concatenate([[0, 1], np.arange(2, m)])
            cols = np.concatenate([[t[g], t[g]], idx[g]])
            vals = np.concatenate([[1.0, 1.0], 2.0 * np.ones(d)])
            prog.add_constraint((rows, cols, vals, m), np.array([-1.0, 1.0] + [0.0] * d), Cone(SOC, m))
    else:
        raise ValueError(kind)
    return t
