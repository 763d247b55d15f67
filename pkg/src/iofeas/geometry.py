"""Conic primitive sets ``Z = {z : H z - h in K}`` and their cones.

Every primitive set is stored in one normal form: a matrix ``H``, a vector
``h`` and an ordered product of cones (zero, nonnegative orthant,
second-order).  Sets that need auxiliary variables (the L1 ball) carry the
extra variables as trailing columns of ``H``; the first ``p`` columns are
the "natural" coordinates a hypothesis acts on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOL = 1e-9

ZERO = "zero"
NONNEG = "nonneg"
SOC = "soc"
_KINDS = (ZERO, NONNEG, SOC)

PRIMITIVE_KINDS = ("simplex", "binary_simplex", "box", "l1_ball", "l2_ball")


class InvalidParameter(ValueError):
    """Raised when a constructor receives an out-of-range parameter."""


@dataclass(frozen=True)
class Cone:
    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidParameter(f"unknown cone kind {self.kind!r}")
        if int(self.dim) < 1:
            raise InvalidParameter("cone dimension must be positive")

    def to_dict(self):
        return {"kind": self.kind, "dim": int(self.dim)}


def cone_dim(cones):
    return int(sum(c.dim for c in cones))


def _blocks(cones, v):
    start = 0
    for c in cones:
        yield c, v[start:start + c.dim]
        start += c.dim


def cone_violation(cone, v):
    """Distance-like violation of ``v`` with respect to ``cone`` (0 if inside)."""
    v = np.asarray(v, dtype=float)
    if cone.kind == ZERO:
        return float(np.max(np.abs(v))) if v.size else 0.0
    if cone.kind == NONNEG:
        return float(max(0.0, -np.min(v))) if v.size else 0.0
    t, u = v[0], v[1:]
    return float(max(0.0, np.linalg.norm(u) - t))


def dual_cone_violation(cone, lam):
    lam = np.asarray(lam, dtype=float)
    if cone.kind == ZERO:
        return 0.0
    # orthant and second-order cone are self-dual
    return cone_violation(cone, lam)


def in_cone(cones, v, tol=DEFAULT_TOL):
    v = np.asarray(v, dtype=float)
    if v.shape != (cone_dim(cones),):
        raise ValueError(f"vector of length {v.size} does not match cone product of dim {cone_dim(cones)}")
    return all(cone_violation(c, blk) <= tol for c, blk in _blocks(cones, v))


def in_dual_cone(cones, lam, tol=DEFAULT_TOL):
    """True iff each block of ``lam`` lies in the dual of its cone within ``tol``.

    The dual of the zero cone is the whole space; the orthant and the
    second-order cone are self-dual.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (cone_dim(cones),):
        raise ValueError(f"vector of length {lam.size} does not match cone product of dim {cone_dim(cones)}")
    return all(dual_cone_violation(c, blk) <= tol for c, blk in _blocks(cones, lam))


@dataclass(frozen=True, eq=False)
class PrimitiveSet:
    """A conic set ``{z : H z - h in K}``.

    ``p`` counts the natural coordinates; ``H`` may have extra trailing
    columns for lifted auxiliary variables (``n_aux``).
    """

    H: np.ndarray
    h: np.ndarray
    cones: tuple
    p: int
    integrality: tuple = ()
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.asarray(self.h, dtype=float).reshape(-1)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "cones", tuple(self.cones))
        if not self.integrality:
            object.__setattr__(self, "integrality", (False,) * int(self.p))
        else:
            object.__setattr__(self, "integrality", tuple(bool(f) for f in self.integrality))
        if H.shape[0] != h.size or h.size != cone_dim(self.cones):
            raise ValueError(f"inconsistent dims: H {H.shape}, h {h.size}, cones {cone_dim(self.cones)}")
        if not 1 <= self.p <= H.shape[1]:
            raise ValueError("natural dimension p must be within the column count of H")
        if len(self.integrality) != self.p:
            raise ValueError("integrality flags must have length p")
        H.setflags(write=False)
        h.setflags(write=False)

    @property
    def l(self):
        return self.H.shape[0]

    @property
    def p_total(self):
        return self.H.shape[1]

    @property
    def n_aux(self):
        return self.p_total - self.p

    @property
    def is_integral(self):
        return any(self.integrality)

    def lift(self, z):
        """Canonical auxiliary values completing natural coordinates ``z``."""
        z = np.asarray(z, dtype=float)
        if self.n_aux == 0:
            return z
        if self.kind == "l1_ball":
            return np.concatenate([z, np.abs(z)])
        return None

    def canonical_member(self):
        if self.kind in ("simplex", "binary_simplex"):
            z = np.zeros(self.p)
            z[0] = self.params.get("scale", 1.0)
            return z
        if self.kind == "box":
            lo, hi = _bounds_arrays(self.params, self.p)
            return 0.5 * (lo + hi)
        return np.zeros(self.p)

    def to_dict(self):
        return {
            "kind": self.kind,
            "dim": int(self.p),
            "params": _jsonable(self.params),
            "H": self.H.tolist(),
            "h": self.h.tolist(),
            "cones": [c.to_dict() for c in self.cones],
            "integrality": list(self.integrality),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            H=np.asarray(d["H"], dtype=float),
            h=np.asarray(d["h"], dtype=float),
            cones=tuple(Cone(c["kind"], int(c["dim"])) for c in d["cones"]),
            p=int(d["dim"]),
            integrality=tuple(d.get("integrality", ())),
            kind=d.get("kind", "custom"),
            params=dict(d.get("params", {})),
        )


def _jsonable(params):
    out = {}
    for k, v in params.items():
        out[k] = np.asarray(v).tolist() if isinstance(v, np.ndarray) else v
    return out


def _bounds_arrays(params, dim):
    lo = np.broadcast_to(np.asarray(params.get("lower", -1.0), dtype=float), (dim,)).copy()
    hi = np.broadcast_to(np.asarray(params.get("upper", 1.0), dtype=float), (dim,)).copy()
    return lo, hi


def make_primitive(kind, dim, **params):
    """Build a standard primitive set in conic normal form.

    Parameters
    ----------
    kind : {'simplex', 'binary_simplex', 'box', 'l1_ball', 'l2_ball'}
    dim : int
        Number of natural coordinates ``p``.
    **params
        ``scale`` (simplex total, default 1), ``lower``/``upper`` (box,
        scalars or arrays, default -1/1), ``radius`` (balls, default 1).
    """
    dim = int(dim)
    if dim < 1:
        raise InvalidParameter("dim must be >= 1")
    eye = np.eye(dim)
    if kind in ("simplex", "binary_simplex"):
        scale = float(params.get("scale", 1.0))
        if scale <= 0:
            raise InvalidParameter("simplex scale must be positive")
        H = np.vstack([eye, np.ones((1, dim))])
        h = np.concatenate([np.zeros(dim), [scale]])
        cones = (Cone(NONNEG, dim), Cone(ZERO, 1))
        integ = (kind == "binary_simplex",) * dim
        return PrimitiveSet(H, h, cones, dim, integ, kind, {"scale": scale})
    if kind == "box":
        lo, hi = _bounds_arrays(params, dim)
        if np.any(lo > hi):
            raise InvalidParameter("box lower bound exceeds upper bound")
        H = np.vstack([eye, -eye])
        h = np.concatenate([lo, -hi])
        p = {"lower": params.get("lower", -1.0), "upper": params.get("upper", 1.0)}
        return PrimitiveSet(H, h, (Cone(NONNEG, 2 * dim),), dim, (), kind, p)
    if kind == "l1_ball":
        r = float(params.get("radius", 1.0))
        if r <= 0:
            raise InvalidParameter("radius must be positive")
        # columns (z, t): t - z >= 0, t + z >= 0, r - sum(t) >= 0
        H = np.block([
            [-eye, eye],
            [eye, eye],
            [np.zeros((1, dim)), -np.ones((1, dim))],
        ])
        h = np.concatenate([np.zeros(2 * dim), [-r]])
        return PrimitiveSet(H, h, (Cone(NONNEG, 2 * dim + 1),), dim, (), kind, {"radius": r})
    if kind == "l2_ball":
        r = float(params.get("radius", 1.0))
        if r <= 0:
            raise InvalidParameter("radius must be positive")
        H = np.vstack([np.zeros((1, dim)), eye])
        h = np.concatenate([[-r], np.zeros(dim)])
        return PrimitiveSet(H, h, (Cone(SOC, dim + 1),), dim, (), kind, {"radius": r})
    raise InvalidParameter(f"unknown primitive kind {kind!r}")


def contains(Z, z, tol=DEFAULT_TOL):
    """Membership test for ``z`` (natural or full-length) in ``Z``.

    Natural-length input on a lifted set is completed with the canonical
    lift when one is known, otherwise by a feasibility solve over the
    auxiliary columns.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size == Z.p_total:
        full = z
    elif z.size == Z.p:
        full = Z.lift(z)
        if full is None:
            return _contains_by_solve(Z, z, tol)
    else:
        raise ValueError(f"point of length {z.size} does not match set dimension {Z.p}")
    if not in_cone(Z.cones, Z.H @ full - Z.h, tol):
        return False
    for j, flag in enumerate(Z.integrality):
        if flag and abs(full[j] - round(full[j])) > tol:
            return False
    return True


def _contains_by_solve(Z, z, tol):
    from .conic import ConicProgram, solve

    H_nat, H_aux = Z.H[:, :Z.p], Z.H[:, Z.p:]
    prog = ConicProgram(Z.n_aux)
    prog.add_constraint(H_aux, Z.h - H_nat @ z, list(Z.cones))
    sol = solve(prog)
    if sol.status != "optimal":
        return False
    return contains(Z, np.concatenate([z, sol.primal]), max(tol, 1e-7))
