"""One solver contract for LP, convex QP and SOCP subproblems.

Programs are written as::

    minimize    1/2 v'Qv + c'v
    subject to  A_j v - b_j in K_j      for every constraint block j
                lo <= v <= hi           (optional per-variable bounds)

Duals follow the Lagrangian ``L = 1/2 v'Qv + c'v - sum_j y_j'(A_j v - b_j)``
with ``y_j`` in the dual cone ``K_j*``, so stationarity reads
``Qv + c = sum_j A_j' y_j``.  The backend is Clarabel (interior point);
its ``Ax + s = b, s in K`` form is reached by negating every block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

from .geometry import NONNEG, SOC, ZERO, Cone, cone_dim, cone_violation, dual_cone_violation

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"
ITERATION_LIMIT = "iteration_limit"


@dataclass
class SolveOptions:
    feas_tol: float = 1e-7
    gap_tol: float = 1e-6
    max_iters: int = 200
    deterministic: bool = True
    # tolerances handed to the backend; tighter than the acceptance check
    backend_tol: float = 1e-9


@dataclass
class _Block:
    A: sp.csr_matrix
    b: np.ndarray
    cones: tuple


class ConicProgram:
    """Mutable builder for a conic program; freeze by passing it to :func:`solve`."""

    def __init__(self, num_vars=0):
        self.num_vars = int(num_vars)
        self._lin = []
        self._q = []
        self.blocks = []
        self.lower = None
        self.upper = None

    # -- variables -----------------------------------------------------
    def add_vars(self, k):
        """Append ``k`` variables and return their index range."""
        start = self.num_vars
        self.num_vars += int(k)
        return np.arange(start, start + int(k))

    def set_bounds(self, idx, lo=None, hi=None):
        if self.lower is None:
            self.lower = {}
            self.upper = {}
        for i in np.atleast_1d(idx):
            if lo is not None:
                self.lower[int(i)] = float(lo)
            if hi is not None:
                self.upper[int(i)] = float(hi)

    # -- objective -----------------------------------------------------
    def add_linear(self, idx, coef):
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape)
        self._lin.append((idx.ravel(), coef.ravel().copy()))

    def add_quadratic(self, rows, cols, vals):
        """Add entries to Q (the 1/2 v'Qv term); pass both triangles for off-diagonals."""
        self._q.append((np.asarray(rows, dtype=np.int64).ravel(), np.asarray(cols, dtype=np.int64).ravel(),
                        np.asarray(vals, dtype=float).ravel()))

    def add_diag_quadratic(self, idx, weight):
        idx = np.atleast_1d(idx)
        self.add_quadratic(idx, idx, np.broadcast_to(np.asarray(weight, dtype=float), idx.shape))

    @property
    def c(self):
        c = np.zeros(self.num_vars)
        for i, v in self._lin:
            np.add.at(c, i, v)
        return c

    @property
    def Q(self):
        if not self._q:
            return None
        r = np.concatenate([q[0] for q in self._q])
        cc = np.concatenate([q[1] for q in self._q])
        v = np.concatenate([q[2] for q in self._q])
        return sp.csc_matrix((v, (r, cc)), shape=(self.num_vars, self.num_vars))

    # -- constraints ---------------------------------------------------
    def add_constraint(self, A, b, cones):
        """Add ``A v - b in K`` and return the block index.

        ``A`` may be dense, sparse, or a ``(rows, cols, vals, m)`` triplet
        with column indices into the full variable vector.
        """
        if isinstance(cones, Cone):
            cones = (cones,)
        cones = tuple(cones)
        b = np.asarray(b, dtype=float).reshape(-1)
        if isinstance(A, tuple):
            r, cidx, v, m = A
            A = sp.csr_matrix((np.asarray(v, dtype=float), (np.asarray(r), np.asarray(cidx))), shape=(m, self.num_vars))
        elif sp.issparse(A):
            A = sp.csr_matrix(A)
            if A.shape[1] < self.num_vars:
                A = sp.hstack([A, sp.csr_matrix((A.shape[0], self.num_vars - A.shape[1]))], format="csr")
        else:
            A = np.atleast_2d(np.asarray(A, dtype=float))
            if A.shape[1] < self.num_vars:
                A = np.hstack([A, np.zeros((A.shape[0], self.num_vars - A.shape[1]))])
            A = sp.csr_matrix(A)
        if A.shape[0] != b.size or b.size != cone_dim(cones):
            raise ValueError(f"block rows {A.shape[0]}, rhs {b.size} and cone dim {cone_dim(cones)} disagree")
        self.blocks.append(_Block(A, b, cones))
        return len(self.blocks) - 1

    def add_rows(self, idx, coef, b, kind):
        """Convenience: one row per entry of ``b`` with sparse coefficients.

        ``idx`` and ``coef`` are 2-D arrays (rows x terms) of variable
        indices and coefficients.
        """
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape)
        m = idx.shape[0]
        rows = np.repeat(np.arange(m), idx.shape[1])
        return self.add_constraint((rows, idx.ravel(), coef.ravel(), m), b, Cone(kind, m))

    def matrices(self):
        """Stacked ``(A, b, cones)`` over all blocks, padded to full width."""
        mats = []
        for blk in self.blocks:
            A = blk.A
            if A.shape[1] < self.num_vars:
                A = sp.hstack([A, sp.csr_matrix((A.shape[0], self.num_vars - A.shape[1]))], format="csr")
            mats.append(A)
        if mats:
            A = sp.vstack(mats, format="csr")
            b = np.concatenate([blk.b for blk in self.blocks])
        else:
            A = sp.csr_matrix((0, self.num_vars))
            b = np.zeros(0)
        cones = [c for blk in self.blocks for c in blk.cones]
        return A, b, cones

    def bound_arrays(self):
        lo = np.full(self.num_vars, -np.inf)
        hi = np.full(self.num_vars, np.inf)
        if self.lower is not None:
            for i, v in self.lower.items():
                lo[i] = v
            for i, v in self.upper.items():
                hi[i] = v
        return lo, hi


@dataclass
class ConicSolution:
    status: str
    primal: np.ndarray
    objective_value: float
    duals: list = field(default_factory=list)
    bound_duals: tuple = (None, None)
    iterations: int = 0
    solve_time: float = 0.0

    @property
    def ok(self):
        return self.status == OPTIMAL


_STATUS = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
    "MaxIterations": ITERATION_LIMIT,
    "MaxTime": ITERATION_LIMIT,
}


def _clarabel_cones(cones):
    out = []
    for c in cones:
        if out and c.kind != SOC and out[-1][0] == c.kind:
            out[-1][1] += c.dim
        else:
            out.append([c.kind, c.dim])
    res = []
    for kind, dim in out:
        if kind == ZERO:
            res.append(clarabel.ZeroConeT(dim))
        elif kind == NONNEG:
            res.append(clarabel.NonnegativeConeT(dim))
        else:
            res.append(clarabel.SecondOrderConeT(dim))
    return res


def solve(prog, opts=None):
    """Solve ``prog`` and return primal values and per-block duals.

    Never raises on infeasible or unbounded input; the status carries it.
    """
    opts = opts or SolveOptions()
    n = prog.num_vars
    A, b, cones = prog.matrices()
    lo, hi = prog.bound_arrays()
    has_lo = np.where(np.isfinite(lo))[0]
    has_hi = np.where(np.isfinite(hi))[0]
    if has_lo.size or has_hi.size:
        Ab = sp.vstack([
            sp.csr_matrix((np.ones(has_lo.size), (np.arange(has_lo.size), has_lo)), shape=(has_lo.size, n)),
            sp.csr_matrix((-np.ones(has_hi.size), (np.arange(has_hi.size), has_hi)), shape=(has_hi.size, n)),
        ], format="csr")
        A = sp.vstack([A, Ab], format="csr")
        b = np.concatenate([b, lo[has_lo], -hi[has_hi]])
        cones = list(cones) + [Cone(NONNEG, has_lo.size + has_hi.size)]

    Q = prog.Q
    P = sp.triu(Q, format="csc") if Q is not None else sp.csc_matrix((n, n))
    q = prog.c

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = int(opts.max_iters)
    settings.tol_gap_abs = opts.backend_tol
    settings.tol_gap_rel = opts.backend_tol
    settings.tol_feas = opts.backend_tol
    settings.tol_ktratio = 1e-7
    settings.presolve_enable = True

    m = A.shape[0]
    if m == 0:
        # clarabel needs at least one row; a vacuous nonnegative row is harmless
        A = sp.csr_matrix((1, n))
        b = -np.ones(1)
        cones = [Cone(NONNEG, 1)]
    solver = clarabel.DefaultSolver(P, q, sp.csc_matrix(-A), -b, _clarabel_cones(cones), settings)
    res = solver.solve()
    status = _STATUS.get(str(res.status).split(".")[-1], NUMERICAL_FAILURE)
    x = np.asarray(res.x, dtype=float)
    y = np.asarray(res.z, dtype=float)
    duals, start = [], 0
    for blk in prog.blocks:
        k = blk.b.size
        duals.append(y[start:start + k])
        start += k
    bduals = (None, None)
    if has_lo.size or has_hi.size:
        yl = np.zeros(n)
        yh = np.zeros(n)
        yl[has_lo] = y[start:start + has_lo.size]
        yh[has_hi] = y[start + has_lo.size:start + has_lo.size + has_hi.size]
        bduals = (yl, yh)
    obj = float(res.obj_val) if status == OPTIMAL else math.nan
    if status == UNBOUNDED:
        obj = -math.inf
    elif status == INFEASIBLE:
        obj = math.inf
    sol = ConicSolution(status, x, obj, duals, bduals, int(res.iterations), float(res.solve_time))
    if str(res.status).endswith("AlmostSolved"):
        r = kkt_residuals(prog, sol)
        if max(r["primal"], r["dual_cone"], r["stationarity"]) > opts.feas_tol or r["gap"] > opts.gap_tol:
            sol.status = NUMERICAL_FAILURE
    return sol


def kkt_residuals(prog, sol):
    """Scaled KKT residuals of a returned solution.

    Returns a dict with primal cone violation, dual cone violation,
    stationarity residual and duality gap, each relative to data scale.
    """
    v = sol.primal
    Q = prog.Q
    c = prog.c
    grad = c + (Q @ v if Q is not None else 0.0)
    ATy = np.zeros(prog.num_vars)
    prim = 0.0
    dual = 0.0
    comp = 0.0
    bscale = 1.0
    for blk, y in zip(prog.blocks, sol.duals):
        w = blk.A.shape[1]
        r = blk.A @ v[:w] - blk.b
        bscale = max(bscale, float(np.max(np.abs(blk.b))) if blk.b.size else 0.0)
        start = 0
        for cone in blk.cones:
            prim = max(prim, cone_violation(cone, r[start:start + cone.dim]))
            dual = max(dual, dual_cone_violation(cone, y[start:start + cone.dim]))
            start += cone.dim
        ATy[:w] += blk.A.T @ y
        comp += float(y @ r)
    lo, hi = prog.bound_arrays()
    yl, yh = sol.bound_duals
    if yl is not None:
        fl = np.isfinite(lo)
        fh = np.isfinite(hi)
        prim = max(prim, float(np.max(np.maximum(lo[fl] - v[fl], 0.0), initial=0.0)),
                   float(np.max(np.maximum(v[fh] - hi[fh], 0.0), initial=0.0)))
        ATy += yl - yh
        comp += float(yl[fl] @ (v[fl] - lo[fl])) + float(yh[fh] @ (hi[fh] - v[fh]))
        dual = max(dual, float(np.max(-yl, initial=0.0)), float(np.max(-yh, initial=0.0)))
    stat = float(np.max(np.abs(grad - ATy), initial=0.0))
    pobj = float(c @ v + (0.5 * v @ (Q @ v) if Q is not None else 0.0))
    return {
        "primal": prim / bscale,
        "dual_cone": dual,
        "stationarity": stat / (1.0 + float(np.max(np.abs(c), initial=0.0))),
        "gap": abs(comp) / (1.0 + abs(pobj)),
    }


def dual_objective(prog, sol):
    """Lagrange dual value ``-1/2 v'Qv + sum_j b_j'y_j`` at the returned pair."""
    v = sol.primal
    Q = prog.Q
    val = -0.5 * float(v @ (Q @ v)) if Q is not None else 0.0
    for blk, y in zip(prog.blocks, sol.duals):
        val += float(blk.b @ y)
    lo, hi = prog.bound_arrays()
    yl, yh = sol.bound_duals
    if yl is not None:
        fl = np.isfinite(lo)
        fh = np.isfinite(hi)
        val += float(yl[fl] @ lo[fl]) - float(yh[fh] @ hi[fh])
    return val


# -- plain-text dump -----------------------------------------------------
#
#   VARS <n>
#   OBJ <c_0> ... <c_{n-1}>
#   QUAD <i>,<j>,<v>;...                 (optional; full symmetric Q)
#   BLOCK <kind>:<dim>[,<kind>:<dim>...] | <i>,<j>,<v>;... | <b_0> ... <b_{m-1}>
#   BOUNDS <lo_0>:<hi_0> ...            (optional; -inf / inf allowed)
#
# one constraint block per line, row indices local to the block.

def dump_text(prog, path=None):
    lines = ["# iofeas conic program v1", f"VARS {prog.num_vars}",
             "OBJ " + " ".join(repr(float(v)) for v in prog.c)]
    Q = prog.Q
    if Q is not None:
        Qc = sp.coo_matrix(Q)
        Qc.sum_duplicates()
        lines.append("QUAD " + ";".join(f"{i},{j},{float(v)!r}" for i, j, v in zip(Qc.row, Qc.col, Qc.data)))
    for blk in prog.blocks:
        A = sp.coo_matrix(blk.A)
        cones = ",".join(f"{c.kind}:{c.dim}" for c in blk.cones)
        trip = ";".join(f"{i},{j},{float(v)!r}" for i, j, v in zip(A.row, A.col, A.data))
        lines.append(f"BLOCK {cones} | {trip} | " + " ".join(repr(float(v)) for v in blk.b))
    if prog.lower is not None:
        lo, hi = prog.bound_arrays()
        lines.append("BOUNDS " + " ".join(f"{float(a)!r}:{float(b)!r}" for a, b in zip(lo, hi)))
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def load_text(text):
    prog = None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tag, _, rest = line.partition(" ")
        if tag == "VARS":
            prog = ConicProgram(int(rest))
        elif tag == "OBJ":
            prog.add_linear(np.arange(prog.num_vars), [float(v) for v in rest.split()])
        elif tag == "QUAD":
            ent = [t.split(",") for t in rest.split(";") if t]
            prog.add_quadratic([int(e[0]) for e in ent], [int(e[1]) for e in ent], [float(e[2]) for e in ent])
        elif tag == "BLOCK":
            cones_s, trip_s, b_s = (s.strip() for s in rest.split("|"))
            cones = [Cone(k, int(d)) for k, d in (c.split(":") for c in cones_s.split(","))]
            b = np.array([float(v) for v in b_s.split()]) if b_s else np.zeros(0)
            ent = [t.split(",") for t in trip_s.split(";") if t]
            rows = [int(e[0]) for e in ent]
            cols = [int(e[1]) for e in ent]
            vals = [float(e[2]) for e in ent]
            prog.add_constraint((rows, cols, vals, b.size), b, cones)
        elif tag == "BOUNDS":
            for i, tok in enumerate(rest.split()):
                a, bb = tok.split(":")
                a, bb = float(a), float(bb)
                prog.set_bounds(i, None if math.isinf(a) else a, None if math.isinf(bb) else bb)
    return prog
