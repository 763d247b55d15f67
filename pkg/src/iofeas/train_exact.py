"""Exact trainers for restricted hypotheses.

* ``train_convex_alpha``: ``A(s) = alpha I`` becomes convex after the
  substitution ``zeta_i = alpha z_i``.
* ``train_milp_simplex``: binary simplex ``z``; every product of a binary
  ``z`` entry with a bounded ``A`` entry is linearized exactly (McCormick).
* ``train_network_milp``: line-existence binaries gate fixed signed
  incidence columns; solved by enumeration or by best-first
  branch-and-bound over QP relaxations.
* ``fit_regression_baseline``: affine least squares, expressed as a
  degenerate hypothesis so it runs through the same evaluation.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import highspy
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .conic import OPTIMAL, ConicProgram, SolveOptions, solve
from .geometry import NONNEG, SOC, ZERO, Cone, make_primitive
from .hypothesis import FREE, SCALAR_ALPHA, SIGNED_INCIDENCE, HypothesisParams
from .norms import NormSpec, add_norm_epigraph_many, add_norm_objective_many, norm_value
from .train_bcd import PRED, SUB, canonical_loss


class ExactTrainingError(RuntimeError):
    pass


def _signals1(data):
    return np.hstack([np.ones((data.N, 1)), data.signals])


def mccormick_rows(M):
    """Coefficients of the exact linearization of ``w = a * y``.

    For binary ``y`` and ``a`` in ``[-M, M]`` the four inequalities
    ``w - M y <= 0``, ``-w - M y <= 0``, ``w - a + M y <= M``,
    ``-w + a + M y <= M`` hold iff ``w = a y``.  Returned as rows over
    ``(w, a, y)`` with their right-hand sides.
    """
    rows = np.array([[1.0, 0.0, -M], [-1.0, 0.0, -M], [1.0, -1.0, M], [-1.0, 1.0, M]])
    rhs = np.array([0.0, 0.0, M, M])
    return rows, rhs


def mccormick_feasible(w, a, y, M, tol=0.0):
    rows, rhs = mccormick_rows(M)
    return bool(np.all(rows @ np.array([w, a, y]) <= rhs + tol))


# ---------------------------------------------------------------------------
# convex scalar-alpha trainer
# ---------------------------------------------------------------------------

@dataclass
class AlphaResult:
    theta: HypothesisParams
    alpha: float
    b: np.ndarray
    train_loss: float
    status: str
    solve_time: float


def train_convex_alpha(data, Z, obj, norm=None, loss_kind=PRED, b_free=None, opts=None):
    """Globally optimal ``(alpha, b_k)`` for the hypothesis ``A(s) = alpha I``.

    ``b_free`` selects which ``b_k`` may be nonzero (all by default).
    """
    loss_kind = canonical_loss(loss_kind)
    norm = norm or NormSpec()
    N, n, K = data.N, data.n, data.K
    if Z.p != n:
        raise ValueError("scalar-alpha hypothesis needs the primitive dimension to equal n")
    b_free = np.ones(K + 1, dtype=bool) if b_free is None else np.asarray(b_free, dtype=bool)
    S1 = _signals1(data)[:, b_free]
    nb = int(b_free.sum())
    X = data.decisions
    C = obj.batch(data.signals)
    pt, l = Z.p_total, Z.l

    prog = ConicProgram()
    alpha = prog.add_vars(1)[0]
    bv = prog.add_vars(nb * n).reshape(nb, n)
    gam = prog.add_vars(N * n).reshape(N, n)
    zeta = prog.add_vars(N * pt).reshape(N, pt)
    lam = prog.add_vars(N * l).reshape(N, l)
    prog.add_rows([[alpha]], 1.0, [0.0], NONNEG)
    Hr, Hc = np.nonzero(Z.H)
    Hv = Z.H[Hr, Hc]
    for i in range(N):
        # x + gamma - zeta - b(s) = 0
        A = np.zeros((n, prog.num_vars))
        A[np.arange(n), gam[i]] = 1.0
        A[np.arange(n), zeta[i, :n]] = -1.0
        for k in range(nb):
            A[np.arange(n), bv[k]] = -S1[i, k]
        prog.add_constraint(A, -X[i], Cone(ZERO, n))
        # H zeta - alpha h in K
        prog.add_constraint((np.concatenate([Hr, np.arange(l)]),
                             np.concatenate([zeta[i, Hc], np.full(l, alpha)]),
                             np.concatenate([Hv, -Z.h]), l), np.zeros(l), Z.cones)
        # lambda in K*
        off = 0
        for cone in Z.cones:
            if cone.kind != ZERO:
                idx = lam[i, off:off + cone.dim]
                prog.add_constraint((np.arange(cone.dim), idx, np.ones(cone.dim), cone.dim),
                                    np.zeros(cone.dim), cone)
            off += cone.dim
        # alpha c - H' lambda = 0 on natural columns, -H' lambda = 0 on lifted ones
        rows = np.concatenate([Hc, np.arange(n)])
        cols = np.concatenate([lam[i, Hr], np.full(n, alpha)])
        vals = np.concatenate([-Hv, C[i]])
        prog.add_constraint((rows, cols, vals, pt), np.zeros(pt), Cone(ZERO, pt))
    # value rows: h'lam + c'b(s) [- c'gamma | + gamma_o] >= c'x
    go = prog.add_vars(N) if loss_kind == SUB else None
    for i in range(N):
        cols = [lam[i], bv.ravel()]
        vals = [Z.h, (S1[i][:, None] * C[i][None, :]).ravel()]
        if loss_kind == PRED:
            cols.append(gam[i]); vals.append(-C[i])
        else:
            cols.append([go[i]]); vals.append([1.0])
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        prog.add_constraint((np.zeros(cols.size, dtype=int), cols, vals, 1), [C[i] @ X[i]], Cone(NONNEG, 1))
    w = 1.0 / N
    if loss_kind == PRED:
        add_norm_objective_many(prog, gam, w, norm.kind)
    else:
        prog.add_rows(go[:, None], 1.0, np.zeros(N), NONNEG)
        _sub_objective(prog, gam, go, w, norm)
    sol = solve(prog, opts)
    if sol.status != OPTIMAL:
        raise ExactTrainingError(f"convex reformulation ended with status {sol.status}")
    v = sol.primal
    b = np.zeros((K + 1, n))
    b[b_free] = v[bv]
    a = max(float(v[alpha]), 0.0)
    G = v[gam]
    if loss_kind == PRED:
        loss = math.fsum(norm.value(g) for g in G) / N
    else:
        loss = math.fsum(norm.pair_value(norm.value(g), max(o, 0.0)) for g, o in zip(G, v[go])) / N
    theta = HypothesisParams(np.zeros((K + 1, n, n)), b, SCALAR_ALPHA, (False,) * (K + 1),
                             tuple(bool(f) for f in b_free), alpha=a,
                             provenance={"trainer": "convex", "loss": loss_kind})
    return AlphaResult(theta, a, b, loss, sol.status, sol.solve_time)


def _sub_objective(prog, gam, go, w, norm):
    if norm.pair == "l1":
        add_norm_objective_many(prog, gam, w, norm.kind)
        prog.add_linear(go, w)
    else:
        tf = add_norm_epigraph_many(prog, gam, norm.kind)
        t = add_norm_epigraph_many(prog, np.stack([tf, go], axis=1), norm.pair)
        prog.add_linear(t, w)


# ---------------------------------------------------------------------------
# binary-simplex MILP
# ---------------------------------------------------------------------------

@dataclass
class MilpResult:
    theta: HypothesisParams
    train_loss: float
    mip_gap: float
    dual_bound: float
    status: str
    z: np.ndarray
    wall_time: float
    start_loss: float | None = None
    assignment_bound: float | None = None
    message: str = ""


class _Lin:
    """Sparse row collector for a mixed-integer linear program."""

    def __init__(self):
        self.nv = 0
        self.rows, self.cols, self.vals = [], [], []
        self.lo, self.hi = [], []
        self.m = 0

    def var(self, k):
        start = self.nv
        self.nv += int(k)
        return np.arange(start, start + int(k))

    def row(self, cols, vals, lo=-np.inf, hi=np.inf):
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.broadcast_to(np.asarray(vals, dtype=float), cols.shape).ravel()
        self.rows.append(np.full(cols.size, self.m))
        self.cols.append(cols)
        self.vals.append(vals)
        self.lo.append(lo)
        self.hi.append(hi)
        self.m += 1

    def matrix(self):
        return sp.csr_matrix((np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
                             shape=(self.m, self.nv))

    def violation(self, v, lb, ub):
        r = self.matrix() @ v
        lo, hi = np.array(self.lo), np.array(self.hi)
        return float(max(np.max(lo - r, initial=0.0), np.max(r - hi, initial=0.0),
                         np.max(lb - v, initial=0.0), np.max(v - ub, initial=0.0)))


def _solve_highs(L, cost, lb, ub, integrality, x0=None, time_limit=None, mip_gap=1e-6):
    """Run HiGHS on the collected model; ``x0`` is an optional feasible start."""
    A = L.matrix().tocsc()
    inf = highspy.kHighsInf
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("mip_rel_gap", float(mip_gap))
    h.setOptionValue("random_seed", 0)
    h.setOptionValue("threads", 1)
    if time_limit is not None:
        h.setOptionValue("time_limit", float(time_limit))
    lp = highspy.HighsLp()
    lp.num_col_ = L.nv
    lp.num_row_ = L.m
    lp.col_cost_ = cost
    lp.col_lower_ = np.where(np.isinf(lb), -inf, lb)
    lp.col_upper_ = np.where(np.isinf(ub), inf, ub)
    lo, hi = np.array(L.lo), np.array(L.hi)
    lp.row_lower_ = np.where(np.isinf(lo), -inf, lo)
    lp.row_upper_ = np.where(np.isinf(hi), inf, hi)
    lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    lp.a_matrix_.start_ = A.indptr
    lp.a_matrix_.index_ = A.indices
    lp.a_matrix_.value_ = A.data
    lp.integrality_ = [highspy.HighsVarType.kInteger if f else highspy.HighsVarType.kContinuous
                       for f in integrality]
    h.passModel(lp)
    if x0 is not None:
        sol = highspy.HighsSolution()
        sol.col_value = list(x0)
        sol.value_valid = True
        h.setSolution(sol)
    h.run()
    info = h.getInfo()
    ms = h.getModelStatus()
    x = np.array(h.getSolution().col_value) if info.primal_solution_status == 2 else None
    return x, info, h.modelStatusToString(ms), ms == highspy.HighsModelStatus.kOptimal


def _weighted_median_cost(P, w):
    """Minimal ``sum_j w_j ||P_j - m||_1`` over ``m`` (coordinate-wise weighted median)."""
    cost = 0.0
    for col in P.T:
        order = np.argsort(col, kind="stable")
        cw = np.cumsum(w[order])
        med = col[order][np.searchsorted(cw, 0.5 * cw[-1])]
        cost += float(w @ np.abs(col - med))
    return cost


def _set_partitions(items, max_blocks):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest, max_blocks):
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1:]
        if len(part) < max_blocks:
            yield [[first]] + part


def assignment_lower_bound(X, p, max_distinct=12):
    """Lower bound on the mean l1 predictability loss of any ``p``-column simplex hypothesis.

    With binary ``z`` every repositioned point is one of at most ``p``
    columns, so the loss is at least the continuous l1 ``p``-median cost of
    the observations.  Identical observations share a center, so the
    median is exact by enumerating partitions of the distinct rows.
    """
    X = np.asarray(X, dtype=float)
    uniq, counts = np.unique(X, axis=0, return_counts=True)
    m = uniq.shape[0]
    if m <= p:
        return 0.0
    if m > max_distinct:
        raise ValueError(f"{m} distinct observations; partition enumeration refused")
    w = counts.astype(float)
    best = math.inf
    for part in _set_partitions(list(range(m)), p):
        cost = sum(_weighted_median_cost(uniq[b], w[b]) for b in part if len(b) > 1)
        best = min(best, cost)
    return best / X.shape[0]


def _milp_start(X, C, S1, p, M):
    """Heuristic feasible ``(A_const, assignment)``: the ``p`` most frequent decisions as columns."""
    uniq, inv, counts = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    top = np.argsort(-counts, kind="stable")[:p]
    cols = np.clip(uniq[top], -M, M)
    while cols.shape[0] < p:
        cols = np.vstack([cols, cols[-1:]])
    cols = cols[np.lexsort(cols.T[::-1])]
    Acol = cols.T                                   # n x p
    vals = C @ Acol                                 # N x p
    assign = np.empty(X.shape[0], dtype=int)
    for i in range(X.shape[0]):
        opt = np.flatnonzero(vals[i] <= vals[i].min() + 1e-12)
        d = np.abs(Acol[:, opt] - X[i][:, None]).sum(axis=0)
        assign[i] = opt[int(np.argmin(d))]
    return Acol, assign


def train_milp_simplex(data, obj, p, loss_kind=PRED, norm="l1", M=10.0, a_free=None,
                       time_limit=None, mip_gap=1e-6, symmetry_breaking=True, warm_start=True):
    """Train ``A_k`` (entries in ``[-M, M]``) with a binary simplex ``z``.

    Offsets are fixed at zero: with ``sum(z) = 1``, ``A z + b`` equals
    ``(A + b 1') z`` so ``b`` adds nothing but symmetry.  The solver is
    seeded with a heuristic start (most frequent decisions as columns).
    Returns the best solution found with HiGHS' gap and dual bound.
    """
    loss_kind = canonical_loss(loss_kind)
    kind = norm.kind if isinstance(norm, NormSpec) else norm
    if kind not in ("l1", "linf"):
        raise ValueError("the MILP trainer supports the l1 and linf norms")
    N, n, K = data.N, data.n, data.K
    a_free = np.ones(K + 1, dtype=bool) if a_free is None else np.asarray(a_free, dtype=bool)
    if not a_free[0]:
        raise ValueError("the intercept A_0 must be trainable")
    S1 = _signals1(data)[:, a_free]
    kf = int(a_free.sum())
    X = data.decisions
    C = obj.batch(data.signals)
    t0 = time.perf_counter()

    L = _Lin()
    A = L.var(kf * n * p).reshape(kf, n, p)
    z = L.var(N * p).reshape(N, p)
    W = L.var(N * n * p).reshape(N, n, p)         # W[i, j, l] = A(s_i)[j, l] z[i, l]
    gam = L.var(N * n).reshape(N, n)
    u = L.var(N * n).reshape(N, n)                # |gamma|
    tnorm = L.var(N)
    lam0 = L.var(N)
    go = L.var(N) if loss_kind == SUB else None
    lb = np.full(L.nv, -np.inf)
    ub = np.full(L.nv, np.inf)
    lb[A.ravel()] = -M
    ub[A.ravel()] = M
    lb[z.ravel()] = 0.0
    ub[z.ravel()] = 1.0
    lb[u.ravel()] = 0.0
    lb[tnorm] = 0.0
    if go is not None:
        lb[go] = 0.0
    integrality = np.zeros(L.nv, dtype=bool)
    integrality[z.ravel()] = True

    for i in range(N):
        Mi = M * float(np.abs(S1[i]).sum())
        L.row(z[i], 1.0, 1.0, 1.0)
        for j in range(n):
            # x + gamma = sum_l W[i, j, l]
            L.row(np.concatenate([[gam[i, j]], W[i, j]]), np.concatenate([[1.0], -np.ones(p)]), -X[i, j], -X[i, j])
            for q in range(p):
                a_cols, a_vals = A[:, j, q], S1[i]
                w, y = W[i, j, q], z[i, q]
                L.row([w, y], [1.0, -Mi], hi=0.0)
                L.row([w, y], [-1.0, -Mi], hi=0.0)
                L.row(np.concatenate([[w, y], a_cols]), np.concatenate([[1.0, Mi], -a_vals]), hi=Mi)
                L.row(np.concatenate([[w, y], a_cols]), np.concatenate([[-1.0, Mi], a_vals]), hi=Mi)
            L.row([u[i, j], gam[i, j]], [1.0, -1.0], lo=0.0)
            L.row([u[i, j], gam[i, j]], [1.0, 1.0], lo=0.0)
        if kind == "l1":
            L.row(np.concatenate([[tnorm[i]], u[i]]), np.concatenate([[1.0], -np.ones(n)]), lo=0.0)
        else:
            for j in range(n):
                L.row([tnorm[i], u[i, j]], [1.0, -1.0], lo=0.0)
        # lam0 <= (A(s_i)' c_i)_l for every column l
        for q in range(p):
            cols = A[:, :, q].ravel()
            vals = (S1[i][:, None] * C[i][None, :]).ravel()
            L.row(np.concatenate([[lam0[i]], cols]), np.concatenate([[1.0], -vals]), hi=0.0)
        # c'(x + gamma) <= lam0   (pred)   |   c'x - lam0 <= gamma_o   (sub)
        if loss_kind == PRED:
            L.row(np.concatenate([gam[i], [lam0[i]]]), np.concatenate([C[i], [-1.0]]), hi=-C[i] @ X[i])
        else:
            L.row([lam0[i], go[i]], [-1.0, -1.0], hi=-C[i] @ X[i])
    if symmetry_breaking and p > 1:
        # columns are interchangeable: order them by the first entry of A_0
        for q in range(p - 1):
            L.row([A[0, 0, q], A[0, 0, q + 1]], [1.0, -1.0], hi=0.0)

    cost = np.zeros(L.nv)
    cost[tnorm] = 1.0 / N
    if go is not None:
        cost[go] = 1.0 / N

    x0, start_loss = None, None
    if warm_start:
        Acol, assign = _milp_start(X, C, S1, p, M)
        v = np.zeros(L.nv)
        v[A[0].ravel()] = Acol.ravel()
        v[z[np.arange(N), assign]] = 1.0
        Wv = np.zeros((N, n, p))
        Wv[np.arange(N), :, assign] = Acol[:, assign].T
        v[W.ravel()] = Wv.ravel()
        G = Acol[:, assign].T - X
        v[gam.ravel()] = G.ravel()
        v[u.ravel()] = np.abs(G).ravel()
        v[tnorm] = np.abs(G).sum(1) if kind == "l1" else np.abs(G).max(1)
        v[lam0] = (C @ Acol).min(1)
        if loss_kind == SUB:
            v[go] = np.maximum(0.0, np.einsum("ij,ij->i", C, X) - v[lam0])
        if L.violation(v, lb, ub) <= 1e-9:
            x0 = v
            start_loss = float(cost @ v)

    # both losses dominate the l1 distance to the nearest column
    bound = None
    if kind == "l1":
        try:
            bound = assignment_lower_bound(X, p)
        except ValueError:
            bound = None
    if x0 is not None and bound is not None and start_loss <= bound + mip_gap * max(1.0, abs(bound)):
        xs, value, dual, optimal, msg = x0, start_loss, bound, True, "start matches the assignment bound"
    else:
        xs, info, msg, optimal = _solve_highs(L, cost, lb, ub, integrality, x0, time_limit, mip_gap)
        if xs is None:
            raise ExactTrainingError(f"MILP found no solution: {msg}")
        value = float(info.objective_function_value)
        dual = max(float(info.mip_dual_bound), bound if bound is not None else -math.inf)
    gap = 0.0 if value - dual <= 0 else (value - dual) / max(abs(value), 1e-10)
    optimal = optimal or gap <= mip_gap
    Afull = np.zeros((K + 1, n, p))
    Afull[a_free] = xs[A]
    theta = HypothesisParams(Afull, np.zeros((K + 1, n)), FREE, tuple(bool(f) for f in a_free),
                             (False,) * (K + 1), provenance={"trainer": "milp", "loss": loss_kind, "M": M})
    return MilpResult(theta, value, gap, dual, "optimal" if optimal else "time_limit", np.round(xs[z]),
                      time.perf_counter() - t0, start_loss, bound, msg)


# ---------------------------------------------------------------------------
# network structure recovery
# ---------------------------------------------------------------------------

@dataclass
class NetworkModel:
    """Candidate lines over ``n_nodes`` with fixed generator placement.

    Line ``m`` joins ``lines[m] = (a, b)``; its incidence column has
    ``+1`` at ``a`` and ``-1`` at ``b``.  Defaults to every node pair.
    """

    n_nodes: int
    gen_nodes: tuple
    gen_cap: float
    line_cap: float
    lines: tuple = ()

    def __post_init__(self):
        if not self.lines:
            self.lines = tuple(itertools.combinations(range(self.n_nodes), 2))
        self.lines = tuple((int(a), int(b)) for a, b in self.lines)
        self.gen_nodes = tuple(int(g) for g in self.gen_nodes)
        for a, b in self.lines:
            if a == b or not (0 <= a < self.n_nodes and 0 <= b < self.n_nodes):
                raise ValueError(f"bad candidate line {(a, b)}")

    @property
    def n_lines(self):
        return len(self.lines)

    @property
    def n_gen(self):
        return len(self.gen_nodes)

    @property
    def incidence(self):
        B = np.zeros((self.n_nodes, self.n_lines))
        for m, (a, b) in enumerate(self.lines):
            B[a, m] = 1.0
            B[b, m] = -1.0
        return B

    @property
    def placement(self):
        P = np.zeros((self.n_nodes, self.n_gen))
        for g, r in enumerate(self.gen_nodes):
            P[r, g] = 1.0
        return P

    def oracle(self, y):
        from .oracles import NetworkDispatchOracle
        sel = [ln for ln, on in zip(self.lines, y) if on > 0.5]
        return NetworkDispatchOracle(self.n_nodes, self.gen_nodes, sel, self.gen_cap, self.line_cap)


@dataclass
class NetworkResult:
    y: np.ndarray
    train_loss: float
    backend: str
    wall_time: float
    nodes: int
    model: NetworkModel
    losses: dict = field(default_factory=dict)

    @property
    def A(self):
        """Recovered gated incidence matrix (nodes x candidate lines)."""
        return self.model.incidence * self.y[None, :]

    @property
    def oracle(self):
        """The recovered dispatch problem, usable wherever a true oracle is."""
        return self.model.oracle(self.y)

    def edge_list(self):
        return [{"from": a + 1, "to": b + 1, "exists": bool(on > 0.5)}
                for (a, b), on in zip(self.model.lines, self.y)]

    def edge_list_json(self, **kw):
        return json.dumps(self.edge_list(), **kw)

    def to_dot(self, name="recovered"):
        out = [f"graph {name} {{"]
        for r in range(self.model.n_nodes):
            shape = "box" if r in self.model.gen_nodes else "ellipse"
            out.append(f"  n{r + 1} [label=\"{r + 1}\", shape={shape}];")
        for e in self.edge_list():
            if e["exists"]:
                out.append(f"  n{e['from']} -- n{e['to']};")
        out.append("}")
        return "\n".join(out) + "\n"


def _network_program(data, net, loss_kind, norm, y_lo, y_hi, price_bound):
    """Joint program over all points for line indicators relaxed to ``[y_lo, y_hi]``.

    With ``y_lo == y_hi`` binary this is the exact loss of that
    configuration; otherwise it is the McCormick relaxation (a lower bound).
    Returns ``(prog, handles)``.
    """
    N, G, R, Mn = data.N, net.n_gen, net.n_nodes, net.n_lines
    X = data.decisions
    S = data.signals
    Cst = S[:, :G]
    D = S[:, G:G + R]
    Bm = net.incidence
    P = net.placement
    fb, cap = float(net.line_cap), float(net.gen_cap)
    wb = 2.0 * price_bound

    prog = ConicProgram()
    y_lo = np.broadcast_to(np.asarray(y_lo, dtype=float), (Mn,))
    y_hi = np.broadcast_to(np.asarray(y_hi, dtype=float), (Mn,))
    # fixed lines get exact equalities; McCormick pairs for them would leave
    # no interior and stall the interior-point backend
    fixed = y_lo == y_hi
    on = fixed & (y_hi > 0.5)
    off = fixed & ~on
    rel = ~fixed
    y = prog.add_vars(Mn)
    if fixed.any():
        prog.add_rows(y[fixed][:, None], 1.0, -y_hi[fixed], ZERO)
    if rel.any():
        prog.add_rows(y[rel][:, None], 1.0, y_lo[rel], NONNEG)
        prog.add_rows(y[rel][:, None], -1.0, -y_hi[rel], NONNEG)
    gam = prog.add_vars(N * G).reshape(N, G)
    f = prog.add_vars(N * Mn).reshape(N, Mn)
    g = prog.add_vars(N * Mn).reshape(N, Mn)     # g = y f
    nu = prog.add_vars(N * R).reshape(N, R)
    rho = prog.add_vars(N * G).reshape(N, G)
    sig = prog.add_vars(N * G).reshape(N, G)
    kp = prog.add_vars(N * Mn).reshape(N, Mn)
    km = prog.add_vars(N * Mn).reshape(N, Mn)
    q = prog.add_vars(N * Mn).reshape(N, Mn)     # q = y (B' nu)
    go = prog.add_vars(N) if loss_kind == SUB else None

    ones = lambda k: np.ones(k)
    nonneg_vars = np.concatenate([rho.ravel(), sig.ravel(), kp.ravel(), km.ravel()])
    prog.add_rows(nonneg_vars[:, None], 1.0, np.zeros(nonneg_vars.size), NONNEG)
    for i in range(N):
        xt_cols = gam[i]
        # P (x + gamma) - B g = d
        rows, cols, vals = [], [], []
        for gi, r in enumerate(net.gen_nodes):
            rows.append(r); cols.append(gam[i, gi]); vals.append(1.0)
        br, bc = np.nonzero(Bm)
        rows += list(br); cols += list(g[i, bc]); vals += list(-Bm[br, bc])
        prog.add_constraint((rows, cols, vals, R), D[i] - P @ X[i], Cone(ZERO, R))
        # 0 <= x + gamma <= cap
        prog.add_rows(xt_cols[:, None], 1.0, -X[i], NONNEG)
        prog.add_rows(xt_cols[:, None], -1.0, X[i] - cap, NONNEG)
        # |f| <= fb and g = y f (McCormick, f in [-fb, fb])
        prog.add_rows(f[i][:, None], 1.0, -fb * ones(Mn), NONNEG)
        prog.add_rows(f[i][:, None], -1.0, -fb * ones(Mn), NONNEG)
        if off.any():
            prog.add_rows(g[i, off][:, None], 1.0, np.zeros(off.sum()), ZERO)
        if on.any():
            prog.add_rows(np.stack([g[i, on], f[i, on]], 1), [1.0, -1.0], np.zeros(on.sum()), ZERO)
        if rel.any():
            yr, gr, fr, k = y[rel], g[i, rel], f[i, rel], int(rel.sum())
            prog.add_rows(np.stack([yr, gr], 1), [fb, -1.0], np.zeros(k), NONNEG)
            prog.add_rows(np.stack([yr, gr], 1), [fb, 1.0], np.zeros(k), NONNEG)
            prog.add_rows(np.stack([fr, gr, yr], 1), [-1.0, 1.0, -fb], -fb * ones(k), NONNEG)
            prog.add_rows(np.stack([fr, gr, yr], 1), [1.0, -1.0, -fb], -fb * ones(k), NONNEG)
        # dual feasibility: P' nu + rho - sigma = c
        prog.add_rows(np.stack([nu[i, list(net.gen_nodes)], rho[i], sig[i]], 1), [1.0, 1.0, -1.0], Cst[i], ZERO)
        # flow stationarity: -q + kp - km = 0 with q = y (B' nu)
        prog.add_rows(np.stack([q[i], kp[i], km[i]], 1), [-1.0, 1.0, -1.0], np.zeros(Mn), ZERO)
        # w = B' nu = nu_a - nu_b in [-wb, wb]; McCormick for q = y w
        a_idx = np.array([a for a, _ in net.lines])
        b_idx = np.array([b for _, b in net.lines])
        prog.add_rows(nu[i][:, None], 1.0, -price_bound * ones(R), NONNEG)
        prog.add_rows(nu[i][:, None], -1.0, -price_bound * ones(R), NONNEG)
        wa, wbb = nu[i, a_idx], nu[i, b_idx]
        if off.any():
            prog.add_rows(q[i, off][:, None], 1.0, np.zeros(off.sum()), ZERO)
        if on.any():
            prog.add_rows(np.stack([q[i, on], wa[on], wbb[on]], 1), [1.0, -1.0, 1.0], np.zeros(on.sum()), ZERO)
        if rel.any():
            yr, qr, k = y[rel], q[i, rel], int(rel.sum())
            prog.add_rows(np.stack([yr, qr], 1), [wb, -1.0], np.zeros(k), NONNEG)
            prog.add_rows(np.stack([yr, qr], 1), [wb, 1.0], np.zeros(k), NONNEG)
            prog.add_rows(np.stack([wa[rel], wbb[rel], qr, yr], 1), [-1.0, 1.0, 1.0, -wb], -wb * ones(k), NONNEG)
            prog.add_rows(np.stack([wa[rel], wbb[rel], qr, yr], 1), [1.0, -1.0, -1.0, -wb], -wb * ones(k), NONNEG)
        # value: c'(x + gamma) <= d'nu - cap sum(sigma) - fb sum(kp + km)   [+ gamma_o for sub]
        cols = np.concatenate([nu[i], sig[i], kp[i], km[i]])
        vals = np.concatenate([D[i], -cap * ones(G), -fb * ones(Mn), -fb * ones(Mn)])
        if loss_kind == PRED:
            cols = np.concatenate([cols, gam[i]])
            vals = np.concatenate([vals, -Cst[i]])
        else:
            cols = np.concatenate([cols, [go[i]]])
            vals = np.concatenate([vals, [1.0]])
        prog.add_constraint((np.zeros(cols.size, dtype=int), cols, vals, 1), [Cst[i] @ X[i]], Cone(NONNEG, 1))
    w = 1.0 / N
    if loss_kind == PRED:
        add_norm_objective_many(prog, gam, w, norm.kind)
    else:
        prog.add_rows(go[:, None], 1.0, np.zeros(N), NONNEG)
        _sub_objective(prog, gam, go, w, norm)
    return prog, {"y": y, "gamma": gam, "go": go}


def dispatch_feasible(data, net, y):
    """Whether every sample's demand can be served with the lines ``y`` switched on.

    Uses an exact simplex LP per sample.  Removing lines only shrinks the
    feasible set, so a negative answer for ``y`` holds for all its subsets.
    """
    G, R = net.n_gen, net.n_nodes
    B = net.incidence[:, np.asarray(y) > 0.5]
    m = B.shape[1]
    A_eq = np.hstack([net.placement, -B])
    bounds = [(0.0, net.gen_cap)] * G + [(-net.line_cap, net.line_cap)] * m
    for s in data.signals:
        res = linprog(np.zeros(G + m), A_eq=A_eq, b_eq=s[G:G + R], bounds=bounds, method="highs")
        if res.status == 2:
            return False
        if res.status != 0:
            raise ExactTrainingError(f"feasibility LP ended with status {res.status}: {res.message}")
    return True


def _network_value(data, net, loss_kind, norm, y_lo, y_hi, price_bound, opts):
    prog, hd = _network_program(data, net, loss_kind, norm, y_lo, y_hi, price_bound)
    sol = solve(prog, opts)
    if sol.status == "infeasible":
        return math.inf, None
    if sol.status != OPTIMAL:
        # interior-point solvers can stall instead of certifying infeasibility
        if not dispatch_feasible(data, net, y_hi):
            return math.inf, None
        # feasible but stalled: retry once with a longer, looser run
        o = opts or SolveOptions()
        sol = solve(prog, replace(o, max_iters=4 * o.max_iters, backend_tol=max(o.backend_tol, 1e-8)))
        if sol.status == OPTIMAL:
            return sol.objective_value, sol.primal[hd["y"]]
        raise ExactTrainingError(f"network relaxation ended with status {sol.status}")
    return sol.objective_value, sol.primal[hd["y"]]


def _config_value(args):
    data, net, loss_kind, norm, y, price_bound, opts = args
    return _network_value(data, net, loss_kind, norm, y, y, price_bound, opts)[0]


def _enumerate(data, net, loss_kind, norm, price_bound, opts, workers=1):
    configs = [np.array(bits) for bits in itertools.product((0.0, 1.0), repeat=net.n_lines)]
    args = [(data, net, loss_kind, norm, y, price_bound, opts) for y in configs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            values = list(ex.map(_config_value, args, chunksize=8))
    else:
        values = [_config_value(a) for a in args]
    # fixed-order reduction: strict improvement keeps the first optimum in enumeration order
    best, best_y = math.inf, None
    for y, val in zip(configs, values):
        if val < best - 1e-9:
            best, best_y = val, y
    return best, best_y, len(configs)


def _branch_and_bound(data, net, loss_kind, norm, price_bound, opts, tol=1e-7, max_nodes=None):
    m = net.n_lines
    lo0, hi0 = np.zeros(m), np.ones(m)
    best, best_y, nodes = math.inf, None, 0
    tie = itertools.count()
    root, yr = _network_value(data, net, loss_kind, norm, lo0, hi0, price_bound, opts)
    nodes += 1
    heap = [(root, next(tie), lo0, hi0, yr)]
    seen = set()

    def try_incumbent(yrel, lo, hi):
        nonlocal best, best_y, nodes
        y = np.where(lo == hi, lo, np.round(yrel))
        key = tuple(y.astype(int))
        if key in seen:
            return
        seen.add(key)
        val, _ = _network_value(data, net, loss_kind, norm, y, y, price_bound, opts)
        nodes += 1
        if val < best - 1e-12:
            best, best_y = val, y

    while heap:
        bound, _, lo, hi, yrel = heapq.heappop(heap)
        if bound >= best - tol:
            continue
        if yrel is None:
            continue
        try_incumbent(yrel, lo, hi)
        if bound >= best - tol:
            continue
        free = np.where(lo != hi)[0]
        if free.size == 0:
            continue
        frac = np.abs(yrel[free] - 0.5)
        j = int(free[np.argmin(frac)])          # most fractional, lowest index on ties
        for v in (1.0, 0.0):
            lo2, hi2 = lo.copy(), hi.copy()
            lo2[j] = hi2[j] = v
            val, y2 = _network_value(data, net, loss_kind, norm, lo2, hi2, price_bound, opts)
            nodes += 1
            if val < best - tol:
                heapq.heappush(heap, (val, next(tie), lo2, hi2, y2))
        if max_nodes is not None and nodes >= max_nodes:
            break
    return best, best_y, nodes


def train_network_milp(data, net, loss_kind=PRED, norm=None, backend="branch_and_bound",
                       price_bound=None, opts=None, max_configs=2 ** 20, workers=1):
    """Choose the line set that best explains observed generation.

    Signals are ``(costs[0:G], demands[0:R])`` and decisions the generator
    outputs; flows are latent.  Optimality is certified through the
    dispatch LP dual with nodal prices boxed to ``[-price_bound,
    price_bound]`` (default ten times the largest observed cost), used
    identically by both backends.
    """
    loss_kind = canonical_loss(loss_kind)
    norm = norm or NormSpec("l2_squared")
    if isinstance(norm, str):
        norm = NormSpec(norm)
    if price_bound is None:
        price_bound = 10.0 * float(np.max(np.abs(data.signals[:, :net.n_gen])))
    t0 = time.perf_counter()
    if backend == "enumeration":
        if 2 ** net.n_lines > max_configs:
            raise ExactTrainingError(f"enumeration refused: 2^{net.n_lines} configurations")
        best, y, nodes = _enumerate(data, net, loss_kind, norm, price_bound, opts, workers)
    elif backend == "branch_and_bound":
        best, y, nodes = _branch_and_bound(data, net, loss_kind, norm, price_bound, opts)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    if y is None:
        raise ExactTrainingError("no line configuration explains the data")
    wall = time.perf_counter() - t0
    return NetworkResult(y, float(best), backend, wall, nodes, net)


# ---------------------------------------------------------------------------
# regression baseline
# ---------------------------------------------------------------------------

@dataclass
class RegressionResult:
    theta: HypothesisParams
    W: np.ndarray
    mse: float
    rank_deficient: bool


def fit_regression_baseline(data):
    """Least-squares affine policy ``x = b_0 + sum_k s_k b_k``.

    Returned as a hypothesis with a one-point primitive set (``A = 0``,
    ``Z`` the 1-simplex), so its optimal decision is the regression output.
    Rank deficiency falls back to the minimum-norm solution and is flagged.
    """
    F = _signals1(data)
    W, _, rank, _ = np.linalg.lstsq(F, data.decisions, rcond=None)
    resid = data.decisions - F @ W
    mse = float(np.mean(np.sum(resid ** 2, axis=1)))
    K, n = data.K, data.n
    theta = HypothesisParams(np.zeros((K + 1, n, 1)), W, FREE, (False,) * (K + 1), (True,) * (K + 1),
                             provenance={"trainer": "regression"})
    return RegressionResult(theta, W, mse, rank < F.shape[1])


def regression_primitive():
    return make_primitive("simplex", 1)
