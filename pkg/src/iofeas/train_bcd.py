"""Block-coordinate training of the free hypothesis.

With the matrices ``A_k`` held fixed, learning the offsets ``b_k`` together
with the per-point latent variables is a single convex program (the inner
program).  The ``A_k`` are then moved along the gradient of the inner
optimal value, which the inner duals give in closed form, with an Armijo
line search.  The smoothed trainer relaxes the two ``A``-dependent
equalities with penalized slacks and doubles the penalties as the slacks
settle.

Inner program per point ``i`` (predictability)::

    x_i + gamma_i - A_i z_i - b(s_i) - s1_i = 0          [beta_i]
    H z_i - h in K,   lambda_i in K*
    A_i' c_i - H' lambda_i + s2_i = 0                     [mu_i]
    c_i'(x_i + gamma_i - b(s_i)) - h' lambda_i <= 0

The suboptimality variant replaces the last row by
``c_i'(x_i - b(s_i)) - h' lambda_i <= gamma_o_i`` and its slack sits on the
dual-feasibility row only.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .conic import INFEASIBLE, OPTIMAL, UNBOUNDED, ConicProgram, SolveOptions, solve
from .geometry import NONNEG, SOC, ZERO, Cone
from .hypothesis import FREE, eval_A_batch
from .norms import NormSpec, add_norm_epigraph_many, add_norm_objective_many, norm_value

PRED = "pred"
SUB = "sub"
_LOSS_ALIASES = {"predictability": PRED, "p": PRED, "suboptimality": SUB}


class TrainingError(RuntimeError):
    pass


def canonical_loss(kind):
    kind = _LOSS_ALIASES.get(kind, kind)
    if kind not in (PRED, SUB):
        raise ValueError(f"unknown loss {kind!r}")
    return kind


@dataclass
class TrainConfig:
    """Settings shared by both block-coordinate trainers.

    ``eta`` is the first trial step.  With ``warm_step`` the next iteration
    starts from twice the last accepted step (capped at ``eta``) instead of
    from ``eta`` itself.  Slack penalties use ``slack_norm`` and, with
    ``slack_weight='mean'``, carry the same ``1/N`` factor as the loss term
    so that ``eps = 1`` starts with slacks and data residuals on an equal
    footing.  ``eps_max`` caps the doubling.  Slack magnitudes in reports
    are always Euclidean norms.
    """

    loss: str = PRED
    norm: NormSpec = field(default_factory=NormSpec)
    max_iters: int = 500
    eta: float = 1.0
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    max_backtracks: int = 30
    warm_step: bool = True
    smoothing: bool = False
    eps1: float = 1.0
    eps2: float = 1.0
    eps_max: float = 2.0 ** 20
    slack_norm: str = "l2_squared"
    slack_weight: str = "mean"
    seed: int = 0
    stop_tol: float = 1e-8
    stop_patience: int = 10
    # gradients below this Frobenius norm count as stationary (solver noise)
    grad_tol: float = 1e-9
    opts: SolveOptions = field(default_factory=SolveOptions)

    def __post_init__(self):
        self.loss = canonical_loss(self.loss)
        if isinstance(self.norm, str):
            self.norm = NormSpec(self.norm)
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not 0 < self.armijo_shrink < 1:
            raise ValueError("armijo_shrink must lie in (0, 1)")
        if self.smoothing and (self.eps1 <= 0 or self.eps2 <= 0):
            raise ValueError("smoothing penalties must be positive")
        if self.slack_norm not in ("l1", "l2", "linf", "l2_squared"):
            raise ValueError(f"unknown slack norm {self.slack_norm!r}")
        if self.slack_weight not in ("sum", "mean"):
            raise ValueError("slack_weight must be 'sum' or 'mean'")

    def to_dict(self):
        d = asdict(self)
        d["norm"] = {"kind": self.norm.kind, "pair": self.norm.pair}
        return d


@dataclass
class InnerSolution:
    status: str
    objective: float
    loss: float
    b: np.ndarray | None = None
    gamma: np.ndarray | None = None
    z: np.ndarray | None = None
    lam: np.ndarray | None = None
    gamma_f: np.ndarray | None = None
    gamma_o: np.ndarray | None = None
    gamma_s1: np.ndarray | None = None
    gamma_s2: np.ndarray | None = None
    beta: np.ndarray | None = None
    mu: np.ndarray | None = None
    eps: tuple = (0.0, 0.0)
    solve_time: float = 0.0

    @property
    def ok(self):
        return self.status == OPTIMAL

    def slack_sums(self, kind="l2"):
        """``(sum_i ||gamma_s1_i||, sum_i ||gamma_s2_i||)``; zero when absent."""
        def tot(G):
            if G is None:
                return 0.0
            return math.fsum(norm_value(kind, g) for g in G)
        return tot(self.gamma_s1), tot(self.gamma_s2)


# ---------------------------------------------------------------------------
# inner program
# ---------------------------------------------------------------------------

class _Layout:
    """Variable indices of the inner program, fixed for a dataset and config."""

    def __init__(self, prog, N, n, Z, b_free, loss, smooth):
        self.nb = int(np.sum(b_free))
        self.b = prog.add_vars(n * self.nb).reshape(self.nb, n)
        self.gamma = prog.add_vars(N * n).reshape(N, n)
        self.z = prog.add_vars(N * Z.p_total).reshape(N, Z.p_total)
        self.lam = prog.add_vars(N * Z.l).reshape(N, Z.l)
        self.go = prog.add_vars(N) if loss == SUB else None
        self.s1 = self.s2 = None
        if smooth:
            if loss == PRED:
                self.s1 = prog.add_vars(N * n).reshape(N, n)
                self.s2 = prog.add_vars(N * Z.p_total).reshape(N, Z.p_total)
            else:
                self.s1 = prog.add_vars(N * Z.p_total).reshape(N, Z.p_total)


def _dual_cone_rows(Z):
    """Offsets into ``lambda`` and cones expressing ``lambda in K*``."""
    idx, cones, off = [], [], 0
    for c in Z.cones:
        if c.kind != ZERO:
            idx.append(np.arange(off, off + c.dim))
            cones.append(c)
        off += c.dim
    if not idx:
        return np.zeros(0, dtype=np.int64), []
    return np.concatenate(idx), cones


def _triplets_dense(rows, cols, M):
    """Triplets of a dense block ``M`` (rows x cols index grids)."""
    nz = M != 0
    return rows[nz], cols[nz], M[nz]


def build_inner(A_batch, data, Z, obj, cfg, theta, eps=None):
    """Assemble the inner program for fixed per-point matrices ``A_batch``.

    Returns ``(prog, layout, blocks)`` where ``blocks`` maps the named
    constraint groups to block indices for dual extraction.
    """
    S, X = data.signals, data.decisions
    N, n = X.shape
    p, pt, l = Z.p, Z.p_total, Z.l
    C = obj.batch(S)                       # (N, n)
    S1 = np.hstack([np.ones((N, 1)), S])   # (N, K+1)
    b_free = np.asarray(theta.b_free, dtype=bool)
    b_fixed = S1[:, ~b_free] @ theta.b[~b_free] if (~b_free).any() else np.zeros((N, n))
    Sf = S1[:, b_free]                     # (N, nb)
    smooth = eps is not None

    prog = ConicProgram()
    L = _Layout(prog, N, n, Z, b_free, cfg.loss, smooth)
    blocks = {}
    ii = np.arange(N)

    # coupling: gamma - A z - b(s) - s1 = b_fixed - x     (zero cone)
    rows, cols, vals = [], [], []
    r = (ii[:, None] * n + np.arange(n)[None, :])                  # (N, n)
    rows.append(r.ravel()); cols.append(L.gamma.ravel()); vals.append(np.ones(N * n))
    Ar = np.broadcast_to(r[:, :, None], (N, n, p))
    Ac = np.broadcast_to(L.z[:, None, :p], (N, n, p))
    rr, cc, vv = _triplets_dense(Ar, Ac, -A_batch)
    rows.append(rr); cols.append(cc); vals.append(vv)
    if L.nb:
        Br = np.broadcast_to(r[:, None, :], (N, L.nb, n))
        Bc = np.broadcast_to(L.b[None, :, :], (N, L.nb, n))
        Bv = np.broadcast_to(-Sf[:, :, None], (N, L.nb, n))
        rr, cc, vv = _triplets_dense(Br, Bc, Bv)
        rows.append(rr); cols.append(cc); vals.append(vv)
    if smooth and cfg.loss == PRED:
        rows.append(r.ravel()); cols.append(L.s1.ravel()); vals.append(-np.ones(N * n))
    blocks["coupling"] = prog.add_constraint(
        (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), N * n),
        (b_fixed - X).ravel(), Cone(ZERO, N * n))

    # primal membership H z - h in K
    Hr, Hc = np.nonzero(Z.H)
    Hv = Z.H[Hr, Hc]
    rows = (ii[:, None] * l + Hr[None, :]).ravel()
    cols = L.z[:, Hc].ravel()
    vals = np.tile(Hv, N)
    blocks["primal"] = prog.add_constraint((rows, cols, vals, N * l), np.tile(Z.h, N), Z.cones * N)

    # lambda in K*
    lidx, lcones = _dual_cone_rows(Z)
    if lidx.size:
        m = lidx.size
        rows = np.arange(N * m)
        cols = L.lam[:, lidx].ravel()
        prog.add_constraint((rows, cols, np.ones(N * m), N * m), np.zeros(N * m), tuple(lcones) * N)

    # dual feasibility: -H' lambda + s = -A' c   (zero cone, pt rows per point)
    r = ii[:, None] * pt + np.arange(pt)[None, :]
    rows = (ii[:, None] * pt + Hc[None, :]).ravel()
    cols = L.lam[:, Hr].ravel()
    vals = np.tile(-Hv, N)
    rows, cols, vals = [rows], [cols], [vals]
    s_dual = L.s2 if cfg.loss == PRED else L.s1
    if smooth:
        rows.append(r.ravel()); cols.append(s_dual.ravel()); vals.append(np.ones(N * pt))
    AtC = np.zeros((N, pt))
    AtC[:, :p] = np.einsum("inp,in->ip", A_batch, C)
    blocks["dual"] = prog.add_constraint(
        (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), N * pt),
        -AtC.ravel(), Cone(ZERO, N * pt))

    # value row: h'lam + c'b(s) [- c'gamma | + gamma_o] >= c'x - c'b_fixed
    rows, cols, vals = [], [], []
    rows.append(np.repeat(ii, l)); cols.append(L.lam.ravel()); vals.append(np.tile(Z.h, N))
    if L.nb:
        cb = Sf[:, :, None] * C[:, None, :]                        # (N, nb, n)
        rows.append(np.repeat(ii, L.nb * n)); cols.append(np.tile(L.b.ravel(), N)); vals.append(cb.ravel())
    if cfg.loss == PRED:
        rows.append(np.repeat(ii, n)); cols.append(L.gamma.ravel()); vals.append(-C.ravel())
    else:
        rows.append(ii); cols.append(L.go); vals.append(np.ones(N))
    rhs = np.einsum("in,in->i", C, X - b_fixed)
    blocks["value"] = prog.add_constraint(
        (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), N), rhs, Cone(NONNEG, N))

    # objective
    w = 1.0 / N
    if cfg.loss == PRED:
        add_norm_objective_many(prog, L.gamma, w, cfg.norm.kind)
    else:
        prog.add_rows(L.go[:, None], 1.0, np.zeros(N), NONNEG)
        if cfg.norm.pair == "l1":
            add_norm_objective_many(prog, L.gamma, w, cfg.norm.kind)
            prog.add_linear(L.go, w)
        else:
            tf = add_norm_epigraph_many(prog, L.gamma, cfg.norm.kind)
            t = add_norm_epigraph_many(prog, np.stack([tf, L.go], axis=1), cfg.norm.pair)
            prog.add_linear(t, w)
    if smooth:
        ws = w if cfg.slack_weight == "mean" else 1.0
        e1, e2 = eps
        add_norm_objective_many(prog, L.s1, ws * e1, cfg.slack_norm)
        if L.s2 is not None:
            add_norm_objective_many(prog, L.s2, ws * e2, cfg.slack_norm)
    return prog, L, blocks


def solve_inner(A_batch, data, Z, obj, cfg, theta, eps=None):
    """Solve the inner program at fixed ``A(s_i)`` (``A_batch``, shape (N, n, p)).

    ``eps`` = ``(eps1, eps2)`` switches on the smoothed variant.  An
    infeasible or unbounded inner program is reported through ``status``
    with ``loss = inf``.
    """
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if A_batch.shape != (data.N, data.n, Z.p):
        raise ValueError(f"A batch has shape {A_batch.shape}, expected {(data.N, data.n, Z.p)}")
    prog, L, blocks = build_inner(A_batch, data, Z, obj, cfg, theta, eps)
    sol = solve(prog, cfg.opts)
    if sol.status != OPTIMAL:
        return InnerSolution(sol.status, math.inf, math.inf, eps=tuple(eps or (0.0, 0.0)),
                             solve_time=sol.solve_time)
    v = sol.primal
    N, n = data.N, data.n
    b = theta.b.copy()
    b[np.asarray(theta.b_free, dtype=bool)] = v[L.b]
    gamma = v[L.gamma]
    res = InnerSolution(
        status=OPTIMAL,
        objective=sol.objective_value,
        loss=math.nan,
        b=b,
        gamma=gamma,
        z=v[L.z],
        lam=v[L.lam],
        beta=sol.duals[blocks["coupling"]].reshape(N, n),
        mu=sol.duals[blocks["dual"]].reshape(N, Z.p_total),
        eps=tuple(eps or (0.0, 0.0)),
        solve_time=sol.solve_time,
    )
    gnorm = np.array([cfg.norm.value(g) for g in gamma])
    if cfg.loss == PRED:
        res.loss = math.fsum(gnorm) / N
    else:
        res.gamma_f = gnorm
        res.gamma_o = np.maximum(v[L.go], 0.0)
        res.loss = math.fsum(cfg.norm.pair_value(a, o) for a, o in zip(gnorm, res.gamma_o)) / N
    if L.s1 is not None:
        res.gamma_s1 = v[L.s1]
    if L.s2 is not None:
        res.gamma_s2 = v[L.s2]
    return res


def gradient_A(inner, data, obj, theta=None):
    """Gradient of the inner optimal value with respect to every ``A_k``.

    ``dV/dA(s_i) = beta_i z_i' - c_i mu_i'`` (natural columns of ``z``), so
    ``dV/dA_k = sum_i s_ik (beta_i z_i' - c_i mu_i')`` with ``s_i0 = 1``.
    Entries of ``A_k`` that ``theta`` marks fixed get a zero gradient.
    """
    if inner.beta is None or inner.mu is None:
        raise TrainingError("inner solution carries no duals")
    N = data.N
    C = obj.batch(data.signals)
    S1 = np.hstack([np.ones((N, 1)), data.signals])
    pz = inner.z.shape[1] if theta is None else theta.p
    zn = inner.z[:, :pz]
    mun = inner.mu[:, :pz]
    per_point = inner.beta[:, :, None] * zn[:, None, :] - C[:, :, None] * mun[:, None, :]
    G = np.einsum("ik,inp->knp", S1, per_point)
    if theta is not None:
        G[~np.asarray(theta.a_free, dtype=bool)] = 0.0
    return G


# ---------------------------------------------------------------------------
# line search and trainers
# ---------------------------------------------------------------------------

@dataclass
class StepResult:
    theta: object
    inner: InnerSolution
    eta: float
    accepted: bool
    trials: int


def _inner_at(theta, data, Z, obj, cfg, eps):
    return solve_inner(eval_A_batch(theta, data.signals), data, Z, obj, cfg, theta, eps)


def _objective(inner):
    return inner.objective if inner.ok else math.inf


def armijo_step(theta, G, current, data, Z, obj, cfg, eps=None, eta0=None):
    """Backtracking step ``A <- A - eta G``.

    Accepts the first ``eta`` with
    ``V(A - eta G) <= V(A) - c eta ||G||_F^2``; on exhaustion returns the
    unchanged ``theta`` with ``accepted=False``.  A gradient under
    ``cfg.grad_tol`` is a zero step.
    """
    f0 = _objective(current)
    g2 = float(np.sum(G * G))
    if g2 <= cfg.grad_tol ** 2:
        return StepResult(theta, current, 0.0, True, 0)
    eta = cfg.eta if eta0 is None else eta0
    for trial in range(1, cfg.max_backtracks + 1):
        cand = theta.with_A(theta.A - eta * G)
        inner = _inner_at(cand, data, Z, obj, cfg, eps)
        f = _objective(inner)
        if f <= f0 - cfg.armijo_c * eta * g2:
            return StepResult(cand.with_b(inner.b), inner, eta, True, trial)
        eta *= cfg.armijo_shrink
    return StepResult(theta, current, 0.0, False, cfg.max_backtracks)


@dataclass
class TrainReport:
    theta: object
    loss: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    eps1: list = field(default_factory=list)
    eps2: list = field(default_factory=list)
    slack1: list = field(default_factory=list)
    slack2: list = field(default_factory=list)
    step: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    status: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    final_loss: float = math.nan
    final_smoothed: float = math.nan
    final_slack: tuple = (0.0, 0.0)
    termination: str = ""
    trainer: str = ""
    config: dict = field(default_factory=dict)

    @property
    def n_iters(self):
        return len(self.loss)

    def monotone_violations(self, slack=1e-6):
        """Indices ``t`` where an accepted step raised the objective at fixed ``eps``."""
        bad = []
        for t in range(1, len(self.objective)):
            if not self.accepted[t - 1]:
                continue
            same_eps = self.eps1[t] == self.eps1[t - 1] and self.eps2[t] == self.eps2[t - 1]
            if same_eps and self.objective[t] > self.objective[t - 1] + slack:
                bad.append(t)
        return bad

    def to_dict(self, include_theta=True):
        d = {k: v for k, v in self.__dict__.items() if k != "theta"}
        d = json.loads(json.dumps(d, default=_jsonable_default))
        if include_theta:
            d["theta"] = self.theta.to_dict()
        return _inf_strings(d)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def trajectory_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["iteration", "loss", "objective", "eps1", "eps2", "slack1", "slack2", "step", "accepted"])
        for t in range(self.n_iters):
            w.writerow([t, repr(self.loss[t]), repr(self.objective[t]), repr(self.eps1[t]), repr(self.eps2[t]),
                        repr(self.slack1[t]), repr(self.slack2[t]), repr(self.step[t]), int(self.accepted[t])])
        return buf.getvalue()


def _jsonable_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, NormSpec):
        return {"kind": o.kind, "pair": o.pair}
    if isinstance(o, SolveOptions):
        return asdict(o)
    raise TypeError(type(o))


def _inf_strings(o):
    if isinstance(o, float) and math.isinf(o):
        return "inf" if o > 0 else "-inf"
    if isinstance(o, dict):
        return {k: _inf_strings(v) for k, v in o.items()}
    if isinstance(o, list):
        return [_inf_strings(v) for v in o]
    return o


def _check_free(theta):
    if theta.structure != FREE:
        raise ValueError("block-coordinate trainers need the free hypothesis structure")


def _record(rep, inner, eps, eta, accepted, t0, slack_norm):
    s1, s2 = inner.slack_sums(slack_norm)
    rep.loss.append(float(inner.loss))
    rep.objective.append(float(inner.objective))
    rep.eps1.append(float(eps[0]))
    rep.eps2.append(float(eps[1]))
    rep.slack1.append(s1)
    rep.slack2.append(s2)
    rep.step.append(float(eta))
    rep.accepted.append(bool(accepted))
    rep.status.append(inner.status)
    rep.wall_time.append(time.perf_counter() - t0)


def train_vanilla(data, Z, obj, cfg, theta0):
    """Plain block-coordinate descent with Armijo steps on the ``A_k``."""
    if cfg.smoothing:
        raise ValueError("train_vanilla needs smoothing disabled")
    _check_free(theta0)
    t0 = time.perf_counter()
    rep = TrainReport(theta0, trainer="vanilla", config=cfg.to_dict())
    inner = _inner_at(theta0, data, Z, obj, cfg, None)
    if not inner.ok:
        raise TrainingError(f"inner program is {inner.status} at the initial point; "
                            "the smoothed trainer tolerates this")
    theta = theta0.with_b(inner.b)
    eta_next, quiet = cfg.eta, 0
    rep.termination = "max_iters"
    for t in range(cfg.max_iters):
        G = gradient_A(inner, data, obj, theta)
        st = armijo_step(theta, G, inner, data, Z, obj, cfg, None, eta_next)
        _record(rep, inner, (0.0, 0.0), st.eta, st.accepted, t0, "l2")
        if not st.accepted:
            rep.termination = "line_search_failed"
            break
        if st.eta == 0.0:
            rep.termination = "zero_gradient"
            break
        change = abs(inner.objective - st.inner.objective)
        theta, inner = st.theta, st.inner
        if cfg.warm_step:
            eta_next = min(cfg.eta, st.eta / cfg.armijo_shrink)
        quiet = quiet + 1 if change < cfg.stop_tol else 0
        if quiet >= cfg.stop_patience:
            rep.termination = "stalled"
            break
    rep.theta = theta
    rep.final_loss = float(inner.loss)
    rep.final_smoothed = float(inner.objective)
    return rep


def eps_threshold(eps):
    """Slack-change threshold ``0.01 / 10^(log2(eps) + 1)``."""
    return 0.01 / 10.0 ** (math.log2(eps) + 1.0)


def _sq_sum(G):
    return 0.0 if G is None else float(np.sum(G * G))


def train_smoothed(data, Z, obj, cfg, theta0):
    """Adaptive smoothing: penalized slacks whose weights double on stall.

    Each penalty adapts on its own: when ``sum_i ||gamma_s||^2`` of its
    slack changes by less than ``eps_threshold(eps)`` across an iteration,
    that ``eps`` doubles (up to ``eps_max``).  The reported final loss is
    the unsmoothed loss at the final ``A`` (``inf`` if that program is
    infeasible).
    """
    if not cfg.smoothing:
        raise ValueError("train_smoothed needs smoothing enabled")
    _check_free(theta0)
    t0 = time.perf_counter()
    rep = TrainReport(theta0, trainer="smoothed", config=cfg.to_dict())
    eps = [float(cfg.eps1), float(cfg.eps2)]
    has_s2 = cfg.loss == PRED
    inner = _inner_at(theta0, data, Z, obj, cfg, tuple(eps))
    if not inner.ok:
        raise TrainingError(f"smoothed inner program ended with status {inner.status}")
    theta = theta0.with_b(inner.b)
    prev = (_sq_sum(inner.gamma_s1), _sq_sum(inner.gamma_s2))
    eta_next, quiet = cfg.eta, 0
    rep.termination = "max_iters"
    for t in range(cfg.max_iters):
        G = gradient_A(inner, data, obj, theta)
        st = armijo_step(theta, G, inner, data, Z, obj, cfg, tuple(eps), eta_next)
        _record(rep, inner, eps, st.eta, st.accepted, t0, "l2")
        change = abs(inner.objective - st.inner.objective)
        theta, inner = st.theta, st.inner
        if st.accepted and st.eta > 0 and cfg.warm_step:
            eta_next = min(cfg.eta, st.eta / cfg.armijo_shrink)
        elif not st.accepted:
            eta_next = cfg.eta
        # fresh slacks at the new A, then adapt each penalty on its own
        cur = (_sq_sum(inner.gamma_s1), _sq_sum(inner.gamma_s2))
        old_eps = list(eps)
        for j in range(2 if has_s2 else 1):
            if abs(cur[j] - prev[j]) < eps_threshold(eps[j]) and eps[j] * 2 <= cfg.eps_max:
                eps[j] *= 2.0
        bumped = eps != old_eps
        if bumped:
            fresh = _inner_at(theta, data, Z, obj, cfg, tuple(eps))
            if fresh.ok:
                inner = fresh
                theta = theta.with_b(inner.b)
                cur = (_sq_sum(inner.gamma_s1), _sq_sum(inner.gamma_s2))
            else:
                # keep the last solvable penalty level
                eps = old_eps
                bumped = False
        prev = cur
        at_cap = all(e * 2 > cfg.eps_max for e in eps[: 2 if has_s2 else 1])
        quiet = quiet + 1 if (change < cfg.stop_tol and (at_cap or not bumped)) else 0
        if quiet >= cfg.stop_patience and sum(inner.slack_sums("l2")) <= cfg.stop_tol:
            rep.termination = "stalled"
            break
    rep.theta = theta
    rep.final_smoothed = float(inner.objective)
    rep.final_slack = inner.slack_sums("l2")
    plain = _inner_at(theta, data, Z, obj, replace(cfg, smoothing=False), None)
    rep.final_loss = float(plain.loss) if plain.ok else math.inf
    if plain.ok:
        rep.theta = theta.with_b(plain.b)
    return rep


def train(data, Z, obj, cfg, theta0):
    return train_smoothed(data, Z, obj, cfg, theta0) if cfg.smoothing else train_vanilla(data, Z, obj, cfg, theta0)


# ---------------------------------------------------------------------------
# smoothing identity
# ---------------------------------------------------------------------------

def smoothed_feasibility_terms(theta, Z_latent, data, eps):
    """The two terms of the smoothed predictability objective.

    Returns ``(sum_i ||r_i||^2 / (2 eps), 1/N - 1/(2 eps))`` with
    ``r_i = x_i - A(s_i) z_i - b(s_i)``.
    """
    from .hypothesis import eval_A, eval_b
    first = 0.0
    for s, x, z in zip(data.signals, data.decisions, Z_latent):
        r = x - eval_A(theta, s) @ z - eval_b(theta, s)
        first += float(r @ r) / (2.0 * eps)
    return first, 1.0 / data.N - 1.0 / (2.0 * eps)


def smoothing_identity_check(theta, Z_latent, data, obj=None, N=None, norm=None, tol=1e-8):
    """Check the ``eps = N/2`` reduction of the smoothed predictability term.

    At ``eps = N/2`` the residual coefficient ``1/N - 1/(2 eps)`` vanishes
    and the first term equals ``(1/N) sum_i gamma_f_i^2`` where
    ``gamma_f_i`` is the Euclidean residual norm.  Needs the squared-L2
    norm with the separable pair norm.
    """
    norm = norm or NormSpec("l2_squared", "l1")
    if norm.kind != "l2_squared" or norm.pair != "l1":
        raise ValueError("identity holds for the squared L2 norm with the separable pair norm")
    N = data.N if N is None else int(N)
    if N != data.N:
        raise ValueError("N must equal the number of data points")
    Z_latent = np.atleast_2d(np.asarray(Z_latent, dtype=float))
    first, coef = smoothed_feasibility_terms(theta, Z_latent, data, N / 2.0)
    # right-hand side through the batched path
    A = eval_A_batch(theta, data.signals)
    from .hypothesis import eval_b_batch
    R = data.decisions - np.einsum("inp,ip->in", A, Z_latent) - eval_b_batch(theta, data.signals)
    gf = np.linalg.norm(R, axis=1)
    rhs = float(np.sum(gf ** 2)) / N
    scale = max(1.0, abs(rhs))
    return abs(first - rhs) <= tol * scale and abs(coef) <= tol
