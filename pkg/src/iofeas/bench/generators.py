"""Synthetic (signal, decision) generators with their true-problem oracles.

Every generator returns a ``(train, test)`` pair of datasets drawn from
independent child seeds, so the two splits never share a draw.  Decisions
of the LP-based generators are basic optimal solutions computed with
HiGHS, which keeps them exactly at vertices.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from ..data import IODataset
from ..forward import ObjectiveSpec
from ..geometry import NONNEG, ZERO
from ..oracles import L1BallOracle, NetworkDispatchOracle, ToyDispatchOracle

# default 5-node layout: generators at nodes 1, 3, 5 joined by a ring
POWER5_LINES = ((0, 1), (1, 2), (2, 3), (3, 4), (4, 0))
POWER5_GEN_NODES = (0, 2, 4)
POWER5_COST_RANGES = ((0.2, 1.0), (0.2, 0.5), (1.0, 2.0))
POWER5_DEMAND_RANGES = ((0.3, 1.5), (0.36, 1.8), (0.42, 2.1), (0.48, 2.4), (0.54, 2.7))

# IEEE 14-bus branch list (1-based buses in the usual numbering)
IEEE14_BRANCHES = (
    (1, 2), (1, 5), (2, 3), (2, 4), (2, 5), (3, 4), (4, 5), (4, 7), (4, 9), (5, 6),
    (6, 11), (6, 12), (6, 13), (7, 8), (7, 9), (9, 10), (9, 14), (10, 11), (12, 13), (13, 14),
)
IEEE14_GEN_BUSES = (2, 8, 13)
IEEE14_COST_RANGES = ((0.2, 0.5), (1.0, 2.0), (0.2, 1.0))   # buses 2, 8, 13
IEEE14_DEMAND_RANGES = (
    (0.14, 0.7), (0.14, 0.7), (0.16, 0.8), (0.16, 0.8), (0.14, 0.7), (0.1, 0.5), (0.16, 0.8),
    (0.54, 2.7), (0.1, 0.2), (0.12, 0.6), (0.12, 0.6), (0.1, 0.5), (0.1, 0.5), (0.12, 0.6),
)


class GenerationError(RuntimeError):
    pass


def _child_rngs(seed, k=2):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(k)]


def _check_sizes(*ns):
    for v in ns:
        if int(v) < 1:
            raise ValueError("sample counts must be >= 1")


def lp_vertex(region, c):
    """A basic optimal solution of ``min c'x`` over a polyhedral region."""
    n, m = region.n, region.n_lift
    M = np.hstack([region.F, region.E])
    A_eq, b_eq, A_ub, b_ub = [], [], [], []
    off = 0
    for cone in region.cones:
        rows = M[off:off + cone.dim]
        rhs = region.f[off:off + cone.dim]
        if cone.kind == ZERO:
            A_eq.append(rows)
            b_eq.append(rhs)
        elif cone.kind == NONNEG:
            A_ub.append(-rows)
            b_ub.append(-rhs)
        else:
            raise ValueError("lp_vertex handles polyhedral regions only")
        off += cone.dim
    cost = np.concatenate([c, np.zeros(m)])
    res = linprog(
        cost,
        A_ub=np.vstack(A_ub) if A_ub else None, b_ub=np.concatenate(b_ub) if b_ub else None,
        A_eq=np.vstack(A_eq) if A_eq else None, b_eq=np.concatenate(b_eq) if b_eq else None,
        bounds=[(None, None)] * (n + m), method="highs-ds",
    )
    if res.status != 0:
        raise GenerationError(f"true LP not solved: {res.message}")
    return res.x[:n], float(res.fun)


def _meta(name, seed, split, obj, **extra):
    d = {"generator": name, "seed": seed, "split": split, "objective": obj.to_dict()}
    d.update(extra)
    return d


# ---------------------------------------------------------------------------

def toy_objective():
    return ObjectiveSpec(np.array([[1.0], [-1.0]]), np.array([0.0, 1.0]))


def toy_policy(s):
    """Vertex policy of the two-generator toy dispatch (ties go to ``(1, 0)``)."""
    s = np.asarray(s, dtype=float).reshape(-1)
    x = np.zeros((s.size, 2))
    x[s <= 0.5, 0] = 1.0
    x[s > 0.5, 1] = 1.0
    return x


def gen_toy(N_train, N_test, seed=0):
    _check_sizes(N_train, N_test)
    obj = toy_objective()
    oracle = ToyDispatchOracle()
    out = []
    for split, N, rng in zip(("train", "test"), (N_train, N_test), _child_rngs(seed)):
        s = rng.uniform(0.0, 1.0, size=N)
        out.append(IODataset(s[:, None], toy_policy(s), _meta("toy", seed, split, obj), oracle))
    return tuple(out)


def l1_vertex(c, e, h):
    """Minimizer of ``c'x`` over ``||x - e||_1 <= h``; ``None`` on an argmax tie."""
    a = np.abs(c)
    j = int(np.argmax(a))
    if np.sum(a == a[j]) > 1 or a[j] == 0:
        return None
    x = np.array(e, dtype=float)
    x[j] -= h * np.sign(c[j])
    return x


def gen_synthetic_l1(n, cost_range, N_train, N_test, seed=0, e=None, h=1.0):
    """Costs uniform on ``cost_range`` per coordinate; decisions are ball vertices."""
    _check_sizes(N_train, N_test)
    if h <= 0:
        raise ValueError("radius h must be positive")
    e = np.ones(n) if e is None else np.asarray(e, dtype=float)
    lo, hi = cost_range
    oracle = L1BallOracle(e, h)
    obj = ObjectiveSpec.signal_is_cost(n)
    out = []
    for split, N, rng in zip(("train", "test"), (N_train, N_test), _child_rngs(seed)):
        S, X, redraws = [], [], 0
        while len(S) < N:
            c = rng.uniform(lo, hi, size=n)
            x = l1_vertex(c, e, h)
            if x is None:
                redraws += 1
                continue
            S.append(c)
            X.append(x)
        meta = _meta("synthetic_l1", seed, split, obj, n=n, cost_range=list(cost_range),
                     e=e.tolist(), h=float(h), redraws=redraws)
        out.append(IODataset(np.array(S), np.array(X), meta, oracle))
    return tuple(out)


def _gen_network(name, oracle, cost_ranges, demand_ranges, N_train, N_test, seed):
    _check_sizes(N_train, N_test)
    ranges = np.array(list(cost_ranges) + list(demand_ranges), dtype=float)
    K = ranges.shape[0]
    obj = ObjectiveSpec.signal_is_cost(K, range(oracle.n_gen))
    out = []
    for split, N, rng in zip(("train", "test"), (N_train, N_test), _child_rngs(seed)):
        S = rng.uniform(ranges[:, 0], ranges[:, 1], size=(N, K))
        X = np.array([lp_vertex(oracle.region(s), oracle.cost(s))[0] for s in S])
        meta = _meta(name, seed, split, obj, ranges=ranges.tolist())
        out.append(IODataset(S, X, meta, oracle))
    return tuple(out)


def power5_oracle(lines=POWER5_LINES, gen_cap=3.5, line_cap=3.5):
    return NetworkDispatchOracle(5, POWER5_GEN_NODES, lines, gen_cap, line_cap)


def gen_power5(N_train=100, N_test=200, seed=0, lines=POWER5_LINES):
    """Five regions, three plants at nodes 1/3/5; signal = (3 costs, 5 demands)."""
    return _gen_network("power5", power5_oracle(lines), POWER5_COST_RANGES, POWER5_DEMAND_RANGES,
                        N_train, N_test, seed)


def ieee14_oracle(gen_cap=3.6, line_cap=3.0):
    lines = [(a - 1, b - 1) for a, b in IEEE14_BRANCHES]
    return NetworkDispatchOracle(14, [g - 1 for g in IEEE14_GEN_BUSES], lines, gen_cap, line_cap)


def gen_ieee14(N_train=100, N_test=200, seed=0):
    """IEEE 14-bus dispatch; signal = (costs at buses 2, 8, 13, 14 demands)."""
    return _gen_network("ieee14", ieee14_oracle(), IEEE14_COST_RANGES, IEEE14_DEMAND_RANGES,
                        N_train, N_test, seed)


def add_noise(data, std, seed=0):
    """Add iid ``N(0, std^2)`` to every decision entry; signals are untouched."""
    if std < 0:
        raise ValueError("std must be nonnegative")
    if std == 0:
        return data
    rng = np.random.default_rng(seed)
    X = data.decisions + rng.normal(0.0, std, size=data.decisions.shape)
    return data.with_decisions(X, noise={"std": float(std), "seed": seed})


def objective_of(data):
    """The cost map stored with a generated dataset."""
    return ObjectiveSpec.from_dict(data.meta["objective"])
