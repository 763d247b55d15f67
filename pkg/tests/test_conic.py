import itertools
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from iofeas.conic import (INFEASIBLE, OPTIMAL, UNBOUNDED, ConicProgram, SolveOptions, dual_objective, dump_text,
                          kkt_residuals, load_text, solve)
from iofeas.geometry import NONNEG, SOC, ZERO, Cone


def test_one_dim_lp():
    prog = ConicProgram(1)
    prog.add_linear(0, 1.0)
    blk = prog.add_constraint([[1.0]], [1.0], Cone(NONNEG, 1))
    sol = solve(prog)
    assert sol.status == OPTIMAL
    assert sol.primal[0] == pytest.approx(1.0, abs=1e-8)
    assert sol.duals[blk][0] == pytest.approx(1.0, abs=1e-8)


def test_simplex_vertex():
    prog = ConicProgram(3)
    prog.add_linear(np.arange(3), [3.0, 1.0, 2.0])
    prog.add_constraint(np.eye(3), np.zeros(3), Cone(NONNEG, 3))
    prog.add_constraint(np.ones((1, 3)), [1.0], Cone(ZERO, 1))
    sol = solve(prog)
    assert np.allclose(sol.primal, [0, 1, 0], atol=1e-8)
    assert sol.objective_value == pytest.approx(1.0, abs=1e-8)


def test_projection_qp_against_grid():
    # min ||x - (2, 0)||^2 over the 2-simplex; grid oracle at step 1e-4
    t = np.linspace(0, 1, 10001)
    grid = (t - 2) ** 2 + (1 - t) ** 2
    best = grid.min()
    prog = ConicProgram(2)
    prog.add_diag_quadratic(np.arange(2), 2.0)
    prog.add_linear(np.arange(2), [-4.0, 0.0])
    prog.add_constraint(np.eye(2), np.zeros(2), Cone(NONNEG, 2))
    prog.add_constraint(np.ones((1, 2)), [1.0], Cone(ZERO, 1))
    sol = solve(prog)
    assert np.allclose(sol.primal, [1, 0], atol=1e-7)
    assert sol.objective_value + 4.0 == pytest.approx(best, abs=1e-8)
    assert best == pytest.approx(1.0, abs=1e-12)


def test_statuses():
    prog = ConicProgram(1)
    prog.add_linear(0, 1.0)
    prog.add_constraint([[1.0]], [1.0], Cone(NONNEG, 1))
    prog.add_constraint([[-1.0]], [0.0], Cone(NONNEG, 1))
    assert solve(prog).status == INFEASIBLE
    prog = ConicProgram(1)
    prog.add_linear(0, -1.0)
    prog.add_constraint([[1.0]], [0.0], Cone(NONNEG, 1))
    assert solve(prog).status == UNBOUNDED


def _vertex_lp(c, G, g):
    """Brute-force ``min c'x s.t. Gx >= g`` over all basic solutions."""
    n = c.size
    best = np.inf
    for rows in itertools.combinations(range(G.shape[0]), n):
        B = G[list(rows)]
        if abs(np.linalg.det(B)) < 1e-10:
            continue
        x = np.linalg.solve(B, g[list(rows)])
        if np.all(G @ x >= g - 1e-9):
            best = min(best, c @ x)
    return best


def test_lp_matches_vertex_enumeration(rng):
    for _ in range(25):
        n = int(rng.integers(2, 5))
        # a bounded polytope: box plus random cuts
        G = np.vstack([np.eye(n), -np.eye(n), rng.normal(size=(int(rng.integers(1, 5)), n))])
        g = np.r_[-np.ones(2 * n), -rng.uniform(0.5, 2, G.shape[0] - 2 * n)]
        c = rng.normal(size=n)
        prog = ConicProgram(n)
        prog.add_linear(np.arange(n), c)
        prog.add_constraint(G, g, Cone(NONNEG, G.shape[0]))
        sol = solve(prog)
        assert sol.status == OPTIMAL
        assert sol.objective_value == pytest.approx(_vertex_lp(c, G, g), abs=1e-7)


def _socp():
    # min t - x1 s.t. ||(x1, x2)|| <= t, x1 + x2 = 1, t <= 3
    prog = ConicProgram(3)
    prog.add_linear(np.arange(3), [-1.0, 0.0, 1.0])
    prog.add_constraint(np.array([[0, 0, 1.0], [1, 0, 0], [0, 1, 0]]), np.zeros(3), Cone(SOC, 3))
    prog.add_constraint(np.array([[1.0, 1.0, 0]]), [1.0], Cone(ZERO, 1))
    prog.add_constraint(np.array([[0, 0, -1.0]]), [-3.0], Cone(NONNEG, 1))
    prog.set_bounds(0, -5, 5)
    return prog


def test_kkt_and_weak_duality():
    for prog in (_socp(),):
        sol = solve(prog)
        assert sol.status == OPTIMAL
        r = kkt_residuals(prog, sol)
        assert max(r["primal"], r["dual_cone"], r["stationarity"]) <= 1e-7 and r["gap"] <= 1e-6
        assert dual_objective(prog, sol) <= sol.objective_value + 1e-6
        assert dual_objective(prog, sol) == pytest.approx(sol.objective_value, abs=1e-6)


def test_deterministic_and_reentrant():
    progs = [_socp() for _ in range(6)]
    seq = [solve(p) for p in progs]
    with ThreadPoolExecutor(3) as ex:
        par = list(ex.map(solve, progs))
    for a, b in zip(seq, par):
        assert np.array_equal(a.primal, b.primal)
    assert np.array_equal(seq[0].primal, solve(_socp()).primal)


def test_text_dump_round_trip():
    prog = _socp()
    prog.add_diag_quadratic([1], 0.5)
    back = load_text(dump_text(prog))
    a, b = solve(prog), solve(back)
    assert a.status == b.status == OPTIMAL
    assert np.allclose(a.primal, b.primal, atol=1e-9)


def test_block_size_mismatch_rejected():
    prog = ConicProgram(2)
    with pytest.raises(ValueError):
        prog.add_constraint(np.eye(2), np.zeros(3), Cone(NONNEG, 3))


def test_options_are_respected():
    sol = solve(_socp(), SolveOptions(max_iters=1))
    assert sol.status != OPTIMAL
