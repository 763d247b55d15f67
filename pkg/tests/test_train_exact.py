import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iofeas.bench.generators import _gen_network, add_noise, gen_synthetic_l1, gen_toy, objective_of
from iofeas.data import IODataset
from iofeas.forward import ObjectiveSpec, solve_forward
from iofeas.geometry import make_primitive
from iofeas.hypothesis import HypothesisParams
from iofeas.losses import evaluate, true_losses
from iofeas.norms import NormSpec
from iofeas.oracles import NetworkDispatchOracle
from iofeas.train_exact import (ExactTrainingError, NetworkModel, assignment_lower_bound, fit_regression_baseline,
                                mccormick_feasible, regression_primitive, train_convex_alpha, train_milp_simplex,
                                train_network_milp)

L2 = NormSpec("l2")


# -- McCormick ---------------------------------------------------------------

def test_mccormick_exact_on_random_pairs(rng):
    M = 10.0
    for _ in range(1000):
        a = rng.uniform(-M, M)
        y = float(rng.integers(0, 2))
        assert mccormick_feasible(a * y, a, y, M, tol=1e-12)
        off = a * y + rng.choice([-1, 1]) * rng.uniform(1e-3, 5.0)
        assert not mccormick_feasible(off, a, y, M)


# -- convex scalar-alpha trainer --------------------------------------------

@pytest.fixture(scope="module")
def l1_study():
    return gen_synthetic_l1(2, (-1.0, 1.0), 60, 60, seed=0, e=[0.5, -1.0], h=2.0)


def test_convex_recovers_noiseless(l1_study):
    tr, te = l1_study
    Z = make_primitive("l1_ball", 2)
    obj = objective_of(tr)
    r = train_convex_alpha(tr, Z, obj, L2, b_free=[True, False, False])
    assert r.status == "optimal" and r.train_loss <= 1e-7
    assert r.alpha == pytest.approx(2.0, abs=1e-6)
    assert np.allclose(r.b[0], [0.5, -1.0], atol=1e-6)
    for v in evaluate(r.theta, Z, obj, L2, te).metrics().values():
        assert abs(v) <= 1e-6


def test_convex_translation_truth():
    tr, _ = gen_synthetic_l1(2, (-1.0, 1.0), 40, 1, seed=1, e=[3.0, 2.0], h=1.0)
    r = train_convex_alpha(tr, make_primitive("l1_ball", 2), objective_of(tr), L2, b_free=[True, False, False])
    assert r.alpha == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("loss", ["pred", "sub"])
def test_convex_translation_equivariance(l1_study, loss):
    tr = add_noise(l1_study[0], 0.2, seed=3)
    Z = make_primitive("l1_ball", 2)
    obj = objective_of(tr)
    delta = np.array([1.5, -0.7])
    a = train_convex_alpha(tr, Z, obj, L2, loss, b_free=[True, False, False])
    b = train_convex_alpha(tr.with_decisions(tr.decisions + delta), Z, obj, L2, loss, b_free=[True, False, False])
    assert a.train_loss > 1e-3
    assert b.train_loss == pytest.approx(a.train_loss, abs=1e-7)
    assert b.alpha == pytest.approx(a.alpha, abs=1e-6)
    assert np.allclose(b.b[0], a.b[0] + delta, atol=1e-6)


def test_convex_dimension_check():
    tr, _ = gen_toy(5, 1)
    with pytest.raises(ValueError):
        train_convex_alpha(tr, make_primitive("simplex", 3), objective_of(tr))


# -- assignment bound and MILP ------------------------------------------------

def _brute_pmedian(X, p):
    """Mean l1 p-median cost over all labelings of the rows (medians at data values)."""
    N = X.shape[0]
    best = np.inf
    for lab in itertools.product(range(p), repeat=N):
        lab = np.array(lab)
        cost = 0.0
        for q in range(p):
            P = X[lab == q]
            if P.shape[0] == 0:
                continue
            for col in P.T:
                cost += min(np.abs(col - m).sum() for m in col)
        best = min(best, cost)
    return best / N


@given(st.integers(0, 2**31 - 1), st.integers(1, 3))
def test_assignment_bound_matches_brute_force(seed, p):
    rng = np.random.default_rng(seed)
    X = rng.integers(-3, 4, size=(int(rng.integers(2, 7)), 2)).astype(float)
    assert assignment_lower_bound(X, p) == pytest.approx(_brute_pmedian(X, p), abs=1e-12)


def test_assignment_bound_refuses_many_points():
    with pytest.raises(ValueError):
        assignment_lower_bound(np.arange(40.0)[:, None], 2)


def test_milp_single_point_at_column():
    d = IODataset(np.array([[0.4, 0.6]]), np.array([[2.0, -1.0]]))
    obj = ObjectiveSpec.signal_is_cost(2)
    for ws in (True, False):
        r = train_milp_simplex(d, obj, 2, a_free=[True, False, False], warm_start=ws)
        assert r.train_loss <= 1e-9 and r.status == "optimal"
        col = int(np.argmax(r.z[0]))
        assert np.allclose(r.theta.A[0][:, col], [2.0, -1.0], atol=1e-7)


@pytest.mark.parametrize("loss", ["pred", "sub"])
def test_milp_zero_when_columns_cover(loss):
    tr, te = gen_toy(12, 20, seed=2)
    obj = objective_of(tr)
    r = train_milp_simplex(tr, obj, 2, loss, a_free=[True, False], warm_start=False, time_limit=60)
    assert r.train_loss <= 1e-7
    rep = evaluate(r.theta, make_primitive("simplex", 2), obj, NormSpec("l1"), te)
    assert rep.true_pred <= 1e-6 and rep.true_sub <= 1e-6


def test_milp_too_few_columns_is_bounded_below():
    tr, _ = gen_synthetic_l1(3, (-1.0, 1.0), 15, 1, seed=5)
    obj = objective_of(tr)
    r = train_milp_simplex(tr, obj, 2, a_free=[True, False, False, False], time_limit=60)
    bound = assignment_lower_bound(tr.decisions, 2)
    assert r.train_loss >= bound - 1e-9 and bound > 0
    assert r.dual_bound <= r.train_loss + 1e-7


def test_milp_rejects_bad_norm():
    tr, _ = gen_toy(3, 1)
    with pytest.raises(ValueError):
        train_milp_simplex(tr, objective_of(tr), 2, norm="l2")
    with pytest.raises(ValueError):
        train_milp_simplex(tr, objective_of(tr), 2, a_free=[False, True])


# -- network recovery ---------------------------------------------------------

def _small_network(noise=0.0):
    orc = NetworkDispatchOracle(4, (0, 2), [(0, 1), (1, 2), (2, 3)], 2.0, 0.8)
    tr, _ = _gen_network("small", orc, ((0.2, 1.0), (1.0, 2.0)), ((0.1, 0.6),) * 4, 8, 1, 0)
    if noise:
        tr = add_noise(tr, noise, seed=1)
    return tr, NetworkModel(4, (0, 2), 2.0, 0.8)


@pytest.mark.parametrize("noise", [0.0, 0.1])
def test_branch_and_bound_equals_enumeration(noise):
    tr, net = _small_network(noise)
    bb = train_network_milp(tr, net, "pred", backend="branch_and_bound")
    en = train_network_milp(tr, net, "pred", backend="enumeration")
    assert bb.train_loss == pytest.approx(en.train_loss, abs=1e-6)
    assert en.nodes == 2 ** net.n_lines
    if noise == 0.0:
        assert bb.train_loss <= 1e-6
        for s, x in zip(tr.signals, tr.decisions):
            assert true_losses(bb.oracle, L2, x, s)["l_p"] <= 1e-6
    else:
        assert bb.train_loss > 1e-4


def test_two_node_network():
    d = IODataset(np.array([[1.0, 0.0, 0.5]]), np.array([[0.5]]))
    net = NetworkModel(2, (0,), 1.0, 1.0)
    r = train_network_milp(d, net, "pred", backend="enumeration")
    assert r.y.tolist() == [1.0] and r.train_loss <= 1e-8
    assert r.edge_list() == [{"from": 1, "to": 2, "exists": True}]
    assert json.loads(r.edge_list_json()) == r.edge_list()
    dot = r.to_dot()
    assert dot.startswith("graph recovered {") and "n1 -- n2;" in dot and "n1 [label=\"1\", shape=box];" in dot
    assert np.array_equal(r.A, [[1.0], [-1.0]])


def test_enumeration_refused_above_limit():
    d = IODataset(np.zeros((1, 8)), np.zeros((1, 1)))
    net = NetworkModel(7, (0,), 1.0, 1.0)
    assert net.n_lines == 21
    with pytest.raises(ExactTrainingError):
        train_network_milp(d, net, backend="enumeration")


def test_network_model_validation():
    with pytest.raises(ValueError):
        NetworkModel(3, (0,), 1.0, 1.0, lines=((0, 0),))


# -- regression baseline ------------------------------------------------------

def test_regression_linear_policy(rng):
    S = rng.normal(size=(30, 2))
    W = rng.normal(size=(3, 4))
    X = np.hstack([np.ones((30, 1)), S]) @ W
    r = fit_regression_baseline(IODataset(S, X))
    assert r.mse <= 1e-20 and np.allclose(r.W, W) and not r.rank_deficient
    Z = regression_primitive()
    obj = ObjectiveSpec(np.zeros((4, 2)), np.ones(4))
    assert np.allclose(solve_forward(r.theta, Z, obj, S[0]).x_star, X[0], atol=1e-7)


def test_regression_constant_signal(rng):
    X = rng.normal(size=(10, 2))
    r = fit_regression_baseline(IODataset(np.ones((10, 1)), X))
    assert r.rank_deficient
    assert np.all(r.theta.A == 0)
    pred = r.W[0] + r.W[1]
    assert np.allclose(pred, X.mean(axis=0))


def test_regression_worse_than_simplex_on_toy():
    tr, te = gen_toy(50, 50, seed=0)
    obj = objective_of(tr)
    r = fit_regression_baseline(tr)
    reg = evaluate(r.theta, regression_primitive(), obj, L2, te)
    truth = HypothesisParams(np.stack([np.eye(2), np.zeros((2, 2))]), np.zeros((2, 2)))
    simp = evaluate(truth, make_primitive("simplex", 2), obj, L2, te)
    assert reg.est_sub > simp.est_sub + 0.1
