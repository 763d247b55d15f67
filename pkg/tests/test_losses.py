import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iofeas.bench.generators import gen_synthetic_l1, gen_toy, objective_of, toy_objective
from iofeas.data import IODataset
from iofeas.forward import ObjectiveSpec, region_from_matrices, solve_forward
from iofeas.geometry import make_primitive
from iofeas.hypothesis import HypothesisParams
from iofeas.losses import EvalReport, evaluate, pred_loss, region_losses, sub_loss, true_losses
from iofeas.norms import NormSpec
from iofeas.oracles import ToyDispatchOracle

from probes import probe, random_simplex_theta

L2 = NormSpec("l2")


def toy_theta():
    return HypothesisParams(np.stack([np.eye(2), np.zeros((2, 2))]), np.zeros((2, 2))), make_primitive("simplex", 2)


def test_pred_examples():
    theta, Z = toy_theta()
    obj = toy_objective()
    r = pred_loss(theta, Z, obj, L2, [2, 0], [0.3])
    assert r["loss"] == pytest.approx(1.0, abs=1e-7)
    assert np.allclose(r["gamma"], [-1, 0], atol=1e-6)
    r = pred_loss(theta, Z, obj, L2, [0, 1], [0.3])
    assert r["loss"] == pytest.approx(math.sqrt(2), abs=1e-7)
    assert np.allclose(r["gamma"], [1, -1], atol=1e-6)
    assert pred_loss(theta, Z, obj, L2, [1, 0], [0.3])["loss"] <= 1e-8


def test_sub_examples():
    theta, Z = toy_theta()
    obj = toy_objective()
    r = sub_loss(theta, Z, obj, L2, [0, 1], [0.3])
    assert r["gamma_f"] == pytest.approx(0, abs=1e-7)
    assert r["gamma_o"] == pytest.approx(0.4, abs=1e-8)
    assert r["loss"] == pytest.approx(0.4, abs=1e-7)
    r = sub_loss(theta, Z, obj, L2, [2, 0], [0.3])
    assert r["gamma_f"] == pytest.approx(1.0, abs=1e-7)
    assert r["gamma_o"] == pytest.approx(0.3, abs=1e-8)
    assert r["loss"] == pytest.approx(1.3, abs=1e-7)


def _grid_true_losses(x, s, step=1e-5):
    """Brute-force toy losses: the feasible set is the segment x1 in [0, 1], x2 = 1 - x1."""
    t = np.arange(0.0, 1.0 + step / 2, step)
    pts = np.column_stack([t, 1 - t])
    c = np.array([s, 1 - s])
    vals = pts @ c
    V = vals.min()
    opt = pts[vals <= V + 1e-12]
    lp = np.min(np.linalg.norm(opt - x, axis=1))
    gf = np.min(np.linalg.norm(pts - x, axis=1))
    return lp, gf + max(0.0, c @ x - V)


@pytest.mark.parametrize("x", [(0.0, 1.0), (1.5, -0.5), (0.2, 0.9), (1.0, 0.0)])
def test_true_losses_against_grid(x):
    lp, lsub = _grid_true_losses(np.array(x), 0.3)
    r = true_losses(ToyDispatchOracle(), L2, x, [0.3])
    assert r["l_p"] == pytest.approx(lp, abs=1e-5)
    assert r["l_sub"] == pytest.approx(lsub, abs=1e-5)


def test_true_losses_frozen():
    r = true_losses(ToyDispatchOracle(), L2, [0, 1], [0.3])
    assert r["l_p"] == pytest.approx(math.sqrt(2), abs=1e-7)
    assert r["l_sub"] == pytest.approx(0.4, abs=1e-7)
    # projection of (1.5, -0.5) is (1, 0); the point undercuts the optimal value
    r = true_losses(ToyDispatchOracle(), L2, [1.5, -0.5], [0.3])
    assert r["l_p"] == pytest.approx(0.7071068, abs=1e-6)
    assert r["gamma_f"] == pytest.approx(0.7071068, abs=1e-6)
    assert r["gamma_o"] == 0.0
    assert r["l_sub"] == pytest.approx(0.7071068, abs=1e-6)


@given(st.integers(0, 2**31 - 1))
def test_full_characterization(seed):
    rng = np.random.default_rng(seed)
    obj = ObjectiveSpec(rng.normal(size=(3, 2)), rng.normal(size=3))
    theta, Z = random_simplex_theta(rng, 3, 4, 2)
    for _ in range(3):
        r = probe(theta, Z, obj, rng.uniform(-1, 1, 2), L2)
        if r is None:
            continue
        assert r[0] <= 1e-6 and r[1] <= 1e-6
        assert r[2] >= 1e-4 and r[3] >= 1e-4


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_sub_loss_grows_along_feasible_set(seed, t):
    # moving from the optimum along a feasible edge never lowers gamma_o
    rng = np.random.default_rng(seed)
    theta, Z = toy_theta()
    obj = toy_objective()
    s = [0.3]
    x0, x1 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    a = sub_loss(theta, Z, obj, L2, (1 - t) * x0 + t * x1, s)["gamma_o"]
    t2 = min(1.0, t + rng.uniform(0, 0.5))
    b = sub_loss(theta, Z, obj, L2, (1 - t2) * x0 + t2 * x1, s)["gamma_o"]
    assert b >= a - 1e-9


def test_unique_optima_est_equals_true(rng):
    # the true L1-ball problem as a model: est pred at the model's own optimum == true pred there
    tr, _ = gen_synthetic_l1(3, (-1.0, 1.0), 10, 1, seed=4)
    orc = tr.oracle
    obj = objective_of(tr)
    for s in tr.signals:
        reg = orc.region(s)
        xs = orc.vertex_solution(orc.cost(s))
        if xs is None:
            continue
        x = xs + rng.normal(scale=0.05, size=3)
        est = region_losses(reg, obj(s), L2, x)["pred"]
        assert est == pytest.approx(true_losses(orc, L2, x, s)["l_p"], abs=1e-6)


def test_unbounded_gives_inf():
    from iofeas.geometry import NONNEG, Cone, PrimitiveSet
    Z = PrimitiveSet(np.eye(1), np.zeros(1), (Cone(NONNEG, 1),), 1)
    theta = HypothesisParams(np.ones((1, 1, 1)), np.zeros((1, 1)))
    obj = ObjectiveSpec(np.zeros((1, 0)), np.array([-1.0]))
    assert pred_loss(theta, Z, obj, L2, [0.0], np.zeros(0))["loss"] == math.inf
    assert sub_loss(theta, Z, obj, L2, [0.0], np.zeros(0))["loss"] == math.inf


def test_evaluate_true_model_is_zero():
    theta, Z = toy_theta()
    tr, te = gen_toy(5, 30, seed=1)
    rep = evaluate(theta, Z, objective_of(te), L2, te)
    assert rep.n_points == 30 and rep.n_failed == 0
    for v in rep.metrics().values():
        assert abs(v) <= 1e-6


def test_evaluate_single_point_and_no_oracle():
    theta, Z = toy_theta()
    obj = toy_objective()
    d = IODataset(np.array([[0.2]]), np.array([[1.0, 0.0]]))
    rep = evaluate(theta, Z, obj, L2, d)
    assert rep.est_pred <= 1e-7 and rep.true_pred is None
    rep = evaluate(theta, Z, obj, L2, d, oracle=ToyDispatchOracle())
    assert rep.true_pred <= 1e-7
    with pytest.raises(ValueError):
        evaluate(theta, Z, obj, L2, d.subset([]))


def test_report_serialization():
    rep = EvalReport(est_pred=math.inf, est_sub=0.5, n_points=1, per_point=[{"est_pred": math.inf}])
    d = json.loads(rep.to_json())
    assert d["est_pred"] == "inf" and d["per_point"][0]["est_pred"] == "inf"
    assert "per_point" not in rep.to_dict(per_point=False)
    lines = rep.to_csv_row().splitlines()
    assert lines[0].startswith("est_pred,est_sub") and lines[1].startswith("inf,0.5")


def test_region_losses_matrix_model():
    # a fixed polytope given through region_from_matrices
    region = region_from_matrices(np.eye(2), np.zeros(2), make_primitive("simplex", 2))
    r = region_losses(region, np.array([0.3, 0.7]), L2, [0.0, 1.0])
    assert r["pred"] == pytest.approx(math.sqrt(2), abs=1e-7)
    assert r["sub"] == pytest.approx(0.4, abs=1e-7)


def test_policy_of_toy_model_matches_generator():
    theta, Z = toy_theta()
    tr, _ = gen_toy(20, 1, seed=3)
    obj = objective_of(tr)
    for s, x in zip(tr.signals, tr.decisions):
        assert np.allclose(solve_forward(theta, Z, obj, s).x_star, x, atol=1e-6)
