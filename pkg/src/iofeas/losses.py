"""Point-wise predictability and suboptimality losses and dataset evaluation.

Point losses use a two-stage evaluation: first the optimal value ``V(s)``
of the (recovered or true) problem, then a single projection program.
The dual reformulation is reserved for training.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .conic import OPTIMAL, UNBOUNDED, ConicProgram, SolveOptions, solve
from .forward import hypothesis_region, minimize_over, solve_forward
from .geometry import NONNEG, Cone
from .norms import NormSpec, add_norm_objective, norm_value

# optimal-face slack for the value constraint c'(x+gamma) <= V; keeps the
# projection program strictly feasible for the interior-point backend
FACE_TOL = 1e-9


class LossEvaluationError(RuntimeError):
    pass


def _face_slack(V):
    return FACE_TOL * (1.0 + abs(V))


def _projection(region, norm, x, c=None, V=None, opts=None):
    """``min ||gamma||`` s.t. ``x + gamma`` in region (and ``c'(x+gamma) <= V``)."""
    x = np.asarray(x, dtype=float)
    n, m = region.n, region.n_lift
    prog = ConicProgram(n + m)
    g = np.arange(n)
    # F (x + gamma) + E w - f in K
    prog.add_constraint(np.hstack([region.F, region.E]), region.f - region.F @ x, region.cones)
    if c is not None:
        prog.add_constraint(np.concatenate([-c, np.zeros(m)])[None, :],
                            np.array([c @ x - V - _face_slack(V)]), Cone(NONNEG, 1))
    add_norm_objective(prog, g, 1.0, norm.kind)
    sol = solve(prog, opts)
    if sol.status != OPTIMAL:
        raise LossEvaluationError(f"projection program ended with status {sol.status}")
    gamma = sol.primal[:n]
    return norm_value(norm.kind, gamma), gamma


def distance_to_region(region, norm, x, opts=None):
    return _projection(region, norm, x, opts=opts)[0]


def region_losses(region, c, norm, x, opts=None):
    """Both losses of ``x`` against a region with linear cost ``c``.

    Returns ``dict(pred, gamma, sub, gamma_f, gamma_o, value)``; losses are
    ``inf`` when the region's LP is unbounded.
    """
    x = np.asarray(x, dtype=float)
    status, V, _, _ = minimize_over(region, c, opts)
    if status == UNBOUNDED:
        inf = math.inf
        return {"pred": inf, "gamma": None, "sub": inf, "gamma_f": None, "gamma_o": inf, "value": -inf}
    if status != OPTIMAL:
        raise LossEvaluationError(f"value program ended with status {status}")
    pred, gamma = _projection(region, norm, x, c, V, opts)
    gf, _ = _projection(region, norm, x, opts=opts)
    go = max(0.0, float(c @ x) - V)
    return {"pred": pred, "gamma": gamma, "sub": norm.pair_value(gf, go),
            "gamma_f": gf, "gamma_o": go, "value": V}


def pred_loss(theta, Z, obj, norm, x, s, opts=None):
    """Predictability loss of ``(x, s)`` under ``theta``: ``{'loss', 'gamma'}``."""
    fw = solve_forward(theta, Z, obj, s, opts)
    if fw.status == UNBOUNDED:
        return {"loss": math.inf, "gamma": None}
    if fw.status != OPTIMAL:
        raise LossEvaluationError(f"forward problem ended with status {fw.status}")
    region = hypothesis_region(theta, Z, s)
    loss, gamma = _projection(region, norm, x, obj(s), fw.value, opts)
    return {"loss": loss, "gamma": gamma}


def sub_loss(theta, Z, obj, norm, x, s, opts=None):
    """Suboptimality loss: ``{'loss', 'gamma_f', 'gamma_o'}``."""
    fw = solve_forward(theta, Z, obj, s, opts)
    if fw.status == UNBOUNDED:
        return {"loss": math.inf, "gamma_f": None, "gamma_o": math.inf}
    if fw.status != OPTIMAL:
        raise LossEvaluationError(f"forward problem ended with status {fw.status}")
    region = hypothesis_region(theta, Z, s)
    gf, _ = _projection(region, norm, x, opts=opts)
    go = max(0.0, float(obj(s) @ np.asarray(x, dtype=float)) - fw.value)
    return {"loss": norm.pair_value(gf, go), "gamma_f": gf, "gamma_o": go}


def true_losses(oracle, norm, x, s, opts=None):
    """Predictability and suboptimality loss against the true problem."""
    r = region_losses(oracle.region(s), oracle.cost(s), norm, x, opts)
    return {"l_p": r["pred"], "l_sub": r["sub"], "gamma_f": r["gamma_f"], "gamma_o": r["gamma_o"]}


@dataclass
class EvalReport:
    est_pred: float
    est_sub: float
    true_pred: float | None = None
    true_sub: float | None = None
    n_points: int = 0
    n_failed: int = 0
    per_point: list = field(default_factory=list)

    def metrics(self):
        return {"est_pred": self.est_pred, "est_sub": self.est_sub,
                "true_pred": self.true_pred, "true_sub": self.true_sub}

    def to_dict(self, per_point=True):
        d = asdict(self)
        if not per_point:
            d.pop("per_point")
        return _encode_inf(d)

    def to_json(self, per_point=True, **kw):
        return json.dumps(self.to_dict(per_point), **kw)

    def to_csv_row(self, header=True):
        buf = io.StringIO()
        w = csv.writer(buf)
        cols = ["est_pred", "est_sub", "true_pred", "true_sub", "n_points", "n_failed"]
        if header:
            w.writerow(cols)
        w.writerow([_fmt(getattr(self, c)) for c in cols])
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return repr(v) if isinstance(v, float) else str(v)


def _encode_inf(o):
    if isinstance(o, float) and math.isinf(o):
        return "inf" if o > 0 else "-inf"
    if isinstance(o, dict):
        return {k: _encode_inf(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_encode_inf(v) for v in o]
    if isinstance(o, np.ndarray):
        return _encode_inf(o.tolist())
    return o


def point_metrics(theta, Z, obj, norm, x, s, oracle=None, opts=None):
    """The four metrics at one test point."""
    fw = solve_forward(theta, Z, obj, s, opts)
    rec = {}
    if fw.status == UNBOUNDED:
        rec.update(est_pred=math.inf, est_sub=math.inf)
        if oracle is not None:
            rec.update(true_pred=math.inf, true_sub=math.inf)
        return rec
    if fw.status != OPTIMAL:
        raise LossEvaluationError(f"forward problem ended with status {fw.status}")
    region = hypothesis_region(theta, Z, s)
    c = obj(s)
    x = np.asarray(x, dtype=float)
    rec["est_pred"] = _projection(region, norm, x, c, fw.value, opts)[0]
    gf = _projection(region, norm, x, opts=opts)[0]
    rec["est_sub"] = norm.pair_value(gf, max(0.0, float(c @ x) - fw.value))
    if oracle is not None:
        t = true_losses(oracle, norm, fw.x_star, s, opts)
        rec["true_pred"] = t["l_p"]
        rec["true_sub"] = t["l_sub"]
    return rec


def evaluate(theta, Z, obj, norm, test_data, oracle=None, opts=None, metric_fn=None):
    """Mean out-of-sample metrics over ``test_data``.

    ``oracle`` defaults to the dataset's own.  Points whose programs fail
    are skipped and counted in ``n_failed``.  ``metric_fn`` replaces the
    per-point computation (used for models outside the conic hypothesis).
    """
    if len(test_data) == 0:
        raise ValueError("test data is empty")
    oracle = oracle if oracle is not None else test_data.oracle
    per_point, failed = [], 0
    for s, x in zip(test_data.signals, test_data.decisions):
        try:
            if metric_fn is not None:
                rec = metric_fn(x, s)
            else:
                rec = point_metrics(theta, Z, obj, norm, x, s, oracle, opts)
        except LossEvaluationError:
            failed += 1
            continue
        per_point.append(rec)
    if not per_point:
        raise LossEvaluationError("every test point failed")

    def mean(key):
        vals = [r[key] for r in per_point]
        return float(math.fsum(vals) / len(vals))

    has_true = oracle is not None and "true_pred" in per_point[0]
    return EvalReport(
        est_pred=mean("est_pred"),
        est_sub=mean("est_sub"),
        true_pred=mean("true_pred") if has_true else None,
        true_sub=mean("true_sub") if has_true else None,
        n_points=len(per_point),
        n_failed=failed,
        per_point=per_point,
    )
