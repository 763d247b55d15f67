"""Experiment configs, the seeded runner and report assembly.

A run generates data, trains one hypothesis per seed, evaluates the four
metrics on the test split and writes a JSON report, a metrics CSV and
per-seed artifacts (trajectory CSVs, network exports).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..geometry import make_primitive
from ..hypothesis import FREE, init_params
from ..losses import EvalReport, LossEvaluationError, evaluate, region_losses, true_losses
from ..norms import NormSpec
from ..train_bcd import TrainConfig, TrainingError, train
from ..train_exact import (ExactTrainingError, NetworkModel, fit_regression_baseline, train_convex_alpha,
                           train_milp_simplex, train_network_milp)
from . import generators as gen

GENERATORS = ("toy", "synthetic_l1", "power5", "ieee14")
TRAINERS = ("vanilla", "smoothed", "convex", "milp", "network", "regression")
METRICS = ("est_pred", "est_sub", "true_pred", "true_sub")


class ConfigError(ValueError):
    pass


SOLVER_ERRORS = (TrainingError, ExactTrainingError, LossEvaluationError, gen.GenerationError)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``hypothesis`` keys: ``Z`` (primitive kind), ``p``, ``a_mask`` and
    ``b_mask`` (``"all"``, ``"constant"`` or ``"none"``), ``init_scale``.
    ``train`` holds :class:`TrainConfig` overrides for the iterative
    trainers; ``exact`` holds options of the exact trainers (``M``,
    ``time_limit``, ``backend``, ``network``).
    """

    name: str
    generator: str
    gen_params: dict = field(default_factory=dict)
    noise_std: float = 0.0
    noise_test: bool = True
    hypothesis: dict = field(default_factory=dict)
    trainer: str = "smoothed"
    loss: str = "pred"
    norm: str = "l2_squared"
    eval_norm: str | None = None
    train: dict = field(default_factory=dict)
    exact: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str = "runs"

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ConfigError(f"unknown generator {self.generator!r}; expected one of {GENERATORS}")
        if self.trainer not in TRAINERS:
            raise ConfigError(f"unknown trainer {self.trainer!r}; expected one of {TRAINERS}")
        if self.loss not in ("pred", "sub", "predictability", "suboptimality"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        try:
            NormSpec(self.norm)
            if self.eval_norm is not None:
                NormSpec(self.eval_norm)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        self.seeds = [int(s) for s in self.seeds]
        if self.noise_std < 0:
            raise ConfigError("noise_std must be nonnegative")
        known = {f.name for f in fields(TrainConfig)}
        bad = set(self.train) - known
        if bad:
            raise ConfigError(f"unknown training options {sorted(bad)}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown config keys {sorted(bad)}")
        if "name" not in d or "generator" not in d:
            raise ConfigError("config needs 'name' and 'generator'")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(d)

    def config_hash(self):
        d = self.to_dict()
        d.pop("out_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# named configs
# ---------------------------------------------------------------------------

def _g2(name, trainer, p, loss="pred", norm="l1", seeds=(0,), **kw):
    return dict(name=name, generator="synthetic_l1",
                gen_params={"n": 5, "cost_range": [0.0, 1.0], "N_train": 100, "N_test": 500},
                hypothesis={"Z": "simplex", "p": p, "a_mask": "constant", "b_mask": "constant"},
                trainer=trainer, loss=loss, norm=norm, seeds=list(seeds), **kw)


NAMED_CONFIGS = {
    "toy_smoothed": dict(name="toy_smoothed", generator="toy", gen_params={"N_train": 100, "N_test": 100},
                         hypothesis={"Z": "simplex", "p": 2}, trainer="smoothed", norm="l2_squared"),
    "table5_noiseless_p5": _g2("table5_noiseless_p5", "milp", 5, exact={"M": 10.0, "time_limit": 600}),
    "table5_noiseless_p4": _g2("table5_noiseless_p4", "milp", 4, exact={"M": 10.0, "time_limit": 600}),
    "table5_noiseless_p5_alg2": _g2("table5_noiseless_p5_alg2", "smoothed", 5, norm="l2_squared",
                                    train={"max_iters": 500}),
    "table1_alg_comparison": _g2("table1_alg_comparison", "smoothed", 5, norm="l2_squared",
                                 seeds=range(10), train={"max_iters": 500}),
    "table1_alg1": _g2("table1_alg1", "vanilla", 5, norm="l2_squared", seeds=range(10),
                       train={"max_iters": 500}),
    "table3_consistency": dict(name="table3_consistency", generator="synthetic_l1",
                               gen_params={"n": 2, "cost_range": [-1.0, 1.0], "N_train": 100, "N_test": 500},
                               noise_std=0.2, hypothesis={"Z": "l1_ball", "p": 2, "b_mask": "constant"},
                               trainer="convex", norm="l2_squared", seeds=list(range(5))),
    "convex_noiseless": dict(name="convex_noiseless", generator="synthetic_l1",
                             gen_params={"n": 2, "cost_range": [-1.0, 1.0], "N_train": 100, "N_test": 500},
                             hypothesis={"Z": "l1_ball", "p": 2, "b_mask": "constant"},
                             trainer="convex", norm="l2_squared"),
    "network_recovery": dict(name="network_recovery", generator="power5",
                             gen_params={"N_train": 100, "N_test": 200}, trainer="network",
                             norm="l2_squared", exact={"backend": "branch_and_bound"}),
    "table2_power5_p3": dict(name="table2_power5_p3", generator="power5",
                             gen_params={"N_train": 100, "N_test": 200},
                             hypothesis={"Z": "simplex", "p": 3}, trainer="smoothed", norm="l2_squared",
                             train={"max_iters": 500}, seeds=[0, 1, 2]),
    "table2_power5_p6": dict(name="table2_power5_p6", generator="power5",
                             gen_params={"N_train": 100, "N_test": 200},
                             hypothesis={"Z": "simplex", "p": 6}, trainer="smoothed", norm="l2_squared",
                             train={"max_iters": 500}, seeds=[0, 1, 2]),
    "table2_power5_regression": dict(name="table2_power5_regression", generator="power5",
                                     gen_params={"N_train": 100, "N_test": 200}, trainer="regression",
                                     norm="l2_squared", seeds=[0, 1, 2]),
}


def named_config(key, **overrides):
    if key not in NAMED_CONFIGS:
        raise ConfigError(f"unknown named config {key!r}; available: {sorted(NAMED_CONFIGS)}")
    d = json.loads(json.dumps(NAMED_CONFIGS[key]))
    d.update(overrides)
    return ExperimentConfig.from_dict(d)


# ---------------------------------------------------------------------------
# pipeline pieces
# ---------------------------------------------------------------------------

def generate(cfg, seed):
    """``(train, test)`` for one seed.

    Noise goes on both splits unless ``cfg.noise_test`` is off; true losses
    are always measured against the clean problem.
    """
    p = dict(cfg.gen_params)
    if cfg.generator == "toy":
        tr, te = gen.gen_toy(p.get("N_train", 100), p.get("N_test", 100), seed)
    elif cfg.generator == "synthetic_l1":
        tr, te = gen.gen_synthetic_l1(p.get("n", 5), tuple(p.get("cost_range", (0.0, 1.0))),
                                      p.get("N_train", 100), p.get("N_test", 100), seed,
                                      p.get("e"), p.get("h", 1.0))
    elif cfg.generator == "power5":
        lines = p.get("lines", gen.POWER5_LINES)
        tr, te = gen.gen_power5(p.get("N_train", 100), p.get("N_test", 200), seed, lines)
    else:
        tr, te = gen.gen_ieee14(p.get("N_train", 100), p.get("N_test", 200), seed)
    if cfg.noise_std > 0:
        # independent noise streams per split, disjoint from the generator's own
        k_tr, k_te = (int(c.generate_state(1)[0]) for c in np.random.SeedSequence(seed).spawn(4)[2:])
        tr = gen.add_noise(tr, cfg.noise_std, k_tr)
        if cfg.noise_test:
            te = gen.add_noise(te, cfg.noise_std, k_te)
    return tr, te


def _mask(spec, K):
    if spec in (None, "all"):
        return (True,) * (K + 1)
    if spec == "constant":
        return (True,) + (False,) * K
    if spec == "none":
        return (False,) * (K + 1)
    if isinstance(spec, (list, tuple)) and len(spec) == K + 1:
        return tuple(bool(v) for v in spec)
    raise ConfigError(f"bad mask {spec!r}")


def primitive_of(cfg):
    h = cfg.hypothesis
    return make_primitive(h.get("Z", "simplex"), int(h.get("p", 2)))


def network_model(cfg):
    d = dict(cfg.exact.get("network", {}))
    if cfg.generator == "power5":
        base = {"n_nodes": 5, "gen_nodes": gen.POWER5_GEN_NODES, "gen_cap": 3.5, "line_cap": 3.5}
    elif cfg.generator == "ieee14":
        base = {"n_nodes": 14, "gen_nodes": [g - 1 for g in gen.IEEE14_GEN_BUSES], "gen_cap": 3.6, "line_cap": 3.0}
    else:
        raise ConfigError("the network trainer needs a network generator")
    base.update(d)
    return NetworkModel(base["n_nodes"], tuple(base["gen_nodes"]), base["gen_cap"], base["line_cap"],
                        tuple(tuple(l) for l in base.get("lines", ())))


def network_metric_fn(result, norm, true_oracle):
    """Per-point metrics for a recovered network (its dispatch LP plays the hypothesis)."""
    rec = result.oracle

    def fn(x, s):
        r = region_losses(rec.region(s), rec.cost(s), norm, x)
        out = {"est_pred": r["pred"], "est_sub": r["sub"]}
        if true_oracle is not None:
            status, _, xs = rec.solve(s)
            if status != "optimal":
                raise LossEvaluationError(f"recovered dispatch ended with status {status}")
            t = true_losses(true_oracle, norm, xs, s)
            out.update(true_pred=t["l_p"], true_sub=t["l_sub"])
        return out

    return fn


def _train_config(cfg, seed):
    opts = dict(cfg.train)
    opts.setdefault("seed", seed)
    return TrainConfig(loss=cfg.loss, norm=NormSpec(cfg.norm), smoothing=cfg.trainer == "smoothed", **opts)


def run_seed(cfg, seed, out_dir=None):
    """Train and evaluate one seed; returns a JSON-ready record."""
    rec = {"seed": int(seed), "status": "ok"}
    t0 = time.perf_counter()
    try:
        train_data, test_data = generate(cfg, seed)
        obj = gen.objective_of(train_data)
        norm = NormSpec(cfg.norm)
        eval_norm = NormSpec(cfg.eval_norm or cfg.norm)
        K = train_data.K
        a_free = _mask(cfg.hypothesis.get("a_mask"), K)
        b_free = _mask(cfg.hypothesis.get("b_mask"), K)
        metric_fn, theta, Z = None, None, None
        if cfg.trainer in ("vanilla", "smoothed"):
            Z = primitive_of(cfg)
            theta0 = init_params((train_data.n, Z.p, K), FREE, seed, a_free, b_free,
                                 cfg.hypothesis.get("init_scale", 1.0))
            rep = train(train_data, Z, obj, _train_config(cfg, seed), theta0)
            theta = rep.theta
            tr = rep.to_dict(include_theta=False)
            tr["monotone_violations"] = rep.monotone_violations()
            if out_dir is not None:
                (out_dir / f"trajectory_seed{seed}.csv").write_text(rep.trajectory_csv())
        elif cfg.trainer == "convex":
            Z = primitive_of(cfg)
            res = train_convex_alpha(train_data, Z, obj, norm, cfg.loss, b_free=b_free)
            theta = res.theta
            tr = {"trainer": "convex", "final_loss": res.train_loss, "alpha": res.alpha,
                  "b": res.b.tolist(), "status": res.status, "solve_time": res.solve_time}
        elif cfg.trainer == "milp":
            Z = make_primitive("simplex", int(cfg.hypothesis.get("p", 2)))
            res = train_milp_simplex(train_data, obj, Z.p, cfg.loss, cfg.norm, cfg.exact.get("M", 10.0),
                                     a_free, cfg.exact.get("time_limit"), cfg.exact.get("mip_gap", 1e-6))
            theta = res.theta
            tr = {"trainer": "milp", "final_loss": res.train_loss, "mip_gap": res.mip_gap,
                  "dual_bound": res.dual_bound, "assignment_bound": res.assignment_bound,
                  "status": res.status, "wall_time": res.wall_time}
        elif cfg.trainer == "network":
            net = network_model(cfg)
            res = train_network_milp(train_data, net, cfg.loss, norm, cfg.exact.get("backend", "branch_and_bound"))
            metric_fn = network_metric_fn(res, eval_norm, test_data.oracle)
            tr = {"trainer": "network", "final_loss": res.train_loss, "y": res.y.tolist(),
                  "backend": res.backend, "nodes": res.nodes, "wall_time": res.wall_time,
                  "edges": res.edge_list()}
            if out_dir is not None:
                (out_dir / f"network_seed{seed}.json").write_text(res.edge_list_json(indent=2))
                (out_dir / f"network_seed{seed}.dot").write_text(res.to_dot())
        else:
            res = fit_regression_baseline(train_data)
            theta = res.theta
            Z = make_primitive("simplex", 1)
            tr = {"trainer": "regression", "final_loss": res.mse, "rank_deficient": bool(res.rank_deficient)}
        if theta is not None:
            tr["theta"] = theta.to_dict()
        ev = evaluate(theta, Z, obj, eval_norm, test_data, metric_fn=metric_fn)
        rec["train_report"] = tr
        rec["eval_report"] = ev.to_dict(per_point=False)
    except SOLVER_ERRORS as exc:
        rec["status"] = "solver_failure"
        rec["error"] = f"{type(exc).__name__}: {exc}"
    rec["wall_time"] = time.perf_counter() - t0
    return rec


def _run_seed_args(args):
    cfg_dict, seed, out_dir = args
    return run_seed(ExperimentConfig.from_dict(cfg_dict), seed, Path(out_dir) if out_dir else None)


def aggregate(records):
    out = {}
    ok = [r for r in records if r["status"] == "ok"]
    for m in METRICS + ("train_loss",):
        vals = []
        for r in ok:
            v = r["train_report"].get("final_loss") if m == "train_loss" else r["eval_report"].get(m)
            if v is None:
                continue
            vals.append(math.inf if v == "inf" else float(v))
        if not vals:
            continue
        arr = np.array(vals)
        finite = np.all(np.isfinite(arr))
        out[m] = {"mean": float(np.mean(arr)) if finite else "inf",
                  "std": float(np.std(arr)) if finite else "inf",
                  "median": float(np.median(arr)) if np.isfinite(np.median(arr)) else "inf",
                  "n": len(vals)}
    return out


def metrics_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["seed", "status", "train_loss"] + list(METRICS))
    for r in records:
        if r["status"] != "ok":
            w.writerow([r["seed"], r["status"]] + [""] * (1 + len(METRICS)))
            continue
        ev = r["eval_report"]
        w.writerow([r["seed"], r["status"], r["train_report"].get("final_loss")] + [ev.get(m) for m in METRICS])
    return buf.getvalue()


def run_experiment(cfg, out_dir=None, workers=1):
    """Run every seed of ``cfg`` and write the report; returns the report path.

    Seeds run in parallel when ``workers > 1``; records are merged in seed
    order so the report does not depend on completion order.
    """
    out = Path(out_dir or cfg.out_dir) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    if workers > 1 and len(cfg.seeds) > 1:
        args = [(cfg.to_dict(), s, str(out)) for s in cfg.seeds]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_run_seed_args, args))
    else:
        records = [run_seed(cfg, s, out) for s in cfg.seeds]
    report = {"config_hash": cfg.config_hash(), "config": cfg.to_dict(), "seeds": records,
              "aggregate": aggregate(records)}
    failed = [r["seed"] for r in records if r["status"] != "ok"]
    if failed:
        report["error"] = {"failed_seeds": failed}
    path = out / "report.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True, default=_json_default))
    (out / "metrics.csv").write_text(metrics_csv(records))
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, float) and math.isinf(o):
        return "inf"
    raise TypeError(f"not serializable: {type(o)}")


def strip_times(report):
    """Copy of a report dict without wall-clock fields (for reproducibility checks)."""
    if isinstance(report, dict):
        return {k: strip_times(v) for k, v in report.items() if "time" not in k}
    if isinstance(report, list):
        return [strip_times(v) for v in report]
    return report

