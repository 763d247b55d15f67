"""Command-line entry point: ``iofeas {generate,train,evaluate,experiment,report}``.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import experiments as ex
from .bench import generators as gen
from .geometry import make_primitive
from .hypothesis import HypothesisParams
from .losses import evaluate
from .norms import NormSpec

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
NORM_CHOICES = ("l1", "l2", "l2sq", "linf")


def _load_config(args):
    """Named config, JSON file, or a bare generator name, with CLI overrides applied."""
    src = args.config
    if src is None:
        raise ex.ConfigError("--config is required (a named config or a JSON file)")
    if src in ex.NAMED_CONFIGS:
        d = json.loads(json.dumps(ex.NAMED_CONFIGS[src]))
    elif Path(src).exists():
        try:
            d = json.loads(Path(src).read_text())
        except json.JSONDecodeError as exc:
            raise ex.ConfigError(f"cannot parse {src}: {exc}") from None
    else:
        raise ex.ConfigError(f"{src!r} is neither a named config nor a file; named: {sorted(ex.NAMED_CONFIGS)}")
    if getattr(args, "seed", None) is not None:
        d["seeds"] = [args.seed]
    if getattr(args, "trainer", None):
        d["trainer"] = args.trainer
    if getattr(args, "loss", None):
        d["loss"] = args.loss
    if getattr(args, "norm", None):
        d["norm"] = args.norm
    if getattr(args, "out_dir", None):
        d["out_dir"] = args.out_dir
    return ex.ExperimentConfig.from_dict(d)


def cmd_generate(args):
    cfg = _load_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for seed in cfg.seeds:
        tr, te = ex.generate(cfg, seed)
        tr.save(out / f"{cfg.name}_seed{seed}_train.csv")
        te.save(out / f"{cfg.name}_seed{seed}_test.csv")
        print(f"seed {seed}: {tr.N} train / {te.N} test rows -> {out}")
    return EXIT_OK


def cmd_train(args):
    cfg = _load_config(args)
    out = Path(cfg.out_dir) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    for seed in cfg.seeds:
        rec = ex.run_seed(cfg, seed, out)
        if rec["status"] != "ok":
            print(f"seed {seed}: {rec['error']}", file=sys.stderr)
            status = EXIT_SOLVER
            continue
        tr = rec["train_report"]
        (out / f"train_seed{seed}.json").write_text(json.dumps(tr, indent=2, sort_keys=True))
        if "theta" in tr:
            (out / f"theta_seed{seed}.json").write_text(json.dumps(tr["theta"], indent=2))
        print(f"seed {seed}: train loss {tr.get('final_loss')}")
    return status


def cmd_evaluate(args):
    cfg = _load_config(args)
    if args.theta is None:
        raise ex.ConfigError("--theta is required for evaluate")
    theta = HypothesisParams.from_json(Path(args.theta).read_text())
    if cfg.trainer == "regression":
        Z = make_primitive("simplex", 1)
    elif cfg.trainer == "network":
        raise ex.ConfigError("network models are evaluated by the experiment command")
    else:
        Z = ex.primitive_of(cfg)
    status = EXIT_OK
    for seed in cfg.seeds:
        _, te = ex.generate(cfg, seed)
        try:
            rep = evaluate(theta, Z, gen.objective_of(te), NormSpec(cfg.eval_norm or cfg.norm), te)
        except ex.SOLVER_ERRORS as exc:
            print(f"seed {seed}: {exc}", file=sys.stderr)
            status = EXIT_SOLVER
            continue
        print(json.dumps({"seed": seed, **rep.to_dict(per_point=False)}, sort_keys=True))
    return status


def cmd_experiment(args):
    cfg = _load_config(args)
    path = ex.run_experiment(cfg, workers=args.workers)
    report = json.loads(path.read_text())
    print(f"report: {path}")
    _print_aggregate(report)
    return EXIT_SOLVER if "error" in report else EXIT_OK


def _print_aggregate(report):
    print(f"config {report['config']['name']} ({report['config_hash']})")
    for m, st in report["aggregate"].items():
        print(f"  {m:>10s}: mean {st['mean']}  std {st['std']}  median {st['median']}  (n={st['n']})")


def cmd_report(args):
    status = EXIT_OK
    for p in args.reports:
        try:
            report = json.loads(Path(p).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"{p}: {exc}", file=sys.stderr)
            status = EXIT_CONFIG
            continue
        _print_aggregate(report)
    return status


def build_parser():
    ap = argparse.ArgumentParser(prog="iofeas", description="Learn feasible regions from observed decisions.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, trainer=True):
        p.add_argument("--config", help="named config or path to a JSON config")
        p.add_argument("--seed", type=int, help="run a single seed")
        p.add_argument("--out-dir", dest="out_dir")
        if trainer:
            p.add_argument("--trainer", choices=ex.TRAINERS)
            p.add_argument("--loss", choices=("pred", "sub"))
            p.add_argument("--norm", choices=NORM_CHOICES)

    p = sub.add_parser("generate", help="write train/test datasets")
    common(p, trainer=False)
    p.set_defaults(fn=cmd_generate)
    p = sub.add_parser("train", help="train and save parameters")
    common(p)
    p.set_defaults(fn=cmd_train)
    p = sub.add_parser("evaluate", help="evaluate saved parameters on the test split")
    common(p)
    p.add_argument("--theta", help="parameters JSON written by train")
    p.set_defaults(fn=cmd_evaluate)
    p = sub.add_parser("experiment", help="full pipeline with a JSON report")
    common(p)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_experiment)
    p = sub.add_parser("report", help="summarize report JSON files")
    p.add_argument("reports", nargs="+")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ex.SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
