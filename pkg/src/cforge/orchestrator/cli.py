"""``cforge`` command line: search, evaluate, price and sweep."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from ..compress import CompressionPlan, resolve_dependencies
from ..core.container import ContainerError, load_dataset, load_model
from ..energy import (analytic_cost_provider, baseline_energy, load_cost_profile, load_rq_table,
                      total_energy)
from .config import load_config
from .experiments import run_experiment
from .search import Environment, evaluate_command, run_ga_search, run_random_search, run_search


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _common(p, out=True):
    p.add_argument("--model", help="model container directory (default: bundled fixture)")
    p.add_argument("--data", help="dataset directory holding train-calib/validation/test splits")
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--cost-profile", dest="cost_profile", help="per-layer cost JSON")
    p.add_argument("--rq-table", dest="rq_table", help="R_Q power-ratio table JSON")
    p.add_argument("--lut", help="reward LUT CSV override")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    if out:
        p.add_argument("--out", default="cforge-out", help="output directory")
        p.add_argument("--no-plots", action="store_true", help="skip PNG figures")


def _config(args, **extra):
    over = {"model": args.model, "dataset": args.data, "cost_profile": args.cost_profile,
            "rq_table": args.rq_table, "lut": args.lut, "seed": args.seed,
            "threads": args.threads, **extra}
    return load_config(args.config, **over)


def _figures(report, out, warmup=0):
    from .plotting import plot_pareto, plot_reward_curve

    plot_reward_curve(report.records, Path(out) / "reward_curve.png", report.unlock_episode,
                      warmup)
    plot_pareto(report.records, Path(out) / "pareto.png", title=f"{report.method} search")


def _summary(report):
    fe = report.final_eval or {}
    return (f"{report.method}: best reward {report.best_reward:.4f} "
            f"({fe.get('split', 'validation')} loss {fe.get('loss_pct', float('nan')):.2f}%, "
            f"gain {fe.get('gain_pct', float('nan')):.2f}%)")


def cmd_compress(args):
    cfg = _config(args, episodes=args.episodes, warmup=args.warmup)
    report = run_search(cfg, out_dir=args.out, log=_log)
    if not args.no_plots:
        _figures(report, args.out, cfg.warmup)
    print(_summary(report))
    return 0


def cmd_ga(args):
    cfg = _config(args, population=args.population, generations=args.generations)
    env = Environment.from_config(cfg)
    report = run_ga_search(cfg, env, out_dir=args.out, log=_log)
    if not args.no_plots:
        _figures(report, args.out)
    print(_summary(report))
    if not args.no_baseline:
        # uniform-random policy at the same budget, reported next to the GA
        rnd = run_random_search(cfg, env, budget=len(report.records),
                                out_dir=Path(args.out) / "random")
        if not args.no_plots:
            _figures(rnd, Path(args.out) / "random")
        print(_summary(rnd))
    return 0


def _split(args, name):
    """One dataset split from --data, or from the bundled fixture."""
    if args.data:
        root = Path(args.data)
        return load_dataset(root / name if (root / name).exists() else root)
    from ..fixtures import load_fixture

    return load_fixture(name)[1][name]


def _model(args):
    if args.model:
        return load_model(args.model)
    from ..fixtures import load_fixture

    return load_fixture("test")[0]


def cmd_evaluate(args):
    cfg = _config(args, episodes=1, warmup=0, val_fraction=1.0)
    model = _model(args)
    plan = CompressionPlan.from_json(Path(args.plan).read_text())
    data = _split(args, args.split)
    calib = _split(args, "train-calib").head(cfg.calib_size)
    profile = analytic_cost_provider(model, cfg.e_comp, cfg.e_mem)
    if cfg.cost_profile:
        profile = load_cost_profile(cfg.cost_profile, model, profile)
    table = load_rq_table(cfg.rq_table) if cfg.rq_table else None
    metrics = evaluate_command(model, plan, data, calib, cfg, profile, table)
    metrics["split"] = args.split
    text = json.dumps(metrics, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_energy_report(args):
    cfg = _config(args)
    model = _model(args)
    profile = analytic_cost_provider(model, cfg.e_comp, cfg.e_mem)
    if cfg.cost_profile:
        profile = load_cost_profile(cfg.cost_profile, model, profile)
    table = load_rq_table(cfg.rq_table) if cfg.rq_table else None
    if args.plan:
        plan = CompressionPlan.from_json(Path(args.plan).read_text())
    else:
        plan = CompressionPlan.noop(len(model.layers))
    plan = resolve_dependencies(model, plan, cfg.ranked_pattern)
    eb = total_energy(model, plan, profile, table, cfg.ranked_pattern)
    base = baseline_energy(profile)
    rows = []
    for t, (layer, (bm, bc)) in enumerate(zip(model.layers, base)):
        rows.append({"t": t, "kind": layer.kind, "comp": float(profile.comp[t]),
                     "acc": float(profile.acc[t]), "baseline_mem": bm, "baseline_comp": bc,
                     "e_mem": float(eb.e_mem[t]), "e_comp": float(eb.e_comp[t])})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = {"profile": profile.to_json(), "plan": plan.to_records(), **eb.as_dict()}
    (out / "energy_report.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    with open(out / "energy_report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    if not args.no_plots:
        from .plotting import plot_energy_breakdown

        plot_energy_breakdown(rows, out / "energy_report.png")
    print(f"baseline {eb.baseline:.6g}  total {eb.total:.6g}  gain {100 * eb.gain:.2f}%")
    return 0


def cmd_sweep(args):
    cfg = _config(args, episodes=2, warmup=0)
    env = Environment.from_config(cfg)
    result = run_experiment(args.experiment, env, args.out, threads=cfg.threads,
                            plot=not args.no_plots)
    if args.experiment == "uniform-vs-mixed":
        for lv in result["levels"]:
            print(f"loss <= {lv['loss_pct']:7.2f}%  uniform {lv['uniform_gain']:6.2f}%  "
                  f"mixed {lv['mixed_gain']:6.2f}%")
        print(f"mixed front weakly dominates: {result['mixed_dominates']}")
    else:
        print(f"{len(result['points'])} sweep points written to {args.out}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="cforge", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="RL search for a layer-wise compression plan")
    _common(p)
    p.add_argument("--episodes", type=int)
    p.add_argument("--warmup", type=int)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("ga", help="NSGA-II search with the same evaluator")
    _common(p)
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--no-baseline", action="store_true",
                   help="skip the budget-matched random-policy baseline")
    p.set_defaults(func=cmd_ga)

    p = sub.add_parser("evaluate", help="metrics of one plan JSON")
    _common(p, out=False)
    p.add_argument("--plan", required=True)
    p.add_argument("--split", default="validation")
    p.add_argument("--out", help="also write the metrics JSON here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("energy-report", help="per-layer energy of the dense model or a plan")
    _common(p)
    p.add_argument("--plan")
    p.set_defaults(func=cmd_energy_report)

    p = sub.add_parser("sweep", help="built-in report experiments")
    _common(p)
    p.add_argument("--experiment", required=True, choices=("pruning-sweep", "uniform-vs-mixed"))
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, TypeError, ContainerError, FileNotFoundError) as exc:
        print(f"cforge {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
