"""Command-line interface.

Subcommands: ``scenarios`` (generate randomized demand scenarios),
``solve`` (single steady-state solve), ``optimize`` (baseline optimizer
sweep), ``train`` (seeded training runs), ``evaluate`` (greedy test-set
evaluation of a checkpoint) and ``report`` (regenerate derived tables from
raw CSVs).  Every subcommand accepts ``--json`` for machine-readable
output.  Configuration comes from bundled per-network defaults, an optional
TOML file (``--config``) and ``--set section.key=value`` overrides.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError, PRESETS, env_config_from, objective_from, resolve_config,
)
from .harness import (
    baseline_sweep, build_run_context, evaluate_run, train_run,
    write_baseline_report, write_run_report,
)
from .hydraulics import HydraulicModel
from .network import BUNDLED, load_bundled, parse_network
from .optimizers import METHODS
from .scenario import (
    DemandRandomizerConfig, build_scenario_set, load_scenarios, save_scenarios,
)


def _load_net(spec: str):
    if spec in BUNDLED:
        return load_bundled(spec), spec
    path = Path(spec)
    net = parse_network(path.read_text())
    return net, path.stem


def _resolve_tree(args) -> dict:
    """Effective config tree for a subcommand that needs an objective."""
    if args.net in BUNDLED:
        return resolve_config(args.net, args.preset, args.config, args.set or ())
    if args.config is None:
        raise ConfigError(
            f"{args.net!r} is not a bundled network; supply --config with a "
            "[network] section defining h_min and h_max"
        )
    from .config import apply_preset, apply_set_overrides, load_toml

    tree = apply_preset(load_toml(args.config), args.preset)
    tree = apply_set_overrides(tree, args.set or ())
    tree.setdefault("network", {}).setdefault("name", Path(args.net).stem)
    tree["network"]["preset"] = args.preset
    return tree


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    elif text:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _add_common(parser, *, preset=True) -> None:
    parser.add_argument("--json", action="store_true",
                        help="machine-readable JSON output")
    parser.add_argument("--config", type=Path, default=None,
                        help="TOML config file layered over bundled defaults")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config entry (TOML literal value)")
    if preset:
        parser.add_argument("--preset", choices=PRESETS, default="paper",
                            help="configuration preset (default: paper)")


# --------------------------------------------------------------------------
# Subcommand implementations
# --------------------------------------------------------------------------

def cmd_scenarios(args) -> int:
    net, _ = _load_net(args.net)
    tree = _resolve_tree(args)
    objective = objective_from(tree, net) if args.with_reference else None
    scenarios = build_scenario_set(
        net, args.n, DemandRandomizerConfig(), args.seed, stream=args.stream,
        with_reference=args.with_reference, env_config=env_config_from(tree),
        objective=objective, guide=args.guide,
    )
    save_scenarios(args.out, scenarios)
    payload = {
        "out": str(args.out), "n": len(scenarios), "seed": args.seed,
        "stream": args.stream, "with_reference": args.with_reference,
    }
    _emit(args, payload, f"wrote {len(scenarios)} scenarios to {args.out}")
    return 0


def cmd_solve(args) -> int:
    net, _ = _load_net(args.net)
    model = HydraulicModel(net)
    speeds = [float(s) for s in args.speeds.split(",")]
    if len(speeds) == 1:
        speeds = speeds * net.n_groups
    if len(speeds) != net.n_groups:
        raise ConfigError(
            f"--speeds needs 1 or {net.n_groups} values, got {len(speeds)}"
        )
    demands = model.base_demands * args.demand_factor
    state = model.solve(np.asarray(speeds), demands=demands)
    lines = ["node,head_m"]
    lines += [f"{j.id},{repr(float(h))}"
              for j, h in zip(net.junctions, state.heads)]
    payload = {
        "converged": state.converged,
        "iterations": state.iterations,
        "heads": {j.id: float(h) for j, h in zip(net.junctions, state.heads)},
        "pump_ops": [{"group": g.id, "flow_lps": float(q), "head_m": float(h),
                      "efficiency": float(e)}
                     for g, (q, h, e) in zip(net.pump_groups, state.pump_ops)],
        "tank_flows": {t.id: float(f)
                       for t, f in zip(net.tanks, state.tank_flows)},
    }
    _emit(args, payload, "\n".join(lines))
    return 0


def cmd_optimize(args) -> int:
    net, _ = _load_net(args.net)
    tree = _resolve_tree(args)
    objective = objective_from(tree, net)
    env_config = env_config_from(tree)
    if args.scenario:
        scenarios = load_scenarios(args.scenario)
    else:
        scenarios = build_scenario_set(
            net, args.n, DemandRandomizerConfig(), args.seed,
            stream="test-scenarios", env_config=env_config,
        )
    methods = list(METHODS) if args.method == "all" else [args.method]
    report = baseline_sweep(net, scenarios, methods, master_seed=args.seed,
                            objective=objective, env_config=env_config,
                            max_workers=args.workers, budget=args.budget)
    out = Path(args.out)
    if out.suffix == ".csv":
        from .harness import write_baseline_csv

        out.parent.mkdir(parents=True, exist_ok=True)
        write_baseline_csv(out, report.cells)
    else:
        write_baseline_report(out, report)
    lines = ["method,n,mean_value,median_value,mean_evaluations,n_failed"]
    for method, stat in report.stats.items():
        lines.append(f"{method},{stat.n},{stat.mean_value:.6f},"
                     f"{stat.median_value:.6f},{stat.mean_evaluations:.1f},"
                     f"{stat.n_failed}")
    payload = {
        "out": str(out),
        "stats": {m: asdict(s) for m, s in report.stats.items()},
    }
    _emit(args, payload, "\n".join(lines))
    return 0


def cmd_train(args) -> int:
    net, _ = _load_net(args.net)
    tree = _resolve_tree(args)
    results = []
    for k in range(args.runs):
        seed = args.seed + k
        run_tree = dict(tree)
        run_tree["run"] = {"seed": seed}
        ctx = build_run_context(run_tree, net, seed)
        run_dir = Path(args.out) if args.runs == 1 else Path(f"{args.out}-r{k}")
        _, log = train_run(ctx, run_dir)
        steps, ratios, lengths = log.validation_series()
        results.append({
            "run_dir": str(run_dir), "seed": seed,
            "final_val_value_ratio": ratios[-1] if ratios else None,
            "final_val_episode_len": lengths[-1] if lengths else None,
        })
    text = "\n".join(
        f"{r['run_dir']}: seed {r['seed']} "
        f"val_value_ratio {r['final_val_value_ratio']} "
        f"val_episode_len {r['final_val_episode_len']}" for r in results)
    _emit(args, {"runs": results}, text)
    return 0


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run)
    config_path = run_dir / "config.toml"
    if not config_path.exists():
        raise ConfigError(f"{run_dir} has no config.toml; is it a run directory?")
    from .config import load_toml

    tree = load_toml(config_path)
    name = tree.get("network", {}).get("name")
    if name not in BUNDLED:
        raise ConfigError(f"run config names unknown network {name!r}")
    net = load_bundled(name)
    seed = args.seed if args.seed is not None else tree.get("run", {}).get("seed")
    if seed is None:
        raise ConfigError("run config records no seed; pass --seed")
    ctx = build_run_context(tree, net, int(seed))
    row = evaluate_run(ctx, run_dir, checkpoint=args.checkpoint, label=args.label)
    text = (f"{row.network} ({row.guide}-guided, {row.n_scenarios} scenarios): "
            f"value_ratio {row.mean_value_ratio:.4f} "
            f"episode_len {row.mean_episode_length:.2f} "
            f"agent_solves {row.mean_agent_solves:.1f} "
            f"reference_evals {row.mean_reference_evaluations:.1f}")
    _emit(args, asdict(row), text)
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.from_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"{run_dir} is not a directory")
    write_run_report(run_dir)
    written = sorted(str(p.relative_to(run_dir))
                     for p in (run_dir / "report").glob("*") if p.is_file())
    _emit(args, {"run_dir": str(run_dir), "files": written},
          "\n".join(written))
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pumpsurge",
        description="Real-time pump speed optimization on water networks",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenarios", help="generate randomized demand scenarios")
    p.add_argument("--net", required=True, help="bundled name or INP path")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--stream", default="test-scenarios")
    p.add_argument("--with-reference", action="store_true")
    p.add_argument("--guide", choices=("nm", "osrt"), default="nm")
    p.add_argument("--out", type=Path, required=True, help="output JSONL path")
    _add_common(p)
    p.set_defaults(func=cmd_scenarios)

    p = sub.add_parser("solve", help="steady-state solve at fixed speeds")
    p.add_argument("--net", required=True)
    p.add_argument("--speeds", required=True,
                   help="comma-separated speed ratios (single value broadcasts)")
    p.add_argument("--demand-factor", type=float, default=1.0)
    _add_common(p, preset=False)
    p.set_defaults(func=cmd_solve, preset="paper")

    p = sub.add_parser("optimize", help="baseline optimizer sweep")
    p.add_argument("--net", required=True)
    p.add_argument("--method", choices=tuple(METHODS) + ("all",), default="all")
    p.add_argument("--scenario", "--scenarios", type=Path, default=None,
                   help="existing scenario JSONL (default: generate --n)")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--budget", type=int, default=None,
                   help="evaluation budget override for the chosen method(s)")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--out", type=Path, required=True,
                   help="output directory, or a .csv path for raw cells only")
    _add_common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("train", help="train the agent")
    p.add_argument("--net", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--runs", type=int, default=1,
                   help="independent seeded runs (seed, seed+1, ...)")
    p.add_argument("--out", type=Path, required=True,
                   help="run directory (suffix -rK when --runs > 1)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="greedy test-set evaluation of a run")
    p.add_argument("--run", type=Path, required=True, help="run directory")
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="parameter file (default: checkpoints/final.npz)")
    p.add_argument("--seed", type=int, default=None,
                   help="test-set seed (default: the run's training seed)")
    p.add_argument("--label", default="final")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="regenerate derived tables from raw CSVs")
    p.add_argument("--from", dest="from_dir", type=Path, required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # uniform nonzero exit with a clean message
        print(f"pumpsurge: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
