"""Experiment orchestration and reporting.

Three workloads share this module: baseline optimizer sweeps over scenario
sets (per-method value statistics and per-scenario ratios against the
differential-evolution result), seeded training runs with their metric
curves, and final greedy evaluation of a trained policy on held-out test
scenarios.  Every statistic is persisted as CSV and every derived table is
a pure function of those raw CSVs, so reports can be regenerated
bit-identically from a run directory.

Run directory layout::

    runs/<name>/
        config.toml        assembled configuration (reproducibility record)
        scenarios.jsonl    validation scenarios used during training
        test_scenarios.jsonl  held-out test scenarios (written by evaluate)
        trainlog.csv       per-step training log
        checkpoints/       parameter snapshots (step_*.npz, final.npz)
        report/            derived tables and SVG plots
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .agent import TrainConfig, TrainLog, run_greedy_episode, train
from .environment import Env, EnvConfig, ObjectiveConfig, make_objective
from .hydraulics import HydraulicModel, SolverConfig
from .network import Network
from .neural import Parameters, load_parameters
from .optimizers import METHODS, NelderMeadConfig, method_config
from .rng import make_rng
from .scenario import (
    DemandRandomizerConfig, Scenario, build_scenario_set, load_scenarios,
    save_scenarios,
)

EMA_ALPHA = 0.3


class EmptySeries(ValueError):
    """EMA smoothing of an empty series is undefined."""


def ema_smooth(series, alpha: float = EMA_ALPHA) -> np.ndarray:
    """Exponential moving average: y0 = x0, y_t = alpha*x_t + (1-alpha)*y_{t-1}."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D series, got shape {x.shape}")
    if x.size == 0:
        raise EmptySeries("cannot smooth an empty series")
    y = np.empty_like(x)
    y[0] = x[0]
    for t in range(1, x.size):
        y[t] = alpha * x[t] + (1.0 - alpha) * y[t - 1]
    return y


# --------------------------------------------------------------------------
# Baseline optimizer sweep (Figs. 5-6 analogue)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BaselineCell:
    """One optimizer run on one scenario."""
    scenario: int
    method: str
    value: float            # nan when failed
    evaluations: int
    speeds: tuple
    failed: bool = False
    error: str = ""


@dataclass(frozen=True)
class MethodStats:
    """Box-plot statistics of one method's values over the scenario set."""
    method: str
    n: int
    n_failed: int
    mean_value: float
    min_value: float
    q1_value: float
    median_value: float
    q3_value: float
    max_value: float
    mean_evaluations: float


@dataclass(frozen=True)
class FinalRow:
    """One Table-4-style row: greedy-policy performance on a test set."""
    network: str
    guide: str
    label: str
    n_scenarios: int
    mean_value_ratio: float
    mean_episode_length: float
    mean_value: float
    mean_reference_value: float
    mean_agent_solves: float
    mean_reference_evaluations: float


@dataclass
class ExperimentReport:
    """Aggregated artifacts of a sweep and/or evaluation.

    Every field is recomputable from the persisted raw CSVs: ``cells``
    round-trips through ``baseline.csv`` and the statistics/ratios are
    derived from it by :func:`method_statistics` / :func:`de_ratios`.
    """
    cells: list
    stats: dict
    ratios: dict
    final_rows: list

    @classmethod
    def from_cells(cls, cells, final_rows=()) -> "ExperimentReport":
        return cls(
            cells=list(cells),
            stats=method_statistics(cells),
            ratios=de_ratios(cells),
            final_rows=list(final_rows),
        )


def _run_cell(objective, method: str, box, rng, budget=None) -> tuple[float, int, tuple]:
    result = METHODS[method](objective, box, rng, cfg=method_config(method, budget))
    return result.best_value, result.evaluations, tuple(map(float, result.best_speeds))


def baseline_sweep(
    net: Network,
    scenarios,
    methods=None,
    *,
    master_seed: int,
    objective: ObjectiveConfig,
    env_config: EnvConfig | None = None,
    solver_config: SolverConfig | None = None,
    max_workers: int = 4,
    budget: int | None = None,
) -> ExperimentReport:
    """Run each optimizer on each scenario; failures mark one cell, not the sweep.

    Cell seeds derive from (master seed, "optimizer" stream, cell index), so
    results do not depend on worker scheduling.
    """
    if len(scenarios) < 1:
        raise ValueError("baseline_sweep needs at least one scenario")
    methods = list(METHODS) if methods is None else list(methods)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {sorted(METHODS)}")
    env_config = env_config or EnvConfig()
    box = [(env_config.s_lo, env_config.s_hi)] * net.n_groups
    model = HydraulicModel(net, solver_config)

    jobs = []
    for i, scenario in enumerate(scenarios):
        objective_fn = make_objective(model, np.asarray(scenario.demands), objective,
                                      solver_config)
        for j, method in enumerate(methods):
            index = i * len(methods) + j
            rng = make_rng(master_seed, "optimizer", index)
            jobs.append((i, method, objective_fn, rng))

    def run(job) -> BaselineCell:
        i, method, objective_fn, rng = job
        try:
            value, evaluations, speeds = _run_cell(objective_fn, method, box,
                                                      rng, budget)
        except Exception as exc:  # per-cell failure: record and continue
            return BaselineCell(scenario=i, method=method, value=float("nan"),
                                evaluations=0, speeds=(), failed=True,
                                error=f"{type(exc).__name__}: {exc}")
        return BaselineCell(scenario=i, method=method, value=value,
                            evaluations=evaluations, speeds=speeds)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        cells = list(pool.map(run, jobs))
    return ExperimentReport.from_cells(cells)


def method_statistics(cells) -> dict:
    """Per-method box-plot statistics over non-failed cells."""
    stats = {}
    for method in dict.fromkeys(cell.method for cell in cells):
        mine = [c for c in cells if c.method == method]
        good = [c for c in mine if not c.failed]
        values = np.array([c.value for c in good], dtype=float)
        if values.size == 0:
            stats[method] = MethodStats(method, len(mine), len(mine),
                                        *[float("nan")] * 7)
            continue
        q1, med, q3 = np.percentile(values, [25.0, 50.0, 75.0])
        stats[method] = MethodStats(
            method=method, n=len(mine), n_failed=len(mine) - len(good),
            mean_value=float(values.mean()), min_value=float(values.min()),
            q1_value=float(q1), median_value=float(med), q3_value=float(q3),
            max_value=float(values.max()),
            mean_evaluations=float(np.mean([c.evaluations for c in good])),
        )
    return stats


def de_ratios(cells) -> dict:
    """Per-method, per-scenario value ratios against the DE cell (Fig. 6)."""
    de_values = {c.scenario: c.value for c in cells
                 if c.method == "de" and not c.failed}
    ratios: dict = {}
    for cell in cells:
        if cell.failed or cell.scenario not in de_values:
            continue
        ratios.setdefault(cell.method, {})[cell.scenario] = (
            cell.value / de_values[cell.scenario]
        )
    return ratios


# --------------------------------------------------------------------------
# CSV persistence (canonical artifacts)
# --------------------------------------------------------------------------

def _write_rows(path, header, rows) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buffer.getvalue())


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_baseline_csv(path, cells) -> None:
    rows = [(c.scenario, c.method, "" if c.failed else repr(c.value),
             c.evaluations, ";".join(repr(s) for s in c.speeds),
             int(c.failed), c.error) for c in cells]
    _write_rows(path, ("scenario", "method", "value", "evaluations",
                       "speeds", "failed", "error"), rows)


def read_baseline_csv(path) -> list:
    cells = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            failed = bool(int(row["failed"]))
            cells.append(BaselineCell(
                scenario=int(row["scenario"]), method=row["method"],
                value=float("nan") if failed else float(row["value"]),
                evaluations=int(row["evaluations"]),
                speeds=tuple(float(s) for s in row["speeds"].split(";") if s),
                failed=failed, error=row["error"],
            ))
    return cells


def write_summary_csv(path, stats: dict) -> None:
    names = [f.name for f in fields(MethodStats)]
    rows = [tuple(_fmt(getattr(stat, name)) for name in names)
            for stat in stats.values()]
    _write_rows(path, tuple(names), rows)


def write_ratio_csv(path, ratios: dict) -> None:
    methods = sorted(ratios)
    scenario_ids = sorted({s for per in ratios.values() for s in per})
    rows = [[sid] + [_fmt(ratios[m][sid]) if sid in ratios[m] else ""
                     for m in methods] for sid in scenario_ids]
    _write_rows(path, tuple(["scenario"] + methods), rows)


def write_final_csv(path, rows) -> None:
    names = [f.name for f in fields(FinalRow)]
    _write_rows(path, tuple(names),
                [tuple(_fmt(getattr(row, name)) for name in names) for row in rows])


def read_final_csv(path) -> list:
    rows = []
    with Path(path).open(newline="") as fh:
        for record in csv.DictReader(fh):
            rows.append(FinalRow(
                network=record["network"], guide=record["guide"],
                label=record["label"], n_scenarios=int(record["n_scenarios"]),
                mean_value_ratio=float(record["mean_value_ratio"]),
                mean_episode_length=float(record["mean_episode_length"]),
                mean_value=float(record["mean_value"]),
                mean_reference_value=float(record["mean_reference_value"]),
                mean_agent_solves=float(record["mean_agent_solves"]),
                mean_reference_evaluations=float(record["mean_reference_evaluations"]),
            ))
    return rows


# --------------------------------------------------------------------------
# Training curves (Figs. 7-11 analogue)
# --------------------------------------------------------------------------

def _read_trainlog(path) -> list:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def training_curves(trainlog_rows, alpha: float = EMA_ALPHA) -> dict:
    """Raw and EMA-smoothed metric series keyed by metric name.

    Metrics: ``episode_reward`` (one point per finished episode), ``loss``
    (one point per gradient update) and the validation probes
    ``val_value_ratio`` / ``val_episode_len``.
    """
    curves = {}
    specs = (
        ("episode_reward", "episode_reward"),
        ("loss", "loss"),
        ("val_value_ratio", "val_value_ratio"),
        ("val_episode_len", "val_episode_len"),
    )
    for metric, column in specs:
        steps, raw = [], []
        for row in trainlog_rows:
            text = row[column]
            if text == "":
                continue
            steps.append(int(row["step"]))
            raw.append(float(text))
        if not steps:
            continue
        curves[metric] = (np.array(steps), np.array(raw),
                          ema_smooth(raw, alpha))
    return curves


def write_curve_csv(path, metric: str, steps, raw, smoothed) -> None:
    rows = [(int(s), repr(float(x)), repr(float(y)))
            for s, x, y in zip(steps, raw, smoothed)]
    _write_rows(path, ("step", metric, f"{metric}_ema"), rows)


# --------------------------------------------------------------------------
# Final greedy evaluation (Table 4 analogue)
# --------------------------------------------------------------------------

def final_test(
    params: Parameters,
    net: Network,
    test_scenarios,
    *,
    objective: ObjectiveConfig,
    env_config: EnvConfig | None = None,
    solver_config: SolverConfig | None = None,
    network_name: str = "",
    guide: str = "nm",
    label: str = "final",
) -> FinalRow:
    """Greedy-policy episode on every test scenario; means for the report."""
    if not test_scenarios:
        raise ValueError("final_test needs at least one scenario")
    env = Env(net, objective, env_config, mode="infer",
              solver_config=solver_config)
    ratios, lengths, values, ref_values, solves, ref_evals = [], [], [], [], [], []
    for scenario in test_scenarios:
        ratio, length, _ = run_greedy_episode(params, env, scenario)
        metrics = env.evaluate_final()
        ratios.append(ratio)
        lengths.append(length)
        values.append(metrics.v_terminal)
        ref_values.append(metrics.v_ref)
        solves.append(env.episode_solve_count)
        ref_evals.append(scenario.reference.evaluations)
    return FinalRow(
        network=network_name or "network",
        guide=guide,
        label=label,
        n_scenarios=len(test_scenarios),
        mean_value_ratio=float(np.mean(ratios)),
        mean_episode_length=float(np.mean(lengths)),
        mean_value=float(np.mean(values)),
        mean_reference_value=float(np.mean(ref_values)),
        mean_agent_solves=float(np.mean(solves)),
        mean_reference_evaluations=float(np.mean(ref_evals)),
    )


# --------------------------------------------------------------------------
# Run directories
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RunContext:
    """Everything needed to train/evaluate one configuration."""
    tree: dict
    net: Network
    network_name: str
    objective: ObjectiveConfig
    env_config: EnvConfig
    train_config: TrainConfig
    n_validation: int
    n_test: int
    master_seed: int
    solver_config: SolverConfig | None = None

    def with_seed(self, seed: int) -> "RunContext":
        return replace(self, master_seed=seed)


def build_run_context(tree: dict, net: Network, master_seed: int) -> RunContext:
    from .config import env_config_from, objective_from, train_config_from

    scenario_section = tree.get("scenarios", {})
    return RunContext(
        tree=tree,
        net=net,
        network_name=tree.get("network", {}).get("name", "network"),
        objective=objective_from(tree, net),
        env_config=env_config_from(tree),
        train_config=train_config_from(tree),
        n_validation=int(scenario_section.get("n_validation", 30)),
        n_test=int(scenario_section.get("n_test", 20)),
        master_seed=master_seed,
    )


def train_run(ctx: RunContext, run_dir) -> tuple[Parameters, TrainLog]:
    """Execute one seeded training run and persist all artifacts."""
    from .config import write_config

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "report").mkdir(exist_ok=True)
    write_config(run_dir / "config.toml", ctx.tree)

    validation = build_scenario_set(
        ctx.net, ctx.n_validation, DemandRandomizerConfig(), ctx.master_seed,
        stream="validation-scenarios", with_reference=True,
        env_config=ctx.env_config, objective=ctx.objective,
        solver_config=ctx.solver_config, guide=ctx.train_config.guide,
    )
    save_scenarios(run_dir / "scenarios.jsonl", validation)

    env = Env(ctx.net, ctx.objective, ctx.env_config, mode="train",
              solver_config=ctx.solver_config)
    params, log = train(env, validation, ctx.train_config, ctx.master_seed,
                        out_dir=run_dir)
    write_run_report(run_dir)
    return params, log


def build_test_set(ctx: RunContext) -> list:
    return build_scenario_set(
        ctx.net, ctx.n_test, DemandRandomizerConfig(), ctx.master_seed,
        stream="test-scenarios", with_reference=True,
        env_config=ctx.env_config, objective=ctx.objective,
        solver_config=ctx.solver_config, guide=ctx.train_config.guide,
    )


def evaluate_run(ctx: RunContext, run_dir, checkpoint=None, label="final") -> FinalRow:
    """Greedy evaluation of a run's checkpoint on a fresh seeded test set."""
    run_dir = Path(run_dir)
    checkpoint = Path(checkpoint) if checkpoint else run_dir / "checkpoints" / "final.npz"
    params = load_parameters(checkpoint)
    test_path = run_dir / "test_scenarios.jsonl"
    if test_path.exists():
        test_scenarios = load_scenarios(test_path)
    else:
        test_scenarios = build_test_set(ctx)
        save_scenarios(test_path, test_scenarios)
    row = final_test(
        params, ctx.net, test_scenarios, objective=ctx.objective,
        env_config=ctx.env_config, solver_config=ctx.solver_config,
        network_name=ctx.network_name, guide=ctx.train_config.guide, label=label,
    )
    report_dir = run_dir / "report"
    report_dir.mkdir(exist_ok=True)
    existing = []
    final_path = report_dir / "final_test.csv"
    if final_path.exists():
        existing = [r for r in read_final_csv(final_path) if r.label != label]
    write_final_csv(final_path, existing + [row])
    return row


def write_run_report(run_dir) -> None:
    """(Re)derive every report table in ``run_dir/report`` from raw CSVs.

    Pure function of the raw artifacts: given the same ``trainlog.csv`` and
    ``baseline.csv`` it writes byte-identical outputs.
    """
    run_dir = Path(run_dir)
    report_dir = run_dir / "report"
    report_dir.mkdir(exist_ok=True)

    trainlog = run_dir / "trainlog.csv"
    if trainlog.exists():
        curves = training_curves(_read_trainlog(trainlog))
        for metric, (steps, raw, smoothed) in curves.items():
            write_curve_csv(report_dir / f"curve_{metric}.csv",
                            metric, steps, raw, smoothed)
        plot_curves(report_dir, curves)

    baseline = run_dir / "baseline.csv"
    if baseline.exists():
        cells = read_baseline_csv(baseline)
        write_summary_csv(report_dir / "baseline_summary.csv",
                          method_statistics(cells))
        write_ratio_csv(report_dir / "de_ratios.csv", de_ratios(cells))
        plot_baseline(report_dir, cells)


def write_baseline_report(run_dir, report: ExperimentReport) -> None:
    """Persist a sweep's raw cells, then derive its report tables."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_baseline_csv(run_dir / "baseline.csv", report.cells)
    write_run_report(run_dir)


# --------------------------------------------------------------------------
# SVG plots (convenience only; CSVs are the canonical outputs)
# --------------------------------------------------------------------------

def plot_curves(report_dir, curves: dict) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not curves:
        return
    fig, axes = plt.subplots(len(curves), 1, figsize=(7, 2.6 * len(curves)),
                             squeeze=False)
    for ax, (metric, (steps, raw, smoothed)) in zip(axes.ravel(), curves.items()):
        ax.plot(steps, raw, alpha=0.35, label=metric)
        ax.plot(steps, smoothed, label=f"{metric} EMA")
        ax.set_xlabel("step")
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(Path(report_dir) / "curves.svg")
    plt.close(fig)


def plot_baseline(report_dir, cells) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_method: dict = {}
    for cell in cells:
        if not cell.failed:
            by_method.setdefault(cell.method, []).append(cell.value)
    if not by_method:
        return
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.boxplot(list(by_method.values()), tick_labels=list(by_method))
    ax.set_ylabel("state value")
    fig.tight_layout()
    fig.savefig(Path(report_dir) / "baseline_box.svg")
    plt.close(fig)
