#!/usr/bin/env python3
"""Calibration battery for the bundled networks (design-time tool).

Checks, per network: solver convergence across the demand x speed operating
range, the discretization gap between the continuous Nelder-Mead optimum
and the best speed-grid point, the spread of optimal grid points across
scenarios (the agent must have something to learn), cross-optimizer
consistency, Nelder-Mead evaluation counts and solve timings.
"""

from __future__ import annotations

import argparse
import itertools
import time

import numpy as np

from pumpsurge.environment import EnvConfig, ObjectiveConfig, make_objective
from pumpsurge.hydraulics import HydraulicModel, NoConvergence
from pumpsurge.network import load_bundled
from pumpsurge.optimizers import (
    DifferentialEvolutionConfig, NelderMeadConfig, differential_evolution, nelder_mead,
)
from pumpsurge.rng import make_rng
from pumpsurge.scenario import DemandRandomizerConfig, randomize_demands

BANDS = {"anytown-mod": (35.0, 75.0), "dtown-mod": (52.0, 80.0)}


def snap(x, cfg):
    grid = cfg.speed_grid()
    return grid[np.argmin(np.abs(grid[:, None] - np.asarray(x)[None, :]), axis=0)]


def check(name, n_scenarios, master_seed=123):
    net = load_bundled(name)
    h_min, h_max = BANDS[name]
    obj = ObjectiveConfig.for_network(net, h_min=h_min, h_max=h_max)
    env_cfg = EnvConfig()
    model = HydraulicModel(net)
    box = [(env_cfg.s_lo, env_cfg.s_hi)] * net.n_groups
    dm_cfg = DemandRandomizerConfig()
    grid = env_cfg.speed_grid()

    print(f"=== {name}: {net.n_nodes} junctions, {len(net.pipes)} pipes, "
          f"{net.n_groups} groups, eta_limit {obj.eta_limit:.4f}")

    # -- convergence sweep over box corners/edges at demand extremes
    fails = 0
    t0 = time.perf_counter()
    n_corner = 0
    for u in (0.3, 0.7, 1.1):
        demands = model.base_demands * u
        speed_choices = (0.7, 0.9, 1.1)
        for combo in itertools.product(speed_choices, repeat=min(net.n_groups, 5)):
            n_corner += 1
            try:
                model.solve(np.array(combo), demands=demands)
            except NoConvergence:
                fails += 1
    dt = (time.perf_counter() - t0) / n_corner
    print(f"corner sweep: {n_corner} solves, {fails} failures, {dt * 1e3:.2f} ms/solve")

    # -- random-scenario battery
    rng = make_rng(master_seed, "misc", 0)
    gaps, nm_evals, opt_points, ratios_rand, de_gaps, v_refs = [], [], [], [], [], []
    fails = 0
    for k in range(n_scenarios):
        demands = randomize_demands(model.base_demands, dm_cfg, rng)
        for _ in range(3):
            speeds = grid[rng.integers(0, len(grid), size=net.n_groups)]
            try:
                model.solve(speeds, demands=demands)
            except NoConvergence:
                fails += 1
        objective = make_objective(model, demands, obj)
        nm = nelder_mead(objective, box, NelderMeadConfig())
        nm_evals.append(nm.evaluations)
        v_refs.append(nm.best_value)
        v_snap = objective(snap(nm.best_speeds, env_cfg))
        gaps.append(1.0 - v_snap / nm.best_value)
        if net.n_groups == 1:
            values = [objective(np.array([s])) for s in grid]
            opt_points.append(int(np.argmax(values)))
            gaps[-1] = 1.0 - max(values) / nm.best_value
        else:
            opt_points.append(tuple(np.rint((snap(nm.best_speeds, env_cfg) - 0.7) / 0.05).astype(int)))
        # random-speed baseline value ratio (untrained proxy)
        v_rand = objective(grid[rng.integers(0, len(grid), size=net.n_groups)])
        ratios_rand.append(v_rand / nm.best_value)
        if k < max(6, n_scenarios // 4):
            de = differential_evolution(objective, box, make_rng(master_seed, "optimizer", k),
                                        DifferentialEvolutionConfig())
            de_gaps.append(abs(de.best_value - nm.best_value) / nm.best_value)

    gaps = np.array(gaps)
    print(f"random battery: {fails} convergence failures")
    print(f"v_ref: mean {np.mean(v_refs):.4f} min {np.min(v_refs):.4f}")
    print(f"discretization gap 1-v_grid/v_nm: mean {gaps.mean():.4f} "
          f"max {gaps.max():.4f}  (need max < 0.01 anytown / 0.02 walk)")
    print(f"NM evaluations: mean {np.mean(nm_evals):.1f} min {min(nm_evals)} max {max(nm_evals)}")
    if net.n_groups == 1:
        hist = np.bincount(opt_points, minlength=9)
        print(f"optimal grid point histogram: {hist.tolist()}")
    else:
        arr = np.array([list(p) for p in opt_points])
        print(f"optimal grid indices: mean {arr.mean(axis=0).round(2).tolist()} "
              f"min {arr.min(axis=0).tolist()} max {arr.max(axis=0).tolist()}")
    print(f"random-speed value ratio: mean {np.mean(ratios_rand):.3f} "
          f"p10 {np.percentile(ratios_rand, 10):.3f}")
    print(f"|DE-NM|/NM: mean {np.mean(de_gaps):.4f} max {np.max(de_gaps):.4f}")

    t0 = time.perf_counter()
    demands = model.base_demands * 0.7
    state = None
    for s in (0.9, 0.95, 0.9, 0.85, 0.9):
        state = model.solve(np.full(net.n_groups, s), demands=demands, warm=state)
    print(f"warm solve: {(time.perf_counter() - t0) / 5 * 1e3:.2f} ms")
    print()


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--net", choices=["anytown-mod", "dtown-mod", "both"], default="both")
    parser.add_argument("--scenarios", type=int, default=60)
    args = parser.parse_args()
    if args.net in ("anytown-mod", "both"):
        check("anytown-mod", args.scenarios)
    if args.net in ("dtown-mod", "both"):
        check("dtown-mod", max(10, args.scenarios // 4))


if __name__ == "__main__":
    main()
