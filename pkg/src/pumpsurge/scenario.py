"""Randomized demand scenarios and their Nelder-Mead reference solutions.

Demand randomization follows the three-stage procedure exactly, drawing in
this order from one substream per scenario: (1) the total-demand factor
``U(0.3, 1.1)``, (2) one truncated-normal multiplier per junction in node
order (mean 1, stddev 1, truncated to [0.7, 1.3], rejection-sampled), then
(3) a deterministic rescale so the demands sum to the stage-1 total.
Initial pump speeds are drawn uniformly over the discrete speed grid.

Scenario sets persist as JSON lines; floats survive the round trip exactly
(Python's repr-based JSON encoding is shortest-round-trip).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .environment import EnvConfig, ObjectiveConfig, make_objective
from .hydraulics import HydraulicModel, NoConvergence, SolverConfig
from .network import Network
from .optimizers import NelderMeadConfig, nelder_mead, one_shot_random_trial
from .rng import make_rng, seed_triple

__all__ = [
    "DemandRandomizerConfig", "ReferenceSolution", "Scenario", "DegenerateBase",
    "randomize_demands", "randomize_initial_speeds", "build_scenario_set",
    "save_scenarios", "load_scenarios",
]


class DegenerateBase(ValueError):
    """Base demand vector has no positive entry; Alg. 3 cannot rescale."""


@dataclass(frozen=True)
class DemandRandomizerConfig:
    uniform_lo: float = 0.3
    uniform_hi: float = 1.1
    normal_mean: float = 1.0
    normal_stddev: float = 1.0
    normal_lo: float = 0.7
    normal_hi: float = 1.3

    def __post_init__(self):
        if not (self.uniform_lo < self.uniform_hi and self.normal_lo < self.normal_hi):
            raise ValueError("distribution bounds must satisfy lo < hi")


@dataclass(frozen=True)
class ReferenceSolution:
    speeds: tuple
    value: float
    evaluations: int

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"reference value must be in [0, 1], got {self.value}")


@dataclass(frozen=True)
class Scenario:
    demands: tuple
    initial_speeds: tuple
    seed: tuple            # (master_seed, stream_id, index)
    reference: ReferenceSolution | None = None


def _truncated_normal(rng: np.random.Generator, cfg: DemandRandomizerConfig) -> float:
    while True:
        x = rng.normal(cfg.normal_mean, cfg.normal_stddev)
        if cfg.normal_lo <= x <= cfg.normal_hi:
            return x


def randomize_demands(base, cfg: DemandRandomizerConfig, rng: np.random.Generator) -> np.ndarray:
    """Alg.-3 three-stage demand map: per-node jitter rescaled to a new total."""
    base = np.asarray(base, dtype=float)
    if not np.any(base > 0.0):
        raise DegenerateBase("all base demands are zero")
    c_tot = rng.uniform(cfg.uniform_lo, cfg.uniform_hi) * float(base.sum())
    demands = np.array([_truncated_normal(rng, cfg) * c for c in base])
    return demands * (c_tot / demands.sum())


def randomize_initial_speeds(
    n_groups: int, limits, rng: np.random.Generator, increment: float = 0.05
) -> np.ndarray:
    """Uniform draw over the discrete speed grid spanned by ``limits``."""
    lo, hi = float(limits[0]), float(limits[1])
    if hi < lo:
        raise ValueError(f"limits must satisfy lo <= hi, got {limits}")
    n_points = int(round((hi - lo) / increment)) + 1 if hi > lo else 1
    grid = lo + increment * np.arange(n_points)
    return grid[rng.integers(0, n_points, size=n_groups)]


def build_scenario_set(
    net: Network,
    n: int,
    cfg: DemandRandomizerConfig,
    master_seed: int,
    *,
    stream: str = "train-scenarios",
    with_reference: bool = False,
    env_config: EnvConfig | None = None,
    objective: ObjectiveConfig | None = None,
    solver_config: SolverConfig | None = None,
    nm_config: NelderMeadConfig | None = None,
    max_retries: int = 20,
    guide: str = "nm",
) -> list[Scenario]:
    """Generate ``n`` scenarios on disjoint substreams of ``master_seed``.

    Every scenario is validated by solving at its initial speeds; failures
    are redrawn from the same substream up to ``max_retries`` times.  With
    ``with_reference`` each scenario gets a reference solution over the
    speed box (requires ``objective``) computed by ``guide``: Nelder-Mead
    (``"nm"``) or a one-shot random trial (``"osrt"``).
    """
    if n < 1:
        raise ValueError(f"need n >= 1 scenarios, got {n}")
    if with_reference and objective is None:
        raise ValueError("with_reference=True requires an ObjectiveConfig")
    if guide not in ("nm", "osrt"):
        raise ValueError(f"guide must be 'nm' or 'osrt', got {guide!r}")
    env_config = env_config or EnvConfig()
    nm_config = nm_config or NelderMeadConfig()
    model = HydraulicModel(net, solver_config)
    base = model.base_demands
    limits = (env_config.s_lo, env_config.s_hi)
    box = [limits] * net.n_groups

    scenarios = []
    for index in range(n):
        rng = make_rng(master_seed, stream, index)
        for attempt in range(max_retries + 1):
            demands = randomize_demands(base, cfg, rng)
            speeds = randomize_initial_speeds(
                net.n_groups, limits, rng, env_config.increment
            )
            try:
                model.solve(speeds, demands=demands)
            except NoConvergence:
                if attempt == max_retries:
                    raise
                continue
            break
        reference = None
        if with_reference:
            objective_fn = make_objective(model, demands, objective)
            if guide == "nm":
                result = nelder_mead(objective_fn, box, nm_config)
            else:
                result = one_shot_random_trial(objective_fn, box, rng)
            reference = ReferenceSolution(
                speeds=tuple(float(s) for s in result.best_speeds),
                value=result.best_value,
                evaluations=result.evaluations,
            )
        scenarios.append(Scenario(
            demands=tuple(float(d) for d in demands),
            initial_speeds=tuple(float(s) for s in speeds),
            seed=seed_triple(master_seed, stream, index),
            reference=reference,
        ))
    return scenarios


def save_scenarios(path, scenarios) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for sc in scenarios:
            record = {
                "seed": list(sc.seed),
                "demands": list(sc.demands),
                "initial_speeds": list(sc.initial_speeds),
                "reference": None if sc.reference is None else {
                    "speeds": list(sc.reference.speeds),
                    "value": sc.reference.value,
                    "evaluations": sc.reference.evaluations,
                },
            }
            fh.write(json.dumps(record) + "\n")


def load_scenarios(path) -> list[Scenario]:
    scenarios = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            ref = record.get("reference")
            scenarios.append(Scenario(
                demands=tuple(record["demands"]),
                initial_speeds=tuple(record["initial_speeds"]),
                seed=tuple(record["seed"]),
                reference=None if ref is None else ReferenceSolution(
                    speeds=tuple(ref["speeds"]),
                    value=ref["value"],
                    evaluations=ref["evaluations"],
                ),
            ))
    return scenarios
