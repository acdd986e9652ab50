"""Derivative-free maximizers over a box of pump speed ratios.

All five methods maximize ``objective(x)`` over an axis-aligned box and
return an :class:`OptimizeResult`.  Evaluation accounting is exact: the
objective is wrapped in a counter and every hydraulic solve the optimizer
triggers increments it.  When the evaluation budget runs out mid-scheme the
method stops and returns the best point seen with ``budget_exhausted`` set.

An objective value of ``-inf`` marks an infeasible point (e.g. a
non-convergent solve); every method treats it as arbitrarily bad.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "OptimizeResult",
    "NelderMeadConfig", "DifferentialEvolutionConfig", "ParticleSwarmConfig", "FssrsConfig",
    "nelder_mead", "differential_evolution", "particle_swarm", "fssrs",
    "one_shot_random_trial", "METHODS",
]


@dataclass(frozen=True)
class OptimizeResult:
    best_speeds: np.ndarray
    best_value: float
    evaluations: int
    budget_exhausted: bool
    trace: tuple | None = None


class _BudgetUp(Exception):
    """Internal: the counting wrapper refused a call beyond the budget."""


class _Counter:
    """Counts evaluations, tracks the first-found best, enforces the budget."""

    def __init__(self, objective: Callable, budget: int, record_trace: bool):
        self._objective = objective
        self.budget = budget
        self.calls = 0
        self.best_x = None
        self.best_value = -np.inf
        self.trace = [] if record_trace else None

    def __call__(self, x) -> float:
        if self.calls >= self.budget:
            raise _BudgetUp
        self.calls += 1
        x = np.asarray(x, dtype=float)
        value = float(self._objective(x))
        if self.trace is not None:
            self.trace.append((x.copy(), value))
        if value > self.best_value or self.best_x is None:
            self.best_value = value
            self.best_x = x.copy()
        return value

    def result(self, budget_exhausted: bool) -> OptimizeResult:
        if self.best_x is None:
            raise ValueError("optimizer made no evaluations")
        return OptimizeResult(
            best_speeds=self.best_x,
            best_value=self.best_value,
            evaluations=self.calls,
            budget_exhausted=budget_exhausted,
            trace=tuple(self.trace) if self.trace is not None else None,
        )


def _box_arrays(box) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(box, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or np.any(arr[:, 0] > arr[:, 1]):
        raise ValueError(f"box must be a (d, 2) array of lo <= hi rows, got {box!r}")
    return arr[:, 0].copy(), arr[:, 1].copy()


@dataclass(frozen=True)
class NelderMeadConfig:
    budget: int = 100
    initial_step: float = 0.1
    x_tol: float = 1e-3       # simplex size threshold, sup norm
    f_tol: float = 1e-7       # value-spread threshold
    x0: tuple | None = None   # default: box center
    record_trace: bool = False


def nelder_mead(objective, box, cfg: NelderMeadConfig = NelderMeadConfig()) -> OptimizeResult:
    """Classic reflect/expand/contract/shrink simplex, clipped to the box."""
    lo, hi = _box_arrays(box)
    d = lo.shape[0]
    counter = _Counter(objective, cfg.budget, cfg.record_trace)
    alpha, gamma, rho, sigma = 1.0, 2.0, 0.5, 0.5

    x0 = np.asarray(cfg.x0, dtype=float) if cfg.x0 is not None else (lo + hi) / 2.0
    simplex = [np.clip(x0, lo, hi)]
    for i in range(d):
        step = cfg.initial_step * ((hi[i] - lo[i]) if hi[i] > lo[i] else 1.0)
        vertex = simplex[0].copy()
        vertex[i] = vertex[i] + step if vertex[i] + step <= hi[i] else vertex[i] - step
        simplex.append(np.clip(vertex, lo, hi))
    exhausted = False
    try:
        values = [counter(v) for v in simplex]
        while True:
            order = sorted(range(d + 1), key=lambda i: -values[i])
            simplex = [simplex[i] for i in order]
            values = [values[i] for i in order]
            spread = max(np.max(np.abs(v - simplex[0])) for v in simplex[1:])
            finite = [v for v in values if np.isfinite(v)]
            if spread <= cfg.x_tol and finite and max(finite) - min(finite) <= cfg.f_tol:
                break

            centroid = np.mean(simplex[:-1], axis=0)
            reflected = np.clip(centroid + alpha * (centroid - simplex[-1]), lo, hi)
            f_r = counter(reflected)
            if f_r > values[0]:
                expanded = np.clip(centroid + gamma * (reflected - centroid), lo, hi)
                f_e = counter(expanded)
                if f_e > f_r:
                    simplex[-1], values[-1] = expanded, f_e
                else:
                    simplex[-1], values[-1] = reflected, f_r
            elif f_r > values[-2]:
                simplex[-1], values[-1] = reflected, f_r
            else:
                contracted = np.clip(centroid + rho * (simplex[-1] - centroid), lo, hi)
                f_c = counter(contracted)
                if f_c > values[-1]:
                    simplex[-1], values[-1] = contracted, f_c
                else:
                    for i in range(1, d + 1):
                        simplex[i] = np.clip(
                            simplex[0] + sigma * (simplex[i] - simplex[0]), lo, hi
                        )
                        values[i] = counter(simplex[i])
    except _BudgetUp:
        exhausted = True
    return counter.result(exhausted)


@dataclass(frozen=True)
class DifferentialEvolutionConfig:
    budget: int = 500
    population: int = 15
    weight: float = 0.7       # F, differential weight
    crossover: float = 0.9    # CR
    record_trace: bool = False


def _reflect(x, lo, hi):
    """Fold a candidate back into the box by reflection at the bounds."""
    span = hi - lo
    out = x.copy()
    for _ in range(8):
        below, above = out < lo, out > hi
        if not (below.any() or above.any()):
            return out
        out = np.where(below, 2.0 * lo - out, out)
        out = np.where(above, 2.0 * hi - out, out)
        # Degenerate dimensions (span 0) cannot reflect; pin them.
        out = np.where(span == 0.0, lo, out)
    return np.clip(out, lo, hi)


def differential_evolution(
    objective, box, rng: np.random.Generator,
    cfg: DifferentialEvolutionConfig = DifferentialEvolutionConfig(),
) -> OptimizeResult:
    """DE/rand/1/bin with reflection at the bounds."""
    lo, hi = _box_arrays(box)
    d = lo.shape[0]
    pop_size = max(4, cfg.population)
    counter = _Counter(objective, cfg.budget, cfg.record_trace)
    exhausted = False
    try:
        pop = lo + rng.random((pop_size, d)) * (hi - lo)
        values = np.array([counter(x) for x in pop])
        while True:
            for i in range(pop_size):
                choices = [j for j in range(pop_size) if j != i]
                a, b, c = rng.choice(choices, size=3, replace=False)
                mutant = _reflect(pop[a] + cfg.weight * (pop[b] - pop[c]), lo, hi)
                cross = rng.random(d) < cfg.crossover
                cross[rng.integers(d)] = True
                trial = np.where(cross, mutant, pop[i])
                f_t = counter(trial)
                if f_t > values[i]:
                    pop[i], values[i] = trial, f_t
    except _BudgetUp:
        exhausted = True
    return counter.result(exhausted)


@dataclass(frozen=True)
class ParticleSwarmConfig:
    budget: int = 500
    swarm: int = 15
    inertia: float = 0.7
    cognitive: float = 1.5
    social: float = 1.5
    v_max_frac: float = 0.5   # velocity clamp as a fraction of the box span
    record_trace: bool = False


def particle_swarm(
    objective, box, rng: np.random.Generator,
    cfg: ParticleSwarmConfig = ParticleSwarmConfig(),
) -> OptimizeResult:
    """Global-best PSO with velocity clamping and box clipping."""
    lo, hi = _box_arrays(box)
    d = lo.shape[0]
    n = max(2, cfg.swarm)
    v_max = cfg.v_max_frac * (hi - lo)
    counter = _Counter(objective, cfg.budget, cfg.record_trace)
    exhausted = False
    try:
        pos = lo + rng.random((n, d)) * (hi - lo)
        vel = np.zeros((n, d))
        values = np.array([counter(x) for x in pos])
        p_best, p_val = pos.copy(), values.copy()
        g = int(np.argmax(p_val))
        while True:
            for i in range(n):
                r1, r2 = rng.random(d), rng.random(d)
                vel[i] = (
                    cfg.inertia * vel[i]
                    + cfg.cognitive * r1 * (p_best[i] - pos[i])
                    + cfg.social * r2 * (p_best[g] - pos[i])
                )
                vel[i] = np.clip(vel[i], -v_max, v_max)
                moved = pos[i] + vel[i]
                clipped = np.clip(moved, lo, hi)
                vel[i] = np.where(moved == clipped, vel[i], 0.0)
                pos[i] = clipped
                f = counter(pos[i])
                if f > p_val[i]:
                    p_best[i], p_val[i] = pos[i].copy(), f
                    if f > p_val[g]:
                        g = i
    except _BudgetUp:
        exhausted = True
    return counter.result(exhausted)


@dataclass(frozen=True)
class FssrsConfig:
    budget: int = 200
    step: float = 0.05
    x0: tuple | None = None   # default: box center
    record_trace: bool = False


def fssrs(
    objective, box, rng: np.random.Generator, cfg: FssrsConfig = FssrsConfig()
) -> OptimizeResult:
    """Fixed step-size random search: random direction, accept on improvement."""
    lo, hi = _box_arrays(box)
    d = lo.shape[0]
    counter = _Counter(objective, cfg.budget, cfg.record_trace)
    exhausted = False
    try:
        x = np.asarray(cfg.x0, dtype=float) if cfg.x0 is not None else (lo + hi) / 2.0
        x = np.clip(x, lo, hi)
        best = counter(x)
        while True:
            direction = rng.standard_normal(d)
            norm = np.linalg.norm(direction)
            if norm == 0.0:
                continue
            candidate = np.clip(x + cfg.step * direction / norm, lo, hi)
            f = counter(candidate)
            if f > best:
                x, best = candidate, f
    except _BudgetUp:
        exhausted = True
    return counter.result(exhausted)


def one_shot_random_trial(objective, box, rng: np.random.Generator) -> OptimizeResult:
    """Single uniform draw inside the box; exactly one evaluation."""
    lo, hi = _box_arrays(box)
    counter = _Counter(objective, budget=1, record_trace=False)
    counter(lo + rng.random(lo.shape[0]) * (hi - lo))
    return counter.result(budget_exhausted=False)


METHODS = {
    "nm": lambda obj, box, rng, **kw: nelder_mead(obj, box, kw.get("cfg") or NelderMeadConfig()),
    "de": lambda obj, box, rng, **kw: differential_evolution(
        obj, box, rng, kw.get("cfg") or DifferentialEvolutionConfig()),
    "pso": lambda obj, box, rng, **kw: particle_swarm(
        obj, box, rng, kw.get("cfg") or ParticleSwarmConfig()),
    "fssrs": lambda obj, box, rng, **kw: fssrs(obj, box, rng, kw.get("cfg") or FssrsConfig()),
    "osrt": lambda obj, box, rng, **kw: one_shot_random_trial(obj, box, rng),
}

_METHOD_CONFIGS = {
    "nm": NelderMeadConfig,
    "de": DifferentialEvolutionConfig,
    "pso": ParticleSwarmConfig,
    "fssrs": FssrsConfig,
}


def method_config(method: str, budget: int | None = None):
    """Default config for a METHODS entry, optionally with a budget override."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    if method == "osrt":
        return None  # single evaluation by definition; no config
    cfg = _METHOD_CONFIGS[method]()
    return dataclasses.replace(cfg, budget=budget) if budget else cfg
