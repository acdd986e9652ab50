"""Markov-decision-process wrapper over the hydraulic solver.

Implements the weighted state value

    v = w_satisfaction * r_satisfaction + w_eff * r_eff + w_feed * r_feed

with r_satisfaction = 1 - n_wrong/n_nodes (heads outside [h_min, h_max]),
r_eff = (product of group efficiencies) / eta_limit and
r_feed = c_tot / (c_tot + sum|f_tank|), c_tot = sum(F_pump) + sum(F_tank),
plus the step/siesta/reward episode procedure.

Step semantics, in training mode:

* an active action moves one group one increment along the speed grid;
  out-of-bounds or hydraulically non-convergent moves are reverted and earn
  ``penalty``; accepted moves that strictly shrink the Euclidean distance
  delta to the reference speeds earn ``c_progress * delta`` (and update the
  best-so-far delta*), otherwise ``penalty``;
* a siesta leaves the speeds alone; if the current value is within
  ``siesta_tolerance`` of the reference value it earns
  ``n_siesta * c_siesta``, with the third consecutive siesta paying
  ``bonus`` instead; the third consecutive siesta terminates the episode
  whether or not it qualifies, as does reaching ``max_steps``;
* the consecutive-siesta counter resets on every non-siesta action.

In inference mode the mechanics are identical but the reported reward is
0.0 and the reference solution is never consulted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .hydraulics import (
    HydraulicModel, HydraulicState, InfeasibleSpeeds, NoConvergence, SolverConfig,
)
from .network import Network, shutoff_head_max

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, typing only
    from .scenario import Scenario

__all__ = [
    "ObjectiveConfig", "EnvConfig", "ValueBreakdown", "FinalMetrics", "Env",
    "NotConverged", "EpisodeFinished", "EpisodeNotFinished", "MissingReference",
    "state_value", "state_value_components", "make_objective", "eta_limit_of",
]


class NotConverged(Exception):
    """state_value was handed a HydraulicState that never converged."""


class EpisodeFinished(Exception):
    """step() called on a terminal episode."""


class EpisodeNotFinished(Exception):
    """evaluate_final() called before the episode terminated."""


class MissingReference(Exception):
    """Training-mode reset needs a scenario with a ReferenceSolution."""


def eta_limit_of(net: Network) -> float:
    """Product of the group peak efficiencies (denominator of r_eff)."""
    limit = 1.0
    for group in net.pump_groups:
        limit *= group.peak_efficiency
    return limit


@dataclass(frozen=True)
class ObjectiveConfig:
    """Weights and limits of the state value; weights must sum to one."""

    h_min: float
    h_max: float
    eta_limit: float
    w_satisfaction: float = 8.0 / 16.0
    w_eff: float = 5.0 / 16.0
    w_feed: float = 3.0 / 16.0

    def __post_init__(self):
        if not self.h_min < self.h_max:
            raise ValueError(f"h_min must be < h_max, got {self.h_min} >= {self.h_max}")
        if not 0.0 < self.eta_limit <= 1.0:
            raise ValueError(f"eta_limit must be in (0, 1], got {self.eta_limit}")
        weights = (self.w_satisfaction, self.w_eff, self.w_feed)
        if min(weights) < 0.0 or abs(sum(weights) - 1.0) > 1e-12:
            raise ValueError(f"weights must be >= 0 and sum to 1, got {weights}")

    @classmethod
    def for_network(cls, net: Network, h_min: float, h_max: float, **weights) -> "ObjectiveConfig":
        return cls(h_min=h_min, h_max=h_max, eta_limit=eta_limit_of(net), **weights)


@dataclass(frozen=True)
class ValueBreakdown:
    v: float
    r_satisfaction: float
    r_eff: float
    r_feed: float


def state_value_components(hstate: HydraulicState, obj: ObjectiveConfig) -> ValueBreakdown:
    """Alg.-1 state value from a converged snapshot, with its three ratios."""
    if not hstate.converged:
        raise NotConverged("state value requires a converged hydraulic state")
    heads = np.asarray(hstate.heads)
    n_wrong = int(np.count_nonzero((heads < obj.h_min) | (heads > obj.h_max)))
    r_sat = 1.0 - n_wrong / heads.shape[0]

    eta_tot = float(np.prod(hstate.pump_ops[:, 2]))
    r_eff = eta_tot / obj.eta_limit

    c_tot = float(np.sum(hstate.pump_ops[:, 0]) + np.sum(hstate.tank_flows))
    tank_flux = float(np.sum(np.abs(hstate.tank_flows)))
    denom = c_tot + tank_flux
    r_feed = c_tot / denom if denom != 0.0 else 1.0

    v = obj.w_satisfaction * r_sat + obj.w_eff * r_eff + obj.w_feed * r_feed
    return ValueBreakdown(v=v, r_satisfaction=r_sat, r_eff=r_eff, r_feed=r_feed)


def state_value(hstate: HydraulicState, obj: ObjectiveConfig) -> float:
    return state_value_components(hstate, obj).v


@dataclass(frozen=True)
class EnvConfig:
    """Speed-grid geometry, episode limits and reward constants (Alg. 2)."""

    s_lo: float = 0.7
    s_hi: float = 1.1
    increment: float = 0.05
    max_steps: int = 40
    siesta_tolerance: float = 0.02
    siesta_limit: int = 3
    c_progress: float = 0.5
    c_siesta: float = 1.0
    bonus: float = 10.0
    penalty: float = -1.0

    def __post_init__(self):
        if not self.s_lo < self.s_hi:
            raise ValueError(f"s_lo must be < s_hi, got {self.s_lo} >= {self.s_hi}")
        span = (self.s_hi - self.s_lo) / self.increment
        if abs(span - round(span)) > 1e-9:
            raise ValueError(
                f"(s_hi - s_lo)/increment must be integral, got {span}"
            )
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.siesta_limit < 1:
            raise ValueError("siesta_limit must be >= 1")

    @property
    def n_speed_points(self) -> int:
        return int(round((self.s_hi - self.s_lo) / self.increment)) + 1

    def speed_grid(self) -> np.ndarray:
        return self.s_lo + self.increment * np.arange(self.n_speed_points)


@dataclass(frozen=True)
class FinalMetrics:
    v_terminal: float
    v_ref: float
    value_ratio: float
    episode_length: int


def make_objective(net_or_model, demands, obj: ObjectiveConfig, solver_config=None):
    """Return speeds -> state value (cold-start solve; -inf when infeasible).

    Every call performs a fresh deterministic solve, so re-evaluating any
    speed vector reproduces the value bit-for-bit.
    """
    model = net_or_model if isinstance(net_or_model, HydraulicModel) else HydraulicModel(
        net_or_model, solver_config
    )
    demands = np.asarray(demands, dtype=float)

    def objective(speeds) -> float:
        try:
            hstate = model.solve(speeds, demands=demands)
        except (NoConvergence, InfeasibleSpeeds):
            return float("-inf")
        return state_value(hstate, obj)

    return objective


class Env:
    """One episode-at-a-time environment; hold one instance per thread."""

    def __init__(
        self,
        net: Network,
        objective: ObjectiveConfig,
        config: EnvConfig | None = None,
        mode: str = "train",
        solver_config: SolverConfig | None = None,
    ):
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        self.net = net
        self.objective = objective
        self.config = config or EnvConfig()
        self.mode = mode
        self.model = HydraulicModel(net, solver_config)
        self.grid = self.config.speed_grid()
        self.head_scale = shutoff_head_max(net, self.config.s_hi)
        self.n_groups = net.n_groups
        self.siesta_action = 2 * self.n_groups
        self._scenario = None
        self._terminal = True

    @property
    def n_actions(self) -> int:
        return 2 * self.n_groups + 1

    @property
    def observation_size(self) -> int:
        return self.net.n_nodes + self.n_groups

    # -- episode control -------------------------------------------------

    def reset(self, scenario: "Scenario") -> np.ndarray:
        reference = scenario.reference
        if self.mode == "train" and reference is None:
            raise MissingReference("training-mode reset requires scenario.reference")
        demands = np.asarray(scenario.demands, dtype=float)
        idx = np.rint((np.asarray(scenario.initial_speeds, float) - self.config.s_lo)
                      / self.config.increment).astype(int)
        if np.any(idx < 0) or np.any(idx >= self.config.n_speed_points):
            raise ValueError(f"initial speeds {scenario.initial_speeds} leave the grid")
        if np.max(np.abs(self.grid[idx] - scenario.initial_speeds)) > 1e-6:
            raise ValueError(f"initial speeds {scenario.initial_speeds} are not grid points")

        self._demands = demands
        self._idx = idx
        self._hstate = self.model.solve(self.grid[idx], demands=demands)
        self._v = state_value(self._hstate, self.objective)
        self._n_steps = 0
        self._n_siesta = 0
        self._terminal = False
        self._scenario = scenario
        self._episode_solves = 1
        self._trace: list[tuple] = []
        if self.mode == "train":
            self._ps_ref = np.asarray(reference.speeds, dtype=float)
            self._v_ref = float(reference.value)
            self._delta_star = float(np.linalg.norm(self.grid[idx] - self._ps_ref))
        else:
            self._ps_ref = None
            self._v_ref = None
            self._delta_star = None
        return self.observe()

    def observe(self) -> np.ndarray:
        return np.concatenate([self._hstate.heads / self.head_scale, self.grid[self._idx]])

    def step(self, action: int) -> tuple[float, np.ndarray, bool]:
        if self._terminal:
            raise EpisodeFinished("episode is terminal; call reset() first")
        action = int(action)
        if not 0 <= action <= self.siesta_action:
            raise ValueError(f"action must be in [0, {self.siesta_action}], got {action}")

        cfg = self.config
        self._n_steps += 1
        terminal = self._n_steps >= cfg.max_steps
        reward = cfg.penalty
        delta = float("nan")

        if action != self.siesta_action:
            self._n_siesta = 0
            group, direction = divmod(action, 2)
            new_idx = self._idx.copy()
            new_idx[group] += 1 if direction == 0 else -1
            if 0 <= new_idx[group] < cfg.n_speed_points:
                speeds = self.grid[new_idx]
                self._episode_solves += 1  # attempts count as hydraulic work
                try:
                    hstate = self.model.solve(speeds, demands=self._demands, warm=self._hstate)
                except (NoConvergence, InfeasibleSpeeds):
                    pass  # revert: keep previous speeds/state, reward stays penalty
                else:
                    self._idx = new_idx
                    self._hstate = hstate
                    self._v = state_value(hstate, self.objective)
                    if self.mode == "train":
                        delta = float(np.linalg.norm(speeds - self._ps_ref))
                        if delta < self._delta_star:
                            reward = cfg.c_progress * delta
                            self._delta_star = delta
        else:
            self._n_siesta += 1
            qualifies = (
                self.mode == "train"
                and 1.0 - self._v / self._v_ref < cfg.siesta_tolerance
            )
            if self._n_siesta < cfg.siesta_limit:
                if qualifies:
                    reward = self._n_siesta * cfg.c_siesta
            else:
                if qualifies:
                    reward = cfg.bonus
                terminal = True

        if self.mode == "infer":
            reward = 0.0
        self._terminal = terminal
        self._trace.append((
            self._n_steps, action, reward, self._v, delta,
            self._delta_star if self._delta_star is not None else float("nan"),
            terminal, *self.grid[self._idx],
        ))
        return reward, self.observe(), terminal

    # -- reporting ---------------------------------------------------------

    @property
    def terminal(self) -> bool:
        return self._terminal

    @property
    def current_value(self) -> float:
        return self._v

    @property
    def current_speeds(self) -> np.ndarray:
        return self.grid[self._idx].copy()

    @property
    def episode_solve_count(self) -> int:
        return self._episode_solves

    def evaluate_final(self) -> FinalMetrics:
        if not self._terminal or self._scenario is None:
            raise EpisodeNotFinished("episode still running; cannot evaluate")
        reference = self._scenario.reference
        if reference is None:
            raise MissingReference("evaluate_final needs a scenario with a reference")
        v_ref = float(reference.value)
        return FinalMetrics(
            v_terminal=self._v,
            v_ref=v_ref,
            value_ratio=self._v / v_ref,
            episode_length=self._n_steps,
        )

    def export_trace(self, path) -> None:
        """Episode trace CSV: one row per step taken since the last reset."""
        header = ["step", "action", "reward", "v", "delta", "delta_star", "terminal"]
        header += [f"speed_{g.id}" for g in self.net.pump_groups]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in self._trace:
                writer.writerow(
                    [repr(float(x)) if isinstance(x, float) else x for x in row]
                )
