"""Dueling-DQN training loop: replay memory, epsilon-greedy exploration,
episode orchestration against the environment, logging and checkpointing.

Each training episode draws a fresh demand scenario (Alg. 3) plus random
grid initial speeds from the ``train-scenarios`` RNG substream of the run's
master seed, and computes its reference solution on the fly (Nelder-Mead by
default, one-shot random trial under ``guide="osrt"``).  Exploration decays
linearly by environment steps:  epsilon(step) = max(0, eps0 * (1 - step/total)).
Every ``validation_every`` steps the greedy policy is scored over the fixed
validation scenario set and the mean value ratio / episode length are logged.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .environment import Env, EnvConfig, ObjectiveConfig, make_objective
from .neural import (
    LayerLayout, NonFiniteLoss, Parameters, TransitionBatch,
    forward, forward_batch, init_parameters, save_parameters, td_update,
)
from .optimizers import NelderMeadConfig, nelder_mead, one_shot_random_trial
from .rng import make_rng, seed_triple
from .scenario import (
    DemandRandomizerConfig, ReferenceSolution, Scenario,
    randomize_demands, randomize_initial_speeds,
)

__all__ = [
    "Transition", "ReplayMemory", "TrainConfig", "TrainLog",
    "select_action", "train", "run_greedy_episode", "evaluate_policy",
]

_GROW_CHUNK = 4096


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool

    def __post_init__(self):
        if self.state.shape != self.next_state.shape:
            raise ValueError("state/next_state length mismatch")


class ReplayMemory:
    """FIFO ring buffer with uniform without-replacement minibatch sampling.

    Backing arrays grow lazily in chunks so an oversized capacity costs
    nothing until it is actually filled.
    """

    def __init__(self, capacity: int, observation_size: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.observation_size = observation_size
        self._allocated = 0
        self._size = 0
        self._cursor = 0
        self._states = np.empty((0, observation_size))
        self._actions = np.empty(0, dtype=np.int64)
        self._rewards = np.empty(0)
        self._next_states = np.empty((0, observation_size))
        self._terminal = np.empty(0, dtype=bool)

    def __len__(self) -> int:
        return self._size

    def _ensure(self, rows: int) -> None:
        if rows <= self._allocated:
            return
        new = min(self.capacity, max(rows, self._allocated + _GROW_CHUNK))
        grow = new - self._allocated
        self._states = np.vstack([self._states, np.empty((grow, self.observation_size))])
        self._next_states = np.vstack(
            [self._next_states, np.empty((grow, self.observation_size))]
        )
        self._actions = np.concatenate([self._actions, np.empty(grow, dtype=np.int64)])
        self._rewards = np.concatenate([self._rewards, np.empty(grow)])
        self._terminal = np.concatenate([self._terminal, np.empty(grow, dtype=bool)])
        self._allocated = new

    def push(self, transition: Transition) -> None:
        i = self._cursor
        self._ensure(i + 1)
        self._states[i] = transition.state
        self._actions[i] = transition.action
        self._rewards[i] = transition.reward
        self._next_states[i] = transition.next_state
        self._terminal[i] = transition.terminal
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        if batch_size > self._size:
            raise ValueError(f"cannot sample {batch_size} from {self._size} transitions")
        idx = rng.choice(self._size, size=batch_size, replace=False)
        return TransitionBatch(
            states=self._states[idx].copy(),
            actions=self._actions[idx].copy(),
            rewards=self._rewards[idx].copy(),
            next_states=self._next_states[idx].copy(),
            terminal=self._terminal[idx].copy(),
        )


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 50_000
    init_steps: int = 1_000
    batch_size: int = 8
    gamma: float = 0.99
    learning_rate: float = 1e-4
    epsilon_start: float = 0.95
    epsilon_final: float = 0.0
    replay_capacity: int = 25_000
    hidden: tuple = (48, 32, 12)
    target_sync_every: int = 1_000       # in gradient updates
    validation_every: int | None = None  # in env steps; default total_steps // 25
    checkpoint_every: int | None = None  # in env steps; default = validation_every
    guide: str = "nm"                    # reference method: "nm" or "osrt"

    def __post_init__(self):
        if self.init_steps > self.total_steps:
            raise ValueError("init_steps must be <= total_steps")
        if self.batch_size > self.replay_capacity:
            raise ValueError("batch_size must be <= replay_capacity")
        if self.guide not in ("nm", "osrt"):
            raise ValueError(f"guide must be 'nm' or 'osrt', got {self.guide!r}")

    @property
    def effective_validation_every(self) -> int:
        return self.validation_every or max(1, self.total_steps // 25)


def epsilon_at(cfg: TrainConfig, step: int) -> float:
    frac = 1.0 - step / cfg.total_steps
    return max(cfg.epsilon_final, cfg.epsilon_start * frac)


def select_action(
    params: Parameters, observation: np.ndarray, epsilon: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy action; greedy ties break toward the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    n_actions = params.layout.n_actions
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(n_actions))
    return int(np.argmax(forward(params, observation).q))


@dataclass
class TrainLog:
    """Per-step training log; validation columns are filled on probe steps."""

    columns = ("step", "episode", "reward", "episode_reward", "loss",
               "epsilon", "val_value_ratio", "val_episode_len")
    rows: list = field(default_factory=list)

    def add(self, step, episode, reward, episode_reward, loss, epsilon,
            val_ratio=None, val_len=None):
        self.rows.append((
            step, episode, repr(float(reward)), repr(float(episode_reward)),
            "" if loss is None else repr(float(loss)), repr(float(epsilon)),
            "" if val_ratio is None else repr(float(val_ratio)),
            "" if val_len is None else repr(float(val_len)),
        ))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        writer.writerows(self.rows)
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def validation_series(self) -> tuple[list, list, list]:
        """(steps, mean value ratios, mean episode lengths) at probe points."""
        steps, ratios, lengths = [], [], []
        for row in self.rows:
            if row[6] != "":
                steps.append(int(row[0]))
                ratios.append(float(row[6]))
                lengths.append(float(row[7]))
        return steps, ratios, lengths


def _make_reference(guide, objective_fn, box, nm_cfg, rng) -> ReferenceSolution:
    if guide == "nm":
        result = nelder_mead(objective_fn, box, nm_cfg)
    else:
        result = one_shot_random_trial(objective_fn, box, rng)
    return ReferenceSolution(
        speeds=tuple(float(s) for s in result.best_speeds),
        value=result.best_value,
        evaluations=result.evaluations,
    )


def run_greedy_episode(params: Parameters, env: Env, scenario: Scenario):
    """Epsilon=0 rollout; returns (value_ratio, episode_length, trace rows)."""
    observation = env.reset(scenario)
    trace = []
    terminal = False
    while not terminal:
        action = int(np.argmax(forward(params, observation).q))
        reward, observation, terminal = env.step(action)
        trace.append((action, reward, env.current_value))
    metrics = env.evaluate_final()
    return metrics.value_ratio, metrics.episode_length, trace


def evaluate_policy(params: Parameters, env: Env, scenarios) -> tuple[float, float]:
    """Mean (value_ratio, episode_length) of the greedy policy over scenarios."""
    ratios, lengths = [], []
    for scenario in scenarios:
        ratio, length, _ = run_greedy_episode(params, env, scenario)
        ratios.append(ratio)
        lengths.append(length)
    return float(np.mean(ratios)), float(np.mean(lengths))


def train(
    env: Env,
    validation_scenarios,
    cfg: TrainConfig,
    master_seed: int,
    *,
    demand_cfg: DemandRandomizerConfig | None = None,
    nm_config: NelderMeadConfig | None = None,
    params: Parameters | None = None,
    out_dir=None,
) -> tuple[Parameters, TrainLog]:
    """Run the full training loop; returns final parameters and the log.

    ``env`` must be a training-mode environment.  Checkpoints and the train
    log are written under ``out_dir`` when given; on a non-finite loss the
    last good parameters are checkpointed before the error propagates.
    """
    if env.mode != "train":
        raise ValueError("training requires a train-mode environment")
    demand_cfg = demand_cfg or DemandRandomizerConfig()
    nm_config = nm_config or NelderMeadConfig()
    layout = LayerLayout(
        n_inputs=env.observation_size, hidden=tuple(cfg.hidden), n_actions=env.n_actions
    )
    if params is None:
        params = init_parameters(layout, make_rng(master_seed, "net-init"))
    target = params.copy()
    replay = ReplayMemory(cfg.replay_capacity, env.observation_size)
    action_rng = make_rng(master_seed, "actions")
    replay_rng = make_rng(master_seed, "replay")
    log = TrainLog()
    val_env = Env(env.net, env.objective, env.config, mode="train",
                  solver_config=env.model.config)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)

    base_demands = env.model.base_demands
    box = [(env.config.s_lo, env.config.s_hi)] * env.n_groups
    validation_every = cfg.effective_validation_every
    checkpoint_every = cfg.checkpoint_every or validation_every

    step = 0
    episode = 0
    updates = 0
    try:
        while step < cfg.total_steps:
            episode_rng = make_rng(master_seed, "train-scenarios", episode)
            demands = randomize_demands(base_demands, demand_cfg, episode_rng)
            speeds = randomize_initial_speeds(
                env.n_groups, (env.config.s_lo, env.config.s_hi),
                episode_rng, env.config.increment,
            )
            reference = _make_reference(
                cfg.guide, make_objective(env.model, demands, env.objective),
                box, nm_config, episode_rng,
            )
            scenario = Scenario(
                demands=tuple(float(d) for d in demands),
                initial_speeds=tuple(float(s) for s in speeds),
                seed=seed_triple(master_seed, "train-scenarios", episode),
                reference=reference,
            )
            observation = env.reset(scenario)
            episode_reward = 0.0
            terminal = False

            while not terminal and step < cfg.total_steps:
                epsilon = epsilon_at(cfg, step)
                action = select_action(params, observation, epsilon, action_rng)
                reward, next_observation, terminal = env.step(action)
                replay.push(Transition(observation, action, reward,
                                       next_observation, terminal))
                observation = next_observation
                episode_reward += reward
                step += 1

                loss = None
                if step > cfg.init_steps and len(replay) >= cfg.batch_size:
                    batch = replay.sample(cfg.batch_size, replay_rng)
                    loss = td_update(params, target, batch, cfg.gamma, cfg.learning_rate)
                    updates += 1
                    if updates % cfg.target_sync_every == 0:
                        target = params.copy()

                val_ratio = val_len = None
                if step % validation_every == 0 or step == cfg.total_steps:
                    val_ratio, val_len = evaluate_policy(params, val_env,
                                                         validation_scenarios)
                log.add(step, episode, reward, episode_reward, loss, epsilon,
                        val_ratio, val_len)
                if out_dir is not None and (step % checkpoint_every == 0
                                            or step == cfg.total_steps):
                    save_parameters(out_dir / "checkpoints" / f"step_{step:08d}.npz",
                                    params)
            episode += 1
    except NonFiniteLoss:
        if out_dir is not None:
            save_parameters(out_dir / "checkpoints" / "aborted.npz", params)
            log.write_csv(out_dir / "trainlog.csv")
        raise

    if out_dir is not None:
        save_parameters(out_dir / "checkpoints" / "final.npz", params)
        log.write_csv(out_dir / "trainlog.csv")
    return params, log
