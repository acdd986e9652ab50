"""Dense dueling Q-network in plain numpy: forward, SGD TD-update, (de)serialization.

Architecture: a shared ReLU trunk, then two linear heads — a scalar state
value stream and a per-action advantage stream — aggregated as

    q(s, a) = v(s) + adv(s, a) - mean_a' adv(s, a'),

so ``mean(q) == v`` exactly.  Everything is float64; updates are plain
stochastic gradient descent on the mean-squared TD error with targets from
a lagged parameter copy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LayerLayout", "Parameters", "QOutput", "TransitionBatch",
    "ShapeMismatch", "NonFiniteLoss",
    "init_parameters", "forward", "forward_batch", "td_update",
    "save_parameters", "load_parameters",
]

CHECKPOINT_VERSION = 1


class ShapeMismatch(ValueError):
    """Observation or batch shapes do not match the parameter layout."""


class NonFiniteLoss(FloatingPointError):
    """The TD loss left the float range; training must stop."""


@dataclass(frozen=True)
class LayerLayout:
    """Widths of the network: input, trunk hidden layers, action count."""

    n_inputs: int
    hidden: tuple
    n_actions: int

    def __post_init__(self):
        if self.n_inputs < 1 or self.n_actions < 1 or len(self.hidden) < 1:
            raise ValueError(f"degenerate layout {self}")
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden widths must be >= 1, got {self.hidden}")


@dataclass
class Parameters:
    """Trunk weights/biases plus the value and advantage head parameters."""

    layout: LayerLayout
    trunk_w: list            # trunk_w[i]: (fan_in, fan_out)
    trunk_b: list
    value_w: np.ndarray      # (last_hidden, 1)
    value_b: np.ndarray      # (1,)
    adv_w: np.ndarray        # (last_hidden, n_actions)
    adv_b: np.ndarray        # (n_actions,)

    def copy(self) -> "Parameters":
        return Parameters(
            layout=self.layout,
            trunk_w=[w.copy() for w in self.trunk_w],
            trunk_b=[b.copy() for b in self.trunk_b],
            value_w=self.value_w.copy(),
            value_b=self.value_b.copy(),
            adv_w=self.adv_w.copy(),
            adv_b=self.adv_b.copy(),
        )

    def arrays(self) -> list:
        return (
            self.trunk_w + self.trunk_b
            + [self.value_w, self.value_b, self.adv_w, self.adv_b]
        )


@dataclass(frozen=True)
class QOutput:
    q: np.ndarray
    v_stream: float
    a_stream: np.ndarray


@dataclass(frozen=True)
class TransitionBatch:
    """Column arrays of a sampled minibatch."""

    states: np.ndarray       # (n, obs)
    actions: np.ndarray      # (n,), int
    rewards: np.ndarray      # (n,)
    next_states: np.ndarray  # (n, obs)
    terminal: np.ndarray     # (n,), bool

    def __post_init__(self):
        n = self.states.shape[0]
        if not (self.actions.shape == self.rewards.shape == self.terminal.shape == (n,)
                and self.next_states.shape == self.states.shape and n >= 1):
            raise ShapeMismatch("inconsistent batch column shapes")


def init_parameters(layout: LayerLayout, rng: np.random.Generator) -> Parameters:
    """He-style scaled uniform init (+/- sqrt(6/fan_in)); biases start at zero."""
    widths = [layout.n_inputs, *layout.hidden]
    trunk_w, trunk_b = [], []
    for fan_in, fan_out in zip(widths, widths[1:]):
        bound = np.sqrt(6.0 / fan_in)
        trunk_w.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        trunk_b.append(np.zeros(fan_out))
    last = widths[-1]
    bound = np.sqrt(6.0 / last)
    return Parameters(
        layout=layout,
        trunk_w=trunk_w,
        trunk_b=trunk_b,
        value_w=rng.uniform(-bound, bound, size=(last, 1)),
        value_b=np.zeros(1),
        adv_w=rng.uniform(-bound, bound, size=(last, layout.n_actions)),
        adv_b=np.zeros(layout.n_actions),
    )


def _trunk_forward(params: Parameters, x: np.ndarray):
    """Batched trunk pass; returns pre-activations per layer and activations."""
    activations = [x]
    pre = []
    for w, b in zip(params.trunk_w, params.trunk_b):
        z = activations[-1] @ w + b
        pre.append(z)
        activations.append(np.maximum(z, 0.0))
    return pre, activations


def forward_batch(params: Parameters, states: np.ndarray) -> np.ndarray:
    """Q values for a batch of observations, shape (n, n_actions)."""
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[1] != params.layout.n_inputs:
        raise ShapeMismatch(
            f"expected (n, {params.layout.n_inputs}) states, got {states.shape}"
        )
    _, activations = _trunk_forward(params, states)
    h = activations[-1]
    v = h @ params.value_w + params.value_b            # (n, 1)
    a = h @ params.adv_w + params.adv_b                # (n, n_actions)
    return v + a - a.mean(axis=1, keepdims=True)


def forward(params: Parameters, observation: np.ndarray) -> QOutput:
    """Single-observation pass, exposing the two streams."""
    observation = np.asarray(observation, dtype=float)
    if observation.shape != (params.layout.n_inputs,):
        raise ShapeMismatch(
            f"expected observation of length {params.layout.n_inputs}, got {observation.shape}"
        )
    _, activations = _trunk_forward(params, observation[None, :])
    h = activations[-1]
    v = float((h @ params.value_w + params.value_b)[0, 0])
    a = (h @ params.adv_w + params.adv_b)[0]
    return QOutput(q=v + a - a.mean(), v_stream=v, a_stream=a)


def td_update(
    params: Parameters,
    target_params: Parameters,
    batch: TransitionBatch,
    gamma: float,
    learning_rate: float,
) -> float:
    """One SGD step on the mean-squared TD error; mutates ``params`` in place.

    Targets: y = r for terminal transitions, else
    y = r + gamma * max_a' q(s', a'; target_params).
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    n = batch.states.shape[0]
    next_q = forward_batch(target_params, batch.next_states)
    y = batch.rewards + np.where(batch.terminal, 0.0, gamma * next_q.max(axis=1))

    pre, activations = _trunk_forward(params, batch.states)
    h = activations[-1]
    v = h @ params.value_w + params.value_b
    a = h @ params.adv_w + params.adv_b
    q = v + a - a.mean(axis=1, keepdims=True)
    q_taken = q[np.arange(n), batch.actions]

    err = q_taken - y
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"TD loss is {loss}")

    # d loss / d q_taken = 2 err / n; route through the dueling aggregation.
    n_actions = params.layout.n_actions
    gq = np.zeros((n, n_actions))
    gq[np.arange(n), batch.actions] = 2.0 * err / n
    gv = gq.sum(axis=1, keepdims=True)                       # (n, 1)
    ga = gq - gq.sum(axis=1, keepdims=True) / n_actions      # (n, n_actions)

    grad_value_w = h.T @ gv
    grad_value_b = gv.sum(axis=0)
    grad_adv_w = h.T @ ga
    grad_adv_b = ga.sum(axis=0)
    gh = gv @ params.value_w.T + ga @ params.adv_w.T

    grads_w, grads_b = [], []
    for layer in range(len(params.trunk_w) - 1, -1, -1):
        gz = gh * (pre[layer] > 0.0)
        grads_w.append(activations[layer].T @ gz)
        grads_b.append(gz.sum(axis=0))
        if layer > 0:
            gh = gz @ params.trunk_w[layer].T
    grads_w.reverse()
    grads_b.reverse()

    lr = learning_rate
    for w, gw in zip(params.trunk_w, grads_w):
        w -= lr * gw
    for b, gb in zip(params.trunk_b, grads_b):
        b -= lr * gb
    params.value_w -= lr * grad_value_w
    params.value_b -= lr * grad_value_b
    params.adv_w -= lr * grad_adv_w
    params.adv_b -= lr * grad_adv_b
    return loss


def save_parameters(path, params: Parameters) -> None:
    """Versioned npz checkpoint; loading reproduces forward() bit-exactly."""
    payload = {
        "version": np.array(CHECKPOINT_VERSION),
        "n_inputs": np.array(params.layout.n_inputs),
        "hidden": np.array(params.layout.hidden, dtype=np.int64),
        "n_actions": np.array(params.layout.n_actions),
        "value_w": params.value_w,
        "value_b": params.value_b,
        "adv_w": params.adv_w,
        "adv_b": params.adv_b,
    }
    for i, (w, b) in enumerate(zip(params.trunk_w, params.trunk_b)):
        payload[f"trunk_w_{i}"] = w
        payload[f"trunk_b_{i}"] = b
    np.savez(path, **payload)


def load_parameters(path) -> Parameters:
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        layout = LayerLayout(
            n_inputs=int(data["n_inputs"]),
            hidden=tuple(int(h) for h in data["hidden"]),
            n_actions=int(data["n_actions"]),
        )
        trunk_w = [data[f"trunk_w_{i}"].astype(float) for i in range(len(layout.hidden))]
        trunk_b = [data[f"trunk_b_{i}"].astype(float) for i in range(len(layout.hidden))]
        return Parameters(
            layout=layout,
            trunk_w=trunk_w,
            trunk_b=trunk_b,
            value_w=data["value_w"].astype(float),
            value_b=data["value_b"].astype(float),
            adv_w=data["adv_w"].astype(float),
            adv_b=data["adv_b"].astype(float),
        )
