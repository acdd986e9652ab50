"""Dueling network internals: init statistics, forward identities, gradient
correctness against central differences, and checkpoint round-trips."""

from __future__ import annotations

import numpy as np
import pytest

from oracles import gradcheck_max_rel_error, random_batch, random_layout, td_loss
from pumpsurge.neural import (
    LayerLayout, NonFiniteLoss, Parameters, ShapeMismatch, TransitionBatch,
    forward, forward_batch, init_parameters, load_parameters, save_parameters,
    td_update,
)


class TestInit:
    def test_he_uniform_bounds_and_variance(self):
        layout = LayerLayout(n_inputs=256, hidden=(256,), n_actions=4)
        params = init_parameters(layout, np.random.default_rng(7))
        w = params.trunk_w[0]
        bound = np.sqrt(6.0 / 256.0)
        assert np.all(np.abs(w) <= bound)
        # Var of U(-b, b) is b^2/3 = 2/fan_in; 256^2 samples pin it tightly.
        assert w.var() == pytest.approx(2.0 / 256.0, rel=0.05)
        assert np.all(params.trunk_b[0] == 0.0)
        assert np.all(params.value_b == 0.0)
        assert np.all(params.adv_b == 0.0)

    def test_head_fans_use_last_hidden_width(self):
        layout = LayerLayout(n_inputs=5, hidden=(16, 8), n_actions=3)
        params = init_parameters(layout, np.random.default_rng(7))
        assert params.value_w.shape == (8, 1)
        assert params.adv_w.shape == (8, 3)
        bound = np.sqrt(6.0 / 8.0)
        assert np.all(np.abs(params.value_w) <= bound)
        assert np.all(np.abs(params.adv_w) <= bound)

    def test_deterministic_given_seed(self):
        layout = LayerLayout(n_inputs=6, hidden=(12,), n_actions=5)
        a = init_parameters(layout, np.random.default_rng(123))
        b = init_parameters(layout, np.random.default_rng(123))
        for x, y in zip(a.arrays(), b.arrays()):
            np.testing.assert_array_equal(x, y)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(n_inputs=0, hidden=(4,), n_actions=2),
            dict(n_inputs=3, hidden=(), n_actions=2),
            dict(n_inputs=3, hidden=(4, 0), n_actions=2),
            dict(n_inputs=3, hidden=(4,), n_actions=0),
        ],
    )
    def test_layout_validation(self, kwargs):
        with pytest.raises(ValueError):
            LayerLayout(**kwargs)


class TestForward:
    def test_dueling_identity_mean_q_equals_v(self, rng):
        layout = random_layout(rng)
        params = init_parameters(layout, rng)
        for _ in range(20):
            out = forward(params, rng.normal(size=layout.n_inputs))
            assert out.q.shape == (layout.n_actions,)
            assert abs(out.q.mean() - out.v_stream) <= 1e-12
            np.testing.assert_allclose(
                out.q, out.v_stream + out.a_stream - out.a_stream.mean(),
                atol=1e-12,
            )

    def test_batch_matches_single(self, rng):
        layout = random_layout(rng)
        params = init_parameters(layout, rng)
        states = rng.normal(size=(11, layout.n_inputs))
        batched = forward_batch(params, states)
        assert batched.shape == (11, layout.n_actions)
        for i in range(11):
            np.testing.assert_allclose(
                batched[i], forward(params, states[i]).q, atol=1e-12
            )

    def test_relu_trunk_zero_state_gives_bias_only_output(self):
        layout = LayerLayout(n_inputs=4, hidden=(6,), n_actions=3)
        params = init_parameters(layout, np.random.default_rng(5))
        out = forward(params, np.zeros(4))
        # biases are zero at init, so every stream collapses to zero
        np.testing.assert_allclose(out.q, 0.0, atol=1e-15)
        assert out.v_stream == 0.0

    def test_shape_validation(self, rng):
        layout = LayerLayout(n_inputs=4, hidden=(6,), n_actions=3)
        params = init_parameters(layout, rng)
        with pytest.raises(ShapeMismatch):
            forward(params, np.zeros(5))
        with pytest.raises(ShapeMismatch):
            forward_batch(params, np.zeros((2, 5)))
        with pytest.raises(ShapeMismatch):
            forward_batch(params, np.zeros(4))


class TestTransitionBatch:
    def test_rejects_inconsistent_columns(self, rng):
        layout = LayerLayout(n_inputs=4, hidden=(6,), n_actions=3)
        good = random_batch(layout, 8, rng)
        with pytest.raises(ShapeMismatch):
            TransitionBatch(good.states, good.actions[:-1], good.rewards,
                            good.next_states, good.terminal)
        with pytest.raises(ShapeMismatch):
            TransitionBatch(good.states, good.actions, good.rewards,
                            good.next_states[:, :-1], good.terminal)


class TestTdUpdate:
    def test_reported_loss_matches_recomputation(self, rng):
        for _ in range(5):
            layout = random_layout(rng)
            params = init_parameters(layout, rng)
            target = init_parameters(layout, rng)
            batch = random_batch(layout, 8, rng)
            expected = td_loss(params, target, batch, 0.99)
            loss = td_update(params, target, batch, 0.99, 1e-4)
            assert loss == pytest.approx(expected, rel=1e-12)

    def test_terminal_rows_ignore_bootstrap(self, rng):
        layout = LayerLayout(n_inputs=3, hidden=(8,), n_actions=2)
        params = init_parameters(layout, rng)
        target = init_parameters(layout, rng)
        base = random_batch(layout, 4, rng)
        terminal = TransitionBatch(base.states, base.actions, base.rewards,
                                   base.next_states, np.ones(4, dtype=bool))
        # with all rows terminal the target params must be irrelevant
        other_target = init_parameters(layout, np.random.default_rng(999))
        p1, p2 = params.copy(), params.copy()
        loss1 = td_update(p1, target, terminal, 0.99, 1e-3)
        loss2 = td_update(p2, other_target, terminal, 0.99, 1e-3)
        assert loss1 == loss2
        for a, b in zip(p1.arrays(), p2.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_target_params_never_mutated(self, rng):
        layout = random_layout(rng)
        params = init_parameters(layout, rng)
        target = init_parameters(layout, rng)
        frozen = target.copy()
        td_update(params, target, random_batch(layout, 8, rng), 0.99, 1e-2)
        for a, b in zip(target.arrays(), frozen.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_repeated_updates_fit_fixed_targets(self, rng):
        layout = LayerLayout(n_inputs=4, hidden=(16, 8), n_actions=3)
        params = init_parameters(layout, rng)
        target = init_parameters(layout, rng)
        batch = random_batch(layout, 8, rng)
        first = td_loss(params, target, batch, 0.99)
        for _ in range(500):
            last = td_update(params, target, batch, 0.99, 1e-2)
        assert last < 0.05 * first

    def test_gamma_validation(self, rng):
        layout = LayerLayout(n_inputs=3, hidden=(4,), n_actions=2)
        params = init_parameters(layout, rng)
        batch = random_batch(layout, 2, rng)
        for gamma in (0.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                td_update(params, params.copy(), batch, gamma, 1e-4)

    def test_nonfinite_loss_raises_before_mutating(self, rng):
        layout = LayerLayout(n_inputs=3, hidden=(4,), n_actions=2)
        params = init_parameters(layout, rng)
        target = params.copy()
        before = params.copy()
        base = random_batch(layout, 2, rng)
        bad = TransitionBatch(base.states, base.actions,
                              np.array([np.inf, 0.0]), base.next_states,
                              base.terminal)
        with pytest.raises(NonFiniteLoss):
            td_update(params, target, bad, 0.99, 1e-4)
        for a, b in zip(params.arrays(), before.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_gradient_matches_central_differences(self):
        # the full >= 10-configuration sweep runs in the acceptance suite
        assert gradcheck_max_rel_error(n_configs=4, probes_per_config=25) <= 1e-4

    def test_update_is_plain_sgd_scaling(self, rng):
        """Doubling the learning rate exactly doubles the parameter step."""
        layout = LayerLayout(n_inputs=4, hidden=(8,), n_actions=3)
        params = init_parameters(layout, rng)
        target = init_parameters(layout, rng)
        batch = random_batch(layout, 8, rng)
        p1, p2 = params.copy(), params.copy()
        td_update(p1, target, batch, 0.99, 1e-4)
        td_update(p2, target, batch, 0.99, 2e-4)
        for base, a, b in zip(params.arrays(), p1.arrays(), p2.arrays()):
            # reconstructing steps by subtraction leaves ~eps*|theta| noise
            np.testing.assert_allclose(b - base, 2.0 * (a - base),
                                       rtol=1e-9, atol=1e-15)


class TestSerialization:
    def test_round_trip_is_bit_exact(self, rng, tmp_path):
        layout = LayerLayout(n_inputs=23, hidden=(48, 32, 12), n_actions=3)
        params = init_parameters(layout, rng)
        td_update(params, params.copy(), random_batch(layout, 8, rng),
                  0.99, 1e-4)
        path = tmp_path / "ckpt.npz"
        save_parameters(path, params)
        loaded = load_parameters(path)
        assert loaded.layout == layout
        for a, b in zip(params.arrays(), loaded.arrays()):
            np.testing.assert_array_equal(a, b)
        states = rng.normal(size=(5, 23))
        np.testing.assert_array_equal(
            forward_batch(params, states), forward_batch(loaded, states)
        )

    def test_version_gate(self, rng, tmp_path):
        layout = LayerLayout(n_inputs=3, hidden=(4,), n_actions=2)
        params = init_parameters(layout, rng)
        path = tmp_path / "ckpt.npz"
        save_parameters(path, params)
        with np.load(path) as data:
            payload = {k: data[k] for k in data.files}
        payload["version"] = np.array(999)
        np.savez(path, **payload)
        with pytest.raises(ValueError, match="version"):
            load_parameters(path)
