"""Scenario generation: the three-stage demand randomizer against an exact
replay oracle, grid-snapped initial speeds, seed-stream discipline, and
lossless JSONL persistence."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from pumpsurge.environment import EnvConfig, ObjectiveConfig, make_objective
from pumpsurge.rng import make_rng, seed_triple
from pumpsurge.scenario import (
    DegenerateBase, DemandRandomizerConfig, ReferenceSolution, Scenario,
    build_scenario_set, load_scenarios, randomize_demands,
    randomize_initial_speeds, save_scenarios,
)

BASE = np.array([3.0, 0.0, 5.0, 2.0])


def replay_oracle(base, cfg, rng):
    """Exact re-implementation: same draws, straight-line arithmetic."""
    c_tot = rng.uniform(cfg.uniform_lo, cfg.uniform_hi) * base.sum()
    demands = []
    for c in base:
        while True:
            m = rng.normal(cfg.normal_mean, cfg.normal_stddev)
            if cfg.normal_lo <= m <= cfg.normal_hi:
                break
        demands.append(m * c)
    demands = np.array(demands)
    return demands * (c_tot / demands.sum()), c_tot


class TestRandomizeDemands:
    def test_matches_replay_oracle_exactly(self):
        cfg = DemandRandomizerConfig()
        for seed in range(20):
            got = randomize_demands(BASE, cfg, np.random.default_rng(seed))
            want, c_tot = replay_oracle(BASE, cfg, np.random.default_rng(seed))
            np.testing.assert_array_equal(got, want)
            # post-rescale identity: the total equals the stage draw
            assert got.sum() == pytest.approx(c_tot, rel=1e-12)

    def test_total_ratio_always_within_uniform_bounds(self, rng):
        cfg = DemandRandomizerConfig()
        for _ in range(300):
            out = randomize_demands(BASE, cfg, rng)
            assert 0.3 - 1e-12 <= out.sum() / BASE.sum() <= 1.1 + 1e-12

    def test_pre_rescale_multipliers_respect_truncation(self, rng):
        # all per-node ratios share one rescale factor, so their spread is
        # bounded by the truncation interval
        cfg = DemandRandomizerConfig()
        positive = BASE > 0
        for _ in range(300):
            out = randomize_demands(BASE, cfg, rng)
            ratios = out[positive] / BASE[positive]
            assert ratios.max() / ratios.min() <= 1.3 / 0.7 + 1e-12

    def test_zero_demand_nodes_stay_zero(self, rng):
        out = randomize_demands(BASE, DemandRandomizerConfig(), rng)
        assert out[1] == 0.0
        assert np.all(out[BASE > 0] > 0.0)

    def test_deterministic_under_seed(self):
        cfg = DemandRandomizerConfig()
        a = randomize_demands(BASE, cfg, np.random.default_rng(42))
        b = randomize_demands(BASE, cfg, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_all_zero_base_raises(self, rng):
        with pytest.raises(DegenerateBase):
            randomize_demands(np.zeros(4), DemandRandomizerConfig(), rng)

    def test_mean_total_ratio_matches_uniform_mean(self):
        # E[sum C / sum C0] = E[U(0.3, 1.1)] = 0.7
        cfg = DemandRandomizerConfig()
        rng = np.random.default_rng(2024)
        base = np.array([2.0, 5.0])
        n = 100_000
        total = 0.0
        for _ in range(n):
            total += randomize_demands(base, cfg, rng).sum()
        assert total / (n * base.sum()) == pytest.approx(0.7, abs=0.01)

    def test_bad_config_bounds(self):
        with pytest.raises(ValueError):
            DemandRandomizerConfig(uniform_lo=1.2, uniform_hi=1.1)
        with pytest.raises(ValueError):
            DemandRandomizerConfig(normal_lo=1.3, normal_hi=0.7)


class TestRandomizeInitialSpeeds:
    def test_outputs_are_grid_points(self, rng):
        grid = np.round(0.7 + 0.05 * np.arange(9), 10)
        for _ in range(200):
            speeds = randomize_initial_speeds(3, (0.7, 1.1), rng, 0.05)
            assert speeds.shape == (3,)
            for s in speeds:
                assert np.min(np.abs(grid - s)) < 1e-12

    def test_degenerate_interval(self, rng):
        speeds = randomize_initial_speeds(2, (1.0, 1.0), rng, 0.05)
        np.testing.assert_array_equal(speeds, [1.0, 1.0])

    def test_reversed_limits_raise(self, rng):
        with pytest.raises(ValueError):
            randomize_initial_speeds(1, (1.1, 0.7), rng)

    def test_chi_squared_uniformity(self):
        rng = np.random.default_rng(777)
        draws = randomize_initial_speeds(100_000, (0.7, 1.1), rng, 0.05)
        idx = np.rint((draws - 0.7) / 0.05).astype(int)
        counts = np.bincount(idx, minlength=9)
        assert stats.chisquare(counts).pvalue > 0.01


class TestBuildScenarioSet:
    def test_basic_invariants(self, toy_pumped):
        scenarios = build_scenario_set(
            toy_pumped, 8, DemandRandomizerConfig(), 123
        )
        assert len(scenarios) == 8
        for sc in scenarios:
            assert sum(sc.demands) > 0.0
            assert all(0.7 <= s <= 1.1 for s in sc.initial_speeds)
            assert sc.reference is None
        assert len({sc.demands for sc in scenarios}) == 8  # all distinct

    def test_deterministic_and_prefix_stable(self, toy_pumped):
        cfg = DemandRandomizerConfig()
        a = build_scenario_set(toy_pumped, 6, cfg, 9)
        b = build_scenario_set(toy_pumped, 6, cfg, 9)
        assert a == b
        longer = build_scenario_set(toy_pumped, 9, cfg, 9)
        assert longer[:6] == a  # per-index substreams: prefixes never shift

    def test_streams_are_disjoint(self, toy_pumped):
        cfg = DemandRandomizerConfig()
        val = build_scenario_set(toy_pumped, 5, cfg, 9, stream="validation-scenarios")
        test = build_scenario_set(toy_pumped, 5, cfg, 9, stream="test-scenarios")
        assert {sc.demands for sc in val}.isdisjoint(sc.demands for sc in test)
        assert [sc.seed for sc in val] != [sc.seed for sc in test]

    def test_n_zero_rejected(self, toy_pumped):
        with pytest.raises(ValueError):
            build_scenario_set(toy_pumped, 0, DemandRandomizerConfig(), 1)

    def test_reference_requires_objective(self, toy_pumped):
        with pytest.raises(ValueError, match="ObjectiveConfig"):
            build_scenario_set(
                toy_pumped, 1, DemandRandomizerConfig(), 1, with_reference=True
            )

    def test_unknown_guide_rejected(self, toy_pumped):
        with pytest.raises(ValueError, match="guide"):
            build_scenario_set(
                toy_pumped, 1, DemandRandomizerConfig(), 1, guide="tpe"
            )

    def test_nm_references_beat_grid_sweep(self, anytown):
        obj = ObjectiveConfig.for_network(anytown, h_min=47.0, h_max=58.0)
        scenarios = build_scenario_set(
            anytown, 6, DemandRandomizerConfig(), 31,
            with_reference=True, objective=obj,
        )
        grid = EnvConfig().speed_grid()
        for sc in scenarios:
            ref = sc.reference
            assert 0.0 <= ref.value <= 1.0
            assert 0.7 <= ref.speeds[0] <= 1.1
            assert ref.evaluations > 1
            fn = make_objective(anytown, np.array(sc.demands), obj)
            grid_best = max(fn([s]) for s in grid)
            assert ref.value >= grid_best * 0.99

    def test_osrt_guide_uses_one_evaluation(self, toy_pumped):
        obj = ObjectiveConfig.for_network(toy_pumped, h_min=10.0, h_max=60.0)
        scenarios = build_scenario_set(
            toy_pumped, 3, DemandRandomizerConfig(), 8,
            with_reference=True, objective=obj, guide="osrt",
        )
        for sc in scenarios:
            assert sc.reference.evaluations == 1

    def test_reference_value_validation(self):
        with pytest.raises(ValueError, match="reference value"):
            ReferenceSolution(speeds=(1.0,), value=1.5, evaluations=1)


class TestPersistence:
    def test_round_trip_is_lossless(self, toy_pumped, tmp_path):
        obj = ObjectiveConfig.for_network(toy_pumped, h_min=10.0, h_max=60.0)
        scenarios = build_scenario_set(
            toy_pumped, 4, DemandRandomizerConfig(), 5,
            with_reference=True, objective=obj,
        )
        scenarios.append(Scenario((1.0, 2.0), (0.85,), (5, 0, 99), None))
        path = tmp_path / "scenarios.jsonl"
        save_scenarios(path, scenarios)
        assert load_scenarios(path) == scenarios  # exact float round-trip

    def test_blank_lines_ignored(self, tmp_path):
        path = tmp_path / "scenarios.jsonl"
        sc = Scenario((1.0,), (0.9,), (1, 2, 3), None)
        save_scenarios(path, [sc])
        path.write_text(path.read_text() + "\n\n")
        assert load_scenarios(path) == [sc]

    def test_save_is_byte_deterministic(self, toy_pumped, tmp_path):
        scenarios = build_scenario_set(
            toy_pumped, 3, DemandRandomizerConfig(), 5
        )
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_scenarios(p1, scenarios)
        save_scenarios(p2, scenarios)
        assert p1.read_bytes() == p2.read_bytes()


class TestSeedPlumbing:
    def test_seed_triple_matches_stream(self, toy_pumped):
        scenarios = build_scenario_set(
            toy_pumped, 2, DemandRandomizerConfig(), 77, stream="test-scenarios"
        )
        assert scenarios[0].seed == seed_triple(77, "test-scenarios", 0)
        assert scenarios[1].seed == seed_triple(77, "test-scenarios", 1)

    def test_make_rng_reproduces_scenario(self, toy_pumped):
        cfg = DemandRandomizerConfig()
        [sc] = build_scenario_set(toy_pumped, 1, cfg, 77)
        rng = make_rng(*sc.seed)
        base = np.array([j.base_demand for j in toy_pumped.junctions])
        np.testing.assert_array_equal(
            randomize_demands(base, cfg, rng), np.array(sc.demands)
        )
