"""Config tree assembly: bundled defaults, presets, overrides, TOML dump."""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import pytest

from pumpsurge.config import (
    ConfigError, UnknownPreset, apply_preset, apply_set_overrides, deep_merge,
    dump_toml, env_config_from, network_defaults, objective_from,
    parse_set_override, resolve_config, train_config_from, write_config,
)
from pumpsurge.environment import ObjectiveConfig


class TestDefaultsAndMerge:
    def test_bundled_defaults_exist(self):
        for name in ("anytown-mod", "dtown-mod"):
            tree = network_defaults(name)
            assert tree["network"]["name"] == name
            assert {"env", "train", "scenarios"} <= tree.keys()

    def test_unknown_network(self):
        with pytest.raises(ConfigError, match="no bundled defaults"):
            network_defaults("richmond")

    def test_deep_merge_nests_and_preserves_siblings(self):
        base = {"a": {"x": 1, "y": 2}, "b": 3}
        out = deep_merge(base, {"a": {"y": 20, "z": 30}})
        assert out == {"a": {"x": 1, "y": 20, "z": 30}, "b": 3}
        assert base == {"a": {"x": 1, "y": 2}, "b": 3}  # input untouched

    def test_deep_merge_scalar_replaces_table(self):
        assert deep_merge({"a": {"x": 1}}, {"a": 5}) == {"a": 5}


class TestPresets:
    def test_desk_preset_overrides_paper_scale(self):
        tree = network_defaults("anytown-mod")
        desk = apply_preset(tree, "desk")
        paper = apply_preset(tree, "paper")
        assert desk["train"]["total_steps"] < paper["train"]["total_steps"]
        assert paper["train"]["total_steps"] == 50_000
        assert "preset" not in desk and "preset" not in paper

    def test_paper_preset_keeps_base_values(self):
        tree = network_defaults("anytown-mod")
        paper = apply_preset(tree, "paper")
        base = {k: v for k, v in tree.items() if k != "preset"}
        for section, table in base.items():
            for key, value in table.items():
                assert paper[section][key] == value

    def test_unknown_preset(self):
        with pytest.raises(UnknownPreset):
            apply_preset(network_defaults("anytown-mod"), "cluster")


class TestSetOverrides:
    @pytest.mark.parametrize(
        "text, path, value",
        [
            ("train.total_steps=500", ["train", "total_steps"], 500),
            ("network.h_min=41.5", ["network", "h_min"], 41.5),
            ("train.guide=osrt", ["train", "guide"], "osrt"),
            ('train.guide="osrt"', ["train", "guide"], "osrt"),
            ("train.hidden=[8, 4]", ["train", "hidden"], [8, 4]),
            ("flag.value=true", ["flag", "value"], True),
        ],
    )
    def test_parse_forms(self, text, path, value):
        assert parse_set_override(text) == (path, value)

    @pytest.mark.parametrize("text", ["no_equals", "=5", "a..b=1", " .x=1"])
    def test_parse_rejects_malformed(self, text):
        with pytest.raises(ConfigError):
            parse_set_override(text)

    def test_apply_creates_missing_tables(self):
        out = apply_set_overrides({"train": {"gamma": 0.99}},
                                  ["report.title=sweep", "train.gamma=0.9"])
        assert out == {"train": {"gamma": 0.9}, "report": {"title": "sweep"}}


class TestResolveConfig:
    def test_layering_order(self, tmp_path):
        cfg = tmp_path / "user.toml"
        cfg.write_text("[train]\ntotal_steps = 123\ngamma = 0.5\n")
        tree = resolve_config(
            "anytown-mod", "desk", config_path=cfg,
            overrides=["train.gamma=0.7"],
        )
        assert tree["train"]["total_steps"] == 123   # file beats preset
        assert tree["train"]["gamma"] == 0.7         # override beats file
        assert tree["network"]["preset"] == "desk"

    def test_round_trips_into_dataclasses(self):
        tree = resolve_config("anytown-mod", "paper")
        env_cfg = env_config_from(tree)
        train_cfg = train_config_from(tree)
        assert env_cfg.s_lo == 0.7 and env_cfg.s_hi == 1.1
        assert train_cfg.total_steps == 50_000
        assert train_cfg.hidden == (48, 32, 12)
        assert isinstance(train_cfg.hidden, tuple)

    def test_bad_sections_raise_config_error(self):
        with pytest.raises(ConfigError, match=r"bad \[env\]"):
            env_config_from({"env": {"warp": 9}})
        with pytest.raises(ConfigError, match=r"bad \[train\]"):
            train_config_from({"train": {"optimizer": "adam"}})

    def test_objective_from(self, anytown):
        tree = resolve_config("anytown-mod", "paper")
        obj = objective_from(tree, anytown)
        section = tree["network"]
        assert obj == ObjectiveConfig.for_network(
            anytown, h_min=section["h_min"], h_max=section["h_max"])

    def test_objective_requires_band(self, anytown):
        with pytest.raises(ConfigError, match="h_min"):
            objective_from({"network": {"h_max": 60.0}}, anytown)


class TestDumpToml:
    def test_round_trip(self):
        tree = resolve_config("dtown-mod", "desk", overrides=["run.label=a b"])
        text = dump_toml(tree)
        assert tomllib.loads(text) == tree

    def test_escaping_and_types(self):
        tree = {"t": {"s": 'say "hi"\\x', "f": 0.1, "i": 3, "b": False,
                      "arr": [1, 2.5]}}
        assert tomllib.loads(dump_toml(tree)) == tree

    def test_rejects_unserializable(self):
        with pytest.raises(ConfigError, match="serialize"):
            dump_toml({"t": {"x": None}})

    def test_write_config(self, tmp_path):
        tree = resolve_config("anytown-mod", "paper")
        path = tmp_path / "config.toml"
        write_config(path, tree)
        assert tomllib.loads(path.read_text()) == tree
        write_config(path, tree)
        assert tomllib.loads(path.read_text()) == tree
