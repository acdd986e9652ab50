"""Run configuration: bundled per-network defaults, presets, and overrides.

A run is configured by a plain nested dict ("config tree") with sections
``network``, ``env``, ``train`` and ``scenarios``.  The tree is assembled by
layering, in order: the bundled defaults for the chosen network, one named
preset block, an optional user TOML file, and ``--set section.key=value``
overrides.  The assembled tree is written into every run directory as
``config.toml`` so a run can be reproduced from its artifacts alone.
"""

from __future__ import annotations

import importlib.resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .agent import TrainConfig
from .environment import EnvConfig, ObjectiveConfig
from .network import BUNDLED, Network

PRESETS = ("desk", "paper")

_DEFAULT_TOML = {
    "anytown-mod": "anytown_mod.toml",
    "dtown-mod": "dtown_mod.toml",
}


class ConfigError(ValueError):
    """Malformed configuration tree or override."""


class UnknownPreset(ConfigError):
    pass


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def network_defaults(name: str) -> dict:
    """Bundled default config tree for a bundled network name."""
    if name not in _DEFAULT_TOML:
        raise ConfigError(
            f"no bundled defaults for {name!r}; choose from {sorted(_DEFAULT_TOML)}"
        )
    resource = importlib.resources.files("pumpsurge.data") / _DEFAULT_TOML[name]
    return tomllib.loads(resource.read_text())


def deep_merge(base: dict, override: dict) -> dict:
    """Recursively merge ``override`` into a copy of ``base``."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def apply_preset(tree: dict, preset: str) -> dict:
    """Fold the named preset block into the tree and drop the preset table."""
    if preset not in PRESETS:
        raise UnknownPreset(f"unknown preset {preset!r}; choose from {PRESETS}")
    blocks = tree.get("preset", {})
    tree = {k: v for k, v in tree.items() if k != "preset"}
    return deep_merge(tree, blocks.get(preset, {}))


def parse_set_override(text: str) -> tuple[list[str], object]:
    """Parse ``section.key=value``; the value uses TOML literal syntax."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    path = [part.strip() for part in key.strip().split(".")]
    if not all(path):
        raise ConfigError(f"bad override key {key!r}")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()  # bare strings allowed without quotes
    return path, value


def apply_set_overrides(tree: dict, overrides) -> dict:
    tree = deep_merge(tree, {})
    for text in overrides:
        path, value = parse_set_override(text)
        node = tree
        for part in path[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[path[-1]] = value
    return tree


def resolve_config(
    network: str,
    preset: str = "paper",
    config_path=None,
    overrides=(),
) -> dict:
    """Assemble the effective config tree for a bundled network."""
    tree = network_defaults(network)
    tree = apply_preset(tree, preset)
    if config_path is not None:
        tree = deep_merge(tree, load_toml(config_path))
    tree = apply_set_overrides(tree, overrides)
    tree.setdefault("network", {})["preset"] = preset
    return tree


def env_config_from(tree: dict) -> EnvConfig:
    section = dict(tree.get("env", {}))
    try:
        return EnvConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"bad [env] section: {exc}") from None


def train_config_from(tree: dict) -> TrainConfig:
    section = dict(tree.get("train", {}))
    if "hidden" in section:
        section["hidden"] = tuple(section["hidden"])
    try:
        return TrainConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"bad [train] section: {exc}") from None


def objective_from(tree: dict, net: Network) -> ObjectiveConfig:
    section = tree.get("network", {})
    for key in ("h_min", "h_max"):
        if key not in section:
            raise ConfigError(f"[network] section must define {key}")
    return ObjectiveConfig.for_network(
        net, h_min=float(section["h_min"]), h_max=float(section["h_max"])
    )


def _format_toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize {type(value).__name__} to TOML")


def dump_toml(tree: dict) -> str:
    """Serialize a config tree (tables of scalars/arrays) to TOML text."""
    lines: list[str] = []

    def emit(table: dict, prefix: str) -> None:
        scalars = {k: v for k, v in table.items() if not isinstance(v, dict)}
        subtables = {k: v for k, v in table.items() if isinstance(v, dict)}
        if prefix and (scalars or not subtables):
            lines.append(f"[{prefix}]")
        for key, value in scalars.items():
            lines.append(f"{key} = {_format_toml_value(value)}")
        if scalars:
            lines.append("")
        for key, value in subtables.items():
            emit(value, f"{prefix}.{key}" if prefix else key)

    emit(tree, "")
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines) + "\n"


def write_config(path, tree: dict) -> None:
    Path(path).write_text(dump_toml(tree))
