"""Layered run configuration: defaults -> profile -> dotted overrides.

Later layers win under deep-merge; keys absent from the defaults tree are
rejected so typos fail fast instead of silently configuring nothing.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

CONFIG_ROOT = Path(__file__).parent / "configs"


class ConfigError(Exception):
    pass


def _load_yaml(path: Path) -> Dict[str, Any]:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    data = yaml.safe_load(path.read_text())
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping")
    return data


def deep_merge(base: Dict[str, Any], overlay: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in overlay.items():
        if key in merged and isinstance(merged[key], dict) and isinstance(value, dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def check_known_keys(tree: Dict[str, Any], defaults: Dict[str, Any], prefix: str = "") -> None:
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(value, dict) and isinstance(defaults[key], dict):
            check_known_keys(value, defaults[key], prefix=f"{path}.")


def parse_override(item: str) -> Dict[str, Any]:
    """`a.b.c=value` -> nested dict; the value is parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value")
    dotted, raw_value = item.split("=", 1)
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        value = yaml.safe_load(raw_value)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {item!r}: bad value ({exc})") from exc
    tree: Dict[str, Any] = {keys[-1]: value}
    for key in reversed(keys[:-1]):
        tree = {key: tree}
    return tree


def _check_scalar_types(tree: Dict[str, Any], defaults: Dict[str, Any], prefix: str = "") -> None:
    for key, value in tree.items():
        path = f"{prefix}{key}"
        default = defaults.get(key)
        if isinstance(value, dict) and isinstance(default, dict):
            _check_scalar_types(value, default, prefix=f"{path}.")
            continue
        if default is None or value is None:
            continue
        if isinstance(default, bool) != isinstance(value, bool):
            raise ConfigError(f"config key {path!r}: expected bool, got {value!r}")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"config key {path!r}: expected number, got {value!r}")
        elif isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"config key {path!r}: expected string, got {value!r}")
        elif isinstance(default, list) and not isinstance(value, list):
            raise ConfigError(f"config key {path!r}: expected list, got {value!r}")


@dataclass
class RunConfig:
    """Validated view over the composed configuration tree."""

    tree: Dict[str, Any]

    def __getitem__(self, section: str) -> Dict[str, Any]:
        return self.tree[section]

    def get(self, dotted: str, default: Any = None) -> Any:
        node: Any = self.tree
        for key in dotted.split("."):
            if not isinstance(node, dict) or key not in node:
                return default
            node = node[key]
        return node

    @property
    def seed(self) -> int:
        return int(self.get("execution.seed", 0))

    @property
    def namespace(self) -> str:
        explicit = self.get("store.namespace")
        if explicit:
            return str(explicit)
        problem = str(self.get("problem.name", "run")).replace("/", "_")
        return f"{Path(problem).name}-seed{self.seed}"


def compose_config(
    profile: Optional[str] = "base", overrides: Optional[List[str]] = None
) -> RunConfig:
    defaults = _load_yaml(CONFIG_ROOT / "defaults.yaml")
    tree = copy.deepcopy(defaults)

    if profile:
        profile_path = Path(profile)
        if not profile_path.is_file():
            profile_path = CONFIG_ROOT / "profiles" / f"{profile}.yaml"
        if not profile_path.is_file():
            raise ConfigError(f"unknown profile {profile!r}")
        profile_tree = _load_yaml(profile_path)
        check_known_keys(profile_tree, defaults)
        tree = deep_merge(tree, profile_tree)

    for item in overrides or []:
        override_tree = parse_override(item)
        check_known_keys(override_tree, defaults)
        tree = deep_merge(tree, override_tree)

    _check_scalar_types(tree, defaults)
    return RunConfig(tree)


def load_dag_topology(name_or_path: str) -> Dict[str, Any]:
    path = Path(name_or_path)
    if not path.is_file():
        path = CONFIG_ROOT / "dag" / f"{name_or_path}.yaml"
    if not path.is_file():
        raise ConfigError(f"unknown DAG topology {name_or_path!r}")
    return _load_yaml(path)
