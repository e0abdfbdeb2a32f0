import pytest

from evoforge.config import (
    ConfigError,
    compose_config,
    deep_merge,
    load_dag_topology,
    parse_override,
)


class TestComposeConfig:
    def test_base_profile_loads(self):
        config = compose_config("base", [])
        assert config.get("execution.single_threaded") is True
        assert config.get("budget.max_generations") == 10

    def test_override_problem(self):
        config = compose_config("base", ["problem.name=heilbronn"])
        assert config.get("problem.name") == "heilbronn"

    def test_unknown_profile(self):
        with pytest.raises(ConfigError):
            compose_config("warp-speed", [])

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            compose_config("base", ["problem.nmae=heilbronn"])
        with pytest.raises(ConfigError):
            compose_config("base", ["quantum.flux=1"])

    def test_type_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            compose_config("base", ["budget.max_generations=lots"])

    def test_last_override_wins(self):
        config = compose_config("base", ["execution.seed=3", "execution.seed=7"])
        assert config.seed == 7

    def test_idempotent_composition(self):
        once = compose_config("base", ["execution.seed=5"]).tree
        twice = compose_config("base", ["execution.seed=5", "execution.seed=5"]).tree
        assert once == twice

    def test_multi_island_profile(self):
        config = compose_config("multi_island", [])
        assert config.get("algorithm.kind") == "multi_island"

    def test_yaml_values_in_overrides(self):
        config = compose_config("base", ["report.figures=false"])
        assert config.get("report.figures") is False
        config = compose_config(
            "base", ['execution.interpreter_cmd=["shim", "default"]']
        )
        assert config.get("execution.interpreter_cmd") == ["shim", "default"]

    def test_namespace_derivation(self):
        config = compose_config("base", ["problem.name=heilbronn", "execution.seed=4"])
        assert config.namespace == "heilbronn-seed4"
        config = compose_config("base", ["store.namespace=myrun"])
        assert config.namespace == "myrun"

    def test_malformed_override(self):
        with pytest.raises(ConfigError):
            compose_config("base", ["not-an-override"])


class TestHelpers:
    def test_deep_merge_nested(self):
        base = {"a": {"x": 1, "y": 2}, "b": 3}
        overlay = {"a": {"y": 9}}
        assert deep_merge(base, overlay) == {"a": {"x": 1, "y": 9}, "b": 3}

    def test_parse_override_nested_path(self):
        assert parse_override("a.b.c=4") == {"a": {"b": {"c": 4}}}

    def test_load_dag_topologies(self):
        default = load_dag_topology("default")
        names = [s["name"] for s in default["stages"]]
        assert "mutation_context" in names
        minimal = load_dag_topology("minimal")
        assert len(minimal["stages"]) < len(default["stages"])
        with pytest.raises(ConfigError):
            load_dag_topology("imaginary")
