"""Directory-based problem definitions plus built-in validators.

A problem directory contains `task_description.txt`, `metrics.yaml`,
`initial_programs/*.py`, optionally `context.json`, and either a
`builtin: <kind>` marker in metrics.yaml or an external `validate.py`
(executed inside the sandbox like candidate code).
"""

from __future__ import annotations

import functools
import json
import types
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import yaml

from ..core import MetricSchema, primary_schema
from ..sandbox import Executor, ResourceLimits, RUN_MODE
from .base import ValidationResult
from . import binpacking as bp
from . import geometry
from . import kissing

BUILTIN_ROOT = Path(__file__).parent / "builtin"

# Wrapper appended to external validate.py modules so they speak the sandbox
# entry contract; two-argument validators additionally receive problem context.
_EXTERNAL_VALIDATOR_WRAPPER = """

def entrypoint(ctx):
    import inspect
    positional = [
        p for p in inspect.signature(validate).parameters.values()
        if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)
    ]
    if len(positional) >= 2:
        return validate(ctx["output"], ctx["context"])
    return validate(ctx["output"])
"""


class ProblemLoadError(Exception):
    pass


@dataclass
class ProblemContext:
    """Everything the engine needs to evaluate and describe one problem."""

    name: str
    task_description: str
    schemas: List[MetricSchema]
    initial_programs: List[str] = field(default_factory=list)
    context_data: Any = None
    seed_namespace: Optional[str] = None
    validator_fn: Optional[Callable[[Any], ValidationResult]] = None
    validator_source: Optional[str] = None
    helper_module: Any = None

    @property
    def primary(self) -> MetricSchema:
        return primary_schema(self.schemas)

    def validate(
        self,
        raw_output: Any,
        executor: Optional[Executor] = None,
        limits: ResourceLimits = ResourceLimits(),
    ) -> ValidationResult:
        """Run the bound validator; external modules execute inside the sandbox."""
        if self.validator_fn is not None:
            return self.validator_fn(raw_output)
        if self.validator_source is None:
            raise ProblemLoadError(f"problem {self.name!r} has no validator binding")
        if executor is None:
            raise ProblemLoadError("external validator requires an executor")
        wrapped = self.validator_source + _EXTERNAL_VALIDATOR_WRAPPER
        result = executor.execute(
            wrapped,
            RUN_MODE,
            context={"output": raw_output, "context": self.context_data},
            limits=limits,
        )
        if not result.ok:
            raise RuntimeError(f"external validator failed: {result.trace_text()}")
        metrics = result.value
        if not isinstance(metrics, dict):
            raise RuntimeError("external validator must return a dict of metrics")
        reason = metrics.pop("reason", "")
        return ValidationResult(
            {k: v for k, v in metrics.items()}, reason=str(reason) if reason else ""
        )


def _heilbronn_helpers() -> types.ModuleType:
    mod = types.ModuleType("helper")
    mod.get_unit_triangle = geometry.unit_triangle
    mod.get_smallest_triangle_area = geometry.min_triangle_area
    mod.is_inside_triangle = geometry.points_inside_triangle
    return mod


def _build_heilbronn(params: Dict) -> Dict[str, Any]:
    n_points = int(params.get("n_points", 11))
    return {
        "validator_fn": functools.partial(geometry.heilbronn_validate, n_points=n_points),
        "helper_module": _heilbronn_helpers(),
    }


def _build_circle_packing(params: Dict) -> Dict[str, Any]:
    if "n_circles" not in params:
        raise ProblemLoadError("circle_packing requires validator_params.n_circles")
    n_circles = int(params["n_circles"])
    return {
        "validator_fn": functools.partial(geometry.circle_packing_validate, n_circles=n_circles)
    }


def _build_kissing(params: Dict) -> Dict[str, Any]:
    dim = params.get("dim")
    return {
        "validator_fn": functools.partial(
            kissing.kissing_validate, dim=int(dim) if dim is not None else None
        )
    }


def _build_binpacking(params: Dict) -> Dict[str, Any]:
    instances = bp.generate_instances(
        distribution=params.get("distribution", "uniform"),
        n_instances=int(params.get("n_instances", 100)),
        n_items=int(params.get("n_items", 200)),
        capacity=float(params.get("capacity", 1.0)),
        seed=int(params.get("seed", 0)),
    )
    return {
        "validator_fn": functools.partial(bp.binpacking_validate, instances=instances),
        "context_data": {"instances": instances},
    }


BUILTIN_KINDS: Dict[str, Callable[[Dict], Dict[str, Any]]] = {
    "heilbronn": _build_heilbronn,
    "circle_packing": _build_circle_packing,
    "kissing": _build_kissing,
    "binpacking": _build_binpacking,
}


def resolve_problem_dir(name_or_path: str) -> Path:
    """Built-in problem name, or a path to a user problem directory."""
    builtin = BUILTIN_ROOT / name_or_path
    if builtin.is_dir():
        return builtin
    path = Path(name_or_path)
    if path.is_dir():
        return path
    raise ProblemLoadError(
        f"problem {name_or_path!r} is neither a built-in name nor a directory"
    )


def load_problem(directory) -> ProblemContext:
    path = Path(directory)
    if not path.is_dir():
        raise ProblemLoadError(f"problem directory {path} does not exist")

    desc_file = path / "task_description.txt"
    if not desc_file.is_file():
        raise ProblemLoadError(f"missing {desc_file.name} in {path}")
    metrics_file = path / "metrics.yaml"
    if not metrics_file.is_file():
        raise ProblemLoadError(f"missing {metrics_file.name} in {path}")

    spec = yaml.safe_load(metrics_file.read_text())
    if not isinstance(spec, dict) or "metrics" not in spec:
        raise ProblemLoadError(f"{metrics_file} must define a `metrics` list")
    try:
        schemas = [MetricSchema.from_dict(m) for m in spec["metrics"]]
        primary_schema(schemas)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProblemLoadError(f"{metrics_file}: {exc}") from exc

    initial_dir = path / "initial_programs"
    initial_programs = []
    if initial_dir.is_dir():
        for source_file in sorted(initial_dir.glob("*.py")):
            initial_programs.append(source_file.read_text())
    seed_namespace = spec.get("seed_namespace")
    if not initial_programs and not seed_namespace:
        raise ProblemLoadError(
            f"{path}: needs at least one initial program or a seed_namespace"
        )

    context_data = None
    context_file = path / "context.json"
    if context_file.is_file():
        context_data = json.loads(context_file.read_text())

    problem = ProblemContext(
        name=path.name,
        task_description=desc_file.read_text(),
        schemas=schemas,
        initial_programs=initial_programs,
        context_data=context_data,
        seed_namespace=seed_namespace,
    )

    builtin = spec.get("builtin")
    params = spec.get("validator_params") or {}
    if builtin:
        if builtin not in BUILTIN_KINDS:
            raise ProblemLoadError(f"unknown builtin validator kind {builtin!r}")
        built = BUILTIN_KINDS[builtin](params)
        problem.validator_fn = built["validator_fn"]
        problem.helper_module = built.get("helper_module")
        if problem.context_data is None:
            problem.context_data = built.get("context_data")
    else:
        validate_file = path / "validate.py"
        if not validate_file.is_file():
            raise ProblemLoadError(
                f"{path}: needs either a `builtin:` marker in metrics.yaml or validate.py"
            )
        problem.validator_source = validate_file.read_text()
    return problem
