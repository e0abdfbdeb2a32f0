"""Asyncio DAG engine: per-program stage scheduling with two-level concurrency,
content-digest caching, and declarative precondition skipping.

Stages connect through data-flow edges (outputs pass downstream; failures
propagate as skips) and order-only edges (sequencing without data transfer;
failures do not propagate). Preconditions are a tiny declarative language --
"always", "exists:<stage>", "metric:<name><op><value>" -- so DAG topologies
stay serializable in configuration and skipping stays auditable.
"""

from __future__ import annotations

import asyncio
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional

from .core import Program
from .store import cas_update
from .util import canonical_digest, text_digest

DONE = "done"
SKIPPED = "skipped"
ERRORED = "errored"

_METRIC_PRECONDITION = re.compile(
    r"^metric:\s*([A-Za-z_]\w*)\s*(==|!=|>=|<=|>|<)\s*(-?\d+(?:\.\d+)?)\s*$"
)


class DagValidationError(Exception):
    def __init__(self, errors: List[str]) -> None:
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class StageSpec:
    name: str
    kind: str
    data_inputs: tuple = ()
    order_after: tuple = ()
    precondition: str = "always"
    params: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StageSpec":
        return cls(
            name=data["name"],
            kind=data["kind"],
            data_inputs=tuple(data.get("data_inputs", ())),
            order_after=tuple(data.get("order_after", ())),
            precondition=data.get("precondition", "always"),
            params=dict(data.get("params", {})),
        )


@dataclass(frozen=True)
class StageDAG:
    stages: tuple
    external_inputs: tuple = ()

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StageDAG":
        return cls(
            stages=tuple(StageSpec.from_dict(s) for s in data.get("stages", ())),
            external_inputs=tuple(data.get("external_inputs", ())),
        )


@dataclass
class StageOutcome:
    status: str  # done | skipped | errored
    value: Any = None
    reason: str = ""
    message: str = ""
    trace: str = ""
    cache_key: str = ""

    @property
    def done(self) -> bool:
        return self.status == DONE

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status,
            "value": self.value,
            "reason": self.reason,
            "message": self.message,
            "trace": self.trace,
            "cache_key": self.cache_key,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StageOutcome":
        return cls(
            status=data.get("status", ""),
            value=data.get("value"),
            reason=data.get("reason", ""),
            message=data.get("message", ""),
            trace=data.get("trace", ""),
            cache_key=data.get("cache_key", ""),
        )


def validate_dag(dag: StageDAG) -> List[str]:
    """Structural checks; returns a list of errors (empty = valid)."""
    errors: List[str] = []
    names = [s.name for s in dag.stages]
    seen = set()
    for name in names:
        if name in seen:
            errors.append(f"duplicate stage name {name!r}")
        seen.add(name)
    known = set(names) | set(dag.external_inputs)
    for spec in dag.stages:
        for ref in spec.data_inputs:
            if ref not in known:
                errors.append(f"stage {spec.name!r}: dangling data input {ref!r}")
        for ref in spec.order_after:
            if ref not in set(names):
                errors.append(f"stage {spec.name!r}: dangling order_after {ref!r}")
        if parse_precondition(spec.precondition) is None:
            errors.append(f"stage {spec.name!r}: bad precondition {spec.precondition!r}")

    # Cycle detection over the union of data and order edges.
    stage_names = set(names)
    edges = {
        s.name: [d for d in (*s.data_inputs, *s.order_after) if d in stage_names]
        for s in dag.stages
    }
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in stage_names}

    def visit(node: str, path: List[str]) -> None:
        color[node] = GRAY
        path.append(node)
        for dep in edges.get(node, ()):  # noqa: B023
            if color.get(dep) == GRAY:
                cycle = path[path.index(dep):] + [dep]
                errors.append("cycle: " + " -> ".join(cycle))
            elif color.get(dep) == WHITE:
                visit(dep, path)
        path.pop()
        color[node] = BLACK

    for name in stage_names:
        if color[name] == WHITE:
            visit(name, [])
    return errors


def parse_precondition(expr: str) -> Optional[Callable[["PreconditionContext"], bool]]:
    """Compile a precondition expression; None when the expression is malformed."""
    expr = (expr or "always").strip()
    if expr == "always":
        return lambda ctx: True
    if expr.startswith("exists:"):
        stage = expr[len("exists:"):].strip()
        if not stage:
            return None
        return lambda ctx: ctx.output_exists(stage)
    match = _METRIC_PRECONDITION.match(expr)
    if match:
        name, op, raw_value = match.groups()
        value = float(raw_value)
        ops = {
            "==": lambda a: a == value,
            "!=": lambda a: a != value,
            ">=": lambda a: a >= value,
            "<=": lambda a: a <= value,
            ">": lambda a: a > value,
            "<": lambda a: a < value,
        }
        check = ops[op]

        def metric_pred(ctx: "PreconditionContext") -> bool:
            metric = ctx.lookup_metric(name)
            return metric is not None and check(metric)

        return metric_pred
    return None


class PreconditionContext:
    """What a precondition may observe: finished outcomes and program metrics.

    Metric lookups scan Done stage outputs in stage order (the most downstream
    metrics-bearing output wins) and fall back to the program record.
    """

    def __init__(self, dag: StageDAG, program: Program, outcomes: Dict[str, StageOutcome]):
        self._dag = dag
        self._program = program
        self._outcomes = outcomes

    def output_exists(self, stage: str) -> bool:
        outcome = self._outcomes.get(stage)
        return outcome is not None and outcome.done

    def lookup_metric(self, name: str) -> Optional[float]:
        found = None
        for spec in self._dag.stages:
            outcome = self._outcomes.get(spec.name)
            if outcome is None or not outcome.done:
                continue
            value = outcome.value
            if isinstance(value, dict):
                if isinstance(value.get("metrics"), dict) and name in value["metrics"]:
                    found = value["metrics"][name]
                elif name in value and isinstance(value[name], (int, float)):
                    found = value[name]
        if found is not None:
            return float(found)
        if self._program.metrics and name in self._program.metrics:
            return float(self._program.metrics[name])
        return None


class StageContext:
    """Execution context handed to a stage implementation."""

    def __init__(
        self,
        program: Program,
        inputs: Dict[str, Any],
        outcomes: Mapping[str, StageOutcome],
        services,
        params: Mapping[str, Any],
    ) -> None:
        self.program = program
        self.inputs = inputs
        self.outcomes = outcomes
        self.services = services
        self.params = params

    def done_value(self, stage: str, default=None):
        outcome = self.outcomes.get(stage)
        return outcome.value if outcome is not None and outcome.done else default


class Stage:
    """Base stage implementation; subclasses define `kind` and `run`."""

    kind: str = ""

    def __init__(self, spec: StageSpec) -> None:
        self.spec = spec
        self.params = dict(spec.params)

    async def run(self, ctx: StageContext) -> Any:
        raise NotImplementedError

    def config_fingerprint(self, services) -> str:
        """Extra cache-key material for stages whose behavior depends on shared
        configuration (e.g. LLM routing)."""
        return ""

    def cacheable(self) -> bool:
        """Stages reading mutable store state (e.g. descendants appearing after
        completion) must opt out of result caching."""
        return True


class DagEngine:
    """Runs a validated DAG over programs with bounded two-level concurrency."""

    def __init__(
        self,
        dag: StageDAG,
        registry: Mapping[str, type],
        services,
        max_concurrent_programs: int = 4,
        max_concurrent_stages: int = 4,
        use_cache: bool = True,
        persist: bool = True,
    ) -> None:
        errors = validate_dag(dag)
        if errors:
            raise DagValidationError(errors)
        self.dag = dag
        self.services = services
        self.use_cache = use_cache
        self.persist = persist
        self.max_concurrent_programs = max(1, int(max_concurrent_programs))
        self.max_concurrent_stages = max(1, int(max_concurrent_stages))
        self._stages: Dict[str, Stage] = {}
        for spec in dag.stages:
            if spec.kind not in registry:
                raise DagValidationError([f"unknown stage kind {spec.kind!r}"])
            self._stages[spec.name] = registry[spec.kind](spec)
        self.executions = 0  # number of actual stage executions (cache misses)

    async def run_program(
        self,
        program: Program,
        externals: Optional[Dict[str, Any]] = None,
        use_cache: Optional[bool] = None,
    ) -> Dict[str, StageOutcome]:
        externals = externals or {}
        missing = [name for name in self.dag.external_inputs if name not in externals]
        if missing:
            raise DagValidationError([f"missing external inputs: {missing}"])
        caching = self.use_cache if use_cache is None else use_cache

        outcomes: Dict[str, StageOutcome] = {}
        finished: Dict[str, asyncio.Event] = {s.name: asyncio.Event() for s in self.dag.stages}
        stage_sem = asyncio.Semaphore(self.max_concurrent_stages)
        source_digest = text_digest(program.source)

        async def run_one(spec: StageSpec) -> None:
            for dep in (*spec.data_inputs, *spec.order_after):
                if dep in finished:
                    await finished[dep].wait()
            outcomes[spec.name] = await self._execute_stage(
                spec, program, externals, outcomes, stage_sem, caching, source_digest
            )
            finished[spec.name].set()

        await asyncio.gather(*(run_one(spec) for spec in self.dag.stages))
        if self.persist:
            self._persist_outcomes(program, outcomes)
        return outcomes

    async def run_many(
        self, programs: List[Program], externals: Optional[Dict[str, Any]] = None
    ) -> Dict[str, Dict[str, StageOutcome]]:
        program_sem = asyncio.Semaphore(self.max_concurrent_programs)
        results: Dict[str, Dict[str, StageOutcome]] = {}

        async def run_one(prog: Program) -> None:
            async with program_sem:
                results[prog.id] = await self.run_program(prog, externals)

        await asyncio.gather(*(run_one(p) for p in programs))
        return results

    def run_program_sync(self, program: Program, externals=None, use_cache=None):
        return asyncio.run(self.run_program(program, externals, use_cache))

    # -- internals -------------------------------------------------------

    async def _execute_stage(
        self,
        spec: StageSpec,
        program: Program,
        externals: Dict[str, Any],
        outcomes: Dict[str, StageOutcome],
        stage_sem: asyncio.Semaphore,
        caching: bool,
        source_digest: str,
    ) -> StageOutcome:
        # Data-edge skip propagation (order-only edges never propagate).
        stage_names = {s.name for s in self.dag.stages}
        for dep in spec.data_inputs:
            if dep in stage_names and not outcomes[dep].done:
                return StageOutcome(
                    status=SKIPPED,
                    reason=f"propagated: data input {dep!r} was {outcomes[dep].status}",
                )

        predicate = parse_precondition(spec.precondition)
        if not predicate(PreconditionContext(self.dag, program, outcomes)):
            return StageOutcome(
                status=SKIPPED, reason=f"precondition failed: {spec.precondition}"
            )

        inputs = {
            dep: (outcomes[dep].value if dep in stage_names else externals[dep])
            for dep in spec.data_inputs
        }
        stage = self._stages[spec.name]
        cache_key = canonical_digest(
            {
                "stage": spec.name,
                "kind": spec.kind,
                "params": dict(spec.params),
                "inputs": inputs,
                "source": source_digest,
                "config": stage.config_fingerprint(self.services),
            }
        )
        if caching and stage.cacheable():
            cached = program.stage_outputs.get(spec.name)
            if (
                isinstance(cached, dict)
                and cached.get("status") == DONE
                and cached.get("cache_key") == cache_key
            ):
                return StageOutcome.from_dict(cached)

        async with stage_sem:
            self.executions += 1
            try:
                ctx = StageContext(program, inputs, outcomes, self.services, spec.params)
                value = await stage.run(ctx)
                return StageOutcome(status=DONE, value=value, cache_key=cache_key)
            except Exception as exc:
                import traceback as tb

                return StageOutcome(
                    status=ERRORED,
                    message=f"{type(exc).__name__}: {exc}",
                    trace=tb.format_exc(),
                    cache_key=cache_key,
                )

    def _persist_outcomes(self, program: Program, outcomes: Dict[str, StageOutcome]) -> None:
        serialized = {name: outcome.to_dict() for name, outcome in outcomes.items()}

        def apply(stored: Program) -> Program:
            stored.stage_outputs.update(serialized)
            return stored

        updated = cas_update(self.services.store, program.id, apply)
        program.stage_outputs = updated.stage_outputs
        program.version = updated.version
