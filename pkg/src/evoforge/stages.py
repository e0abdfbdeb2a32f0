"""Concrete stage kinds for the evaluation pipeline.

The default topology validates candidate syntax, executes the candidate in a
sandbox, scores the raw output with the problem validator, merges and
backfills metrics, then builds the LLM-facing context: structured insights,
parent-to-child transition analyses in both lineage directions, and the final
assembled mutation context.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from .core import MetricSchema, Program, primary_schema, schema_by_name
from .dag import Stage, StageContext
from .llm import LLMUnavailableError
from .sandbox import PARSE_MODE, RUN_MODE

logger = logging.getLogger(__name__)

INSIGHT_CATEGORIES = ("algorithmic", "structural", "numerical", "other")
INSIGHT_EFFECTS = ("beneficial", "harmful", "neutral")
INSIGHT_SEVERITIES = ("low", "medium", "high")
_SEVERITY_RANK = {"high": 0, "medium": 1, "low": 2}

_INSIGHT_LINE = re.compile(
    r"^\s*[-*]?\s*(algorithmic|structural|numerical|other)\s*"
    r"\[(beneficial|harmful|neutral)\]\s*"
    r"\((low|medium|high)\)\s*:\s*(\S.*?)\s*$"
)


@dataclass(frozen=True)
class Insight:
    category: str
    effect: str
    severity: str
    text: str

    def __post_init__(self) -> None:
        if self.category not in INSIGHT_CATEGORIES:
            raise ValueError(f"bad insight category {self.category!r}")
        if self.effect not in INSIGHT_EFFECTS:
            raise ValueError(f"bad insight effect {self.effect!r}")
        if self.severity not in INSIGHT_SEVERITIES:
            raise ValueError(f"bad insight severity {self.severity!r}")
        if not self.text:
            raise ValueError("insight text must be non-empty")

    def render(self) -> str:
        return f"{self.category} [{self.effect}] ({self.severity}): {self.text}"

    def to_dict(self) -> Dict[str, str]:
        return {
            "category": self.category,
            "effect": self.effect,
            "severity": self.severity,
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, str]) -> "Insight":
        return cls(data["category"], data["effect"], data["severity"], data["text"])


def parse_insight_line(line: str) -> Optional[Insight]:
    match = _INSIGHT_LINE.match(line)
    if not match:
        return None
    category, effect, severity, text = match.groups()
    return Insight(category, effect, severity, text)


def parse_insights(text: str, max_insights: Optional[int] = None) -> List[Insight]:
    """Lenient parser: well-formed lines are kept, everything else is dropped."""
    insights = []
    for line in text.splitlines():
        insight = parse_insight_line(line)
        if insight is not None:
            insights.append(insight)
        if max_insights is not None and len(insights) >= max_insights:
            break
    return insights


@dataclass(frozen=True)
class LineageAnalysis:
    parent_id: str
    child_id: str
    primary_delta: float  # direction-normalized: positive = child improved
    explanation: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            "parent_id": self.parent_id,
            "child_id": self.child_id,
            "primary_delta": self.primary_delta,
            "explanation": self.explanation,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LineageAnalysis":
        return cls(
            data["parent_id"], data["child_id"], float(data["primary_delta"]),
            data.get("explanation", ""),
        )


def primary_delta(
    parent_metrics: Dict[str, float], child_metrics: Dict[str, float], schema: MetricSchema
) -> float:
    """Metric shift of a parent->child transition; positive = improvement."""
    parent_value = float(parent_metrics[schema.name])
    child_value = float(child_metrics[schema.name])
    return (
        child_value - parent_value if schema.higher_is_better else parent_value - child_value
    )


@dataclass
class MutationContext:
    """Everything the mutation prompt knows about one parent program."""

    program_id: str
    source: str
    metrics: Dict[str, float] = field(default_factory=dict)
    insights: List[Insight] = field(default_factory=list)
    lineage_from_ancestors: List[LineageAnalysis] = field(default_factory=list)
    lineage_to_descendants: List[LineageAnalysis] = field(default_factory=list)
    error_trace: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "program_id": self.program_id,
            "source": self.source,
            "metrics": self.metrics,
            "insights": [i.to_dict() for i in self.insights],
            "lineage_from_ancestors": [a.to_dict() for a in self.lineage_from_ancestors],
            "lineage_to_descendants": [a.to_dict() for a in self.lineage_to_descendants],
            "error_trace": self.error_trace,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MutationContext":
        return cls(
            program_id=data["program_id"],
            source=data["source"],
            metrics=dict(data.get("metrics", {})),
            insights=[Insight.from_dict(i) for i in data.get("insights", [])],
            lineage_from_ancestors=[
                LineageAnalysis.from_dict(a) for a in data.get("lineage_from_ancestors", [])
            ],
            lineage_to_descendants=[
                LineageAnalysis.from_dict(a) for a in data.get("lineage_to_descendants", [])
            ],
            error_trace=data.get("error_trace"),
        )


def truncate_text(text: str, budget: int) -> str:
    """Cut to a character budget, marking the cut."""
    if len(text) <= budget:
        return text
    marker = "\n...[truncated]"
    return text[: max(0, budget - len(marker))] + marker


# ---------------------------------------------------------------------------
# Pure operations behind the stage kinds (also usable directly)
# ---------------------------------------------------------------------------


def compute_complexity(source: str) -> Dict[str, float]:
    """loc = non-blank, non-comment lines; chars = raw length."""
    loc = 0
    for line in source.splitlines():
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            loc += 1
    return {"loc": loc, "chars": len(source)}


def merge_and_ensure_metrics(
    validator_metrics: Optional[Dict[str, float]],
    complexity_metrics: Optional[Dict[str, float]],
    schemas: List[MetricSchema],
) -> Dict[str, float]:
    """Union (validator wins on collision), backfilled so every schema is present.

    A missing metric gets its schema's worst bound; a missing primary metric
    also forces is_valid to 0. A missing/failed validator thus yields a fully
    populated, maximally pessimistic metrics map instead of an error.
    """
    merged: Dict[str, float] = {}
    for source_map in (complexity_metrics, validator_metrics):
        if not source_map:
            continue
        for name, value in source_map.items():
            if isinstance(value, bool):
                value = int(value)
            if not isinstance(value, (int, float)):
                raise ValueError(f"metric {name!r} has non-numeric value {value!r}")
            merged[name] = value

    primary = primary_schema(schemas)
    primary_missing = primary.name not in merged
    for schema in schemas:
        if schema.name not in merged:
            merged[schema.name] = schema.worst
    if "is_valid" not in merged or primary_missing:
        merged["is_valid"] = 0
    merged["is_valid"] = int(merged["is_valid"])
    return merged


def select_relatives(
    program: Program,
    direction: str,
    strategy: str,
    k: int,
    store,
    schemas: List[MetricSchema],
    depth: int = 5,
) -> List[str]:
    """Breadth-first genealogy walk (depth-capped) ranked by a selection strategy.

    Ties break toward the older program (created_at, then id) so selection is
    deterministic.
    """
    if direction not in ("ancestors", "descendants"):
        raise ValueError(f"bad direction {direction!r}")
    if k < 1:
        raise ValueError("k must be positive")

    found: List[Program] = []
    seen = {program.id}
    frontier = [program]
    for _ in range(depth):
        next_frontier: List[Program] = []
        for current in frontier:
            if direction == "ancestors":
                relatives = [store.get_program(pid) for pid in current.parent_ids]
            else:
                relatives = store.descendants(current.id)
            for relative in relatives:
                if relative is None or relative.id in seen:
                    continue
                seen.add(relative.id)
                found.append(relative)
                next_frontier.append(relative)
        if not next_frontier:
            break
        frontier = next_frontier

    primary = primary_schema(schemas)

    def fitness_key(prog: Program) -> float:
        if not prog.metrics or primary.name not in prog.metrics:
            return -1.0
        return primary.normalized(prog.metrics[primary.name])

    if strategy == "top_fitness":
        ranked = sorted(found, key=lambda p: (-fitness_key(p), p.created_at, p.id))
    elif strategy == "most_recent":
        ranked = sorted(found, key=lambda p: (-p.created_at, p.id))
    else:
        raise ValueError(f"bad selection strategy {strategy!r}")
    return [p.id for p in ranked[:k]]


def assemble_mutation_context(
    program: Program,
    metrics: Dict[str, float],
    insights: List[Insight],
    from_ancestors: List[LineageAnalysis],
    to_descendants: List[LineageAnalysis],
    error_trace: Optional[str] = None,
    max_insights: int = 5,
    max_analyses_per_direction: int = 3,
    code_char_budget: int = 8000,
) -> MutationContext:
    """Bounded context assembly: severity-ranked insight cap, per-direction
    analysis caps, and character budgets on code and explanations."""
    kept_insights = sorted(
        enumerate(insights), key=lambda pair: (_SEVERITY_RANK[pair[1].severity], pair[0])
    )
    kept_insights = [ins for _, ins in kept_insights[:max_insights]]

    def cap_analyses(analyses: List[LineageAnalysis]) -> List[LineageAnalysis]:
        capped = []
        for analysis in analyses[:max_analyses_per_direction]:
            capped.append(
                LineageAnalysis(
                    parent_id=analysis.parent_id,
                    child_id=analysis.child_id,
                    primary_delta=analysis.primary_delta,
                    explanation=truncate_text(analysis.explanation, code_char_budget),
                )
            )
        return capped

    return MutationContext(
        program_id=program.id,
        source=truncate_text(program.source, code_char_budget),
        metrics=dict(metrics),
        insights=kept_insights,
        lineage_from_ancestors=cap_analyses(from_ancestors),
        lineage_to_descendants=cap_analyses(to_descendants),
        error_trace=truncate_text(error_trace, code_char_budget) if error_trace else None,
    )


# ---------------------------------------------------------------------------
# Stage implementations
# ---------------------------------------------------------------------------


def _first_error_trace(ctx: StageContext) -> Optional[str]:
    """Earliest errored outcome in stage order; context for insight generation."""
    for spec in ctx.services.dag.stages:
        outcome = ctx.outcomes.get(spec.name)
        if outcome is not None and outcome.status == "errored":
            return outcome.trace or outcome.message
    return None


def _ensured_metrics(ctx: StageContext) -> Dict[str, float]:
    metrics = ctx.done_value(ctx.services.metrics_stage)
    if isinstance(metrics, dict):
        return metrics
    return dict(ctx.program.metrics or {})


class ValidateCodeStage(Stage):
    kind = "validate_code"

    async def run(self, ctx: StageContext) -> Any:
        result = await ctx.services.run_executor(ctx.program.source, PARSE_MODE, None)
        if not result.ok:
            raise RuntimeError(result.trace_text())
        return "ok"


class CallProgramStage(Stage):
    kind = "call_program"

    async def run(self, ctx: StageContext) -> Any:
        context_input = self.params.get("context_input", "problem_context")
        context = ctx.inputs.get(context_input)
        result = await ctx.services.run_executor(ctx.program.source, RUN_MODE, context)
        if not result.ok:
            raise RuntimeError(result.trace_text())
        return result.value


class CallValidatorStage(Stage):
    kind = "call_validator"

    async def run(self, ctx: StageContext) -> Any:
        raw_input = self.params.get("raw_input")
        if raw_input is None:
            raw_input = self.spec.data_inputs[0]
        raw = ctx.inputs[raw_input]
        result = ctx.services.problem.validate(
            raw, executor=ctx.services.executor, limits=ctx.services.limits
        )
        return {"metrics": result.metrics, "reason": result.reason}


class ComplexityStage(Stage):
    kind = "complexity"

    async def run(self, ctx: StageContext) -> Any:
        return compute_complexity(ctx.program.source)


class EnsureMetricsStage(Stage):
    kind = "ensure_metrics"

    async def run(self, ctx: StageContext) -> Any:
        validator_stage = self.params.get("validator_stage", "validate_output")
        complexity_stage = self.params.get("complexity_stage", "complexity")
        validator_value = ctx.done_value(validator_stage)
        validator_metrics = (
            validator_value.get("metrics") if isinstance(validator_value, dict) else None
        )
        complexity_metrics = ctx.done_value(complexity_stage)
        return merge_and_ensure_metrics(
            validator_metrics, complexity_metrics, ctx.services.problem.schemas
        )


class InsightsStage(Stage):
    kind = "insights"

    def config_fingerprint(self, services) -> str:
        return services.llm.fingerprint("insights") if services.llm else ""

    async def run(self, ctx: StageContext) -> Any:
        services = ctx.services
        if services.llm is None:
            return []
        metrics = _ensured_metrics(ctx)
        error_trace = _first_error_trace(ctx)
        prompt = services.templates.render(
            "insights",
            task_description=services.problem.task_description,
            source=ctx.program.source,
            metrics=format_metrics(metrics, services.problem.schemas),
            error_trace=error_trace or "none",
        )
        try:
            response = await services.call_llm("insights", prompt)
        except LLMUnavailableError as exc:
            logger.warning("insights model unavailable for %s: %s", ctx.program.id, exc)
            return []
        max_insights = int(self.params.get("max_insights", services.settings.max_insights))
        return [i.to_dict() for i in parse_insights(response, max_insights)]


class LineageStage(Stage):
    kind = "lineage"

    def config_fingerprint(self, services) -> str:
        return services.llm.fingerprint("lineage") if services.llm else ""

    async def run(self, ctx: StageContext) -> Any:
        services = ctx.services
        child_metrics = _ensured_metrics(ctx)
        schema = primary_schema(services.problem.schemas)
        analyses = []
        for parent_id in ctx.program.parent_ids:
            parent = services.store.get_program(parent_id)
            if parent is None or not parent.metrics or not child_metrics:
                continue
            if schema.name not in parent.metrics or schema.name not in child_metrics:
                continue
            delta = primary_delta(parent.metrics, child_metrics, schema)
            explanation = ""
            if services.llm is not None:
                prompt = services.templates.render(
                    "lineage",
                    task_description=services.problem.task_description,
                    parent_source=parent.source,
                    child_source=ctx.program.source,
                    parent_metrics=format_metrics(parent.metrics, services.problem.schemas),
                    child_metrics=format_metrics(child_metrics, services.problem.schemas),
                    primary_name=schema.name,
                    primary_delta=f"{delta:+.6g}",
                )
                try:
                    explanation = (await services.call_llm("lineage", prompt)).strip()
                except LLMUnavailableError as exc:
                    logger.warning(
                        "lineage model unavailable for %s: %s", ctx.program.id, exc
                    )
            analyses.append(
                LineageAnalysis(
                    parent_id=parent_id,
                    child_id=ctx.program.id,
                    primary_delta=delta,
                    explanation=explanation,
                ).to_dict()
            )
        return analyses


class SelectRelativesStage(Stage):
    kind = "select_relatives"

    def cacheable(self) -> bool:
        # descendants accumulate after completion; ancestors are fixed at birth
        return self.params.get("direction", "ancestors") == "ancestors"

    async def run(self, ctx: StageContext) -> Any:
        services = ctx.services
        return select_relatives(
            ctx.program,
            direction=self.params.get("direction", "ancestors"),
            strategy=self.params.get("strategy", services.settings.relative_strategy),
            k=int(self.params.get("k", services.settings.relative_k)),
            store=services.store,
            schemas=services.problem.schemas,
            depth=int(self.params.get("depth", services.settings.relative_depth)),
        )


class LineageFromAncestorsStage(Stage):
    """Filter this program's parent->current analyses to the selected ancestors."""

    kind = "lineage_from_ancestors"

    async def run(self, ctx: StageContext) -> Any:
        lineage_stage = self.params.get("lineage_input")
        ids_stage = self.params.get("ancestors_input")
        analyses = ctx.inputs[lineage_stage or self.spec.data_inputs[0]] or []
        selected = set(ctx.inputs[ids_stage or self.spec.data_inputs[1]] or [])
        return [a for a in analyses if a["parent_id"] in selected]


def collect_descendant_analyses(
    program_id: str, descendant_ids: List[str], store, lineage_stage: str = "lineage"
) -> List[Dict[str, Any]]:
    """Current->descendant analyses, read from descendants' stored lineage runs."""
    collected = []
    for descendant_id in descendant_ids:
        descendant = store.get_program(descendant_id)
        if descendant is None:
            continue
        stored = descendant.stage_outputs.get(lineage_stage)
        if not isinstance(stored, dict) or stored.get("status") != "done":
            continue
        for analysis in stored.get("value") or []:
            if analysis.get("parent_id") == program_id:
                collected.append(analysis)
    return collected


class LineageToDescendantsStage(Stage):
    """Pull current->descendant analyses out of the descendants' stored lineage runs."""

    kind = "lineage_to_descendants"

    def cacheable(self) -> bool:
        return False

    async def run(self, ctx: StageContext) -> Any:
        ids_stage = self.params.get("descendants_input")
        selected = ctx.inputs[ids_stage or self.spec.data_inputs[0]] or []
        return collect_descendant_analyses(
            ctx.program.id,
            selected,
            ctx.services.store,
            self.params.get("lineage_stage", "lineage"),
        )


class MutationContextStage(Stage):
    kind = "mutation_context"

    async def run(self, ctx: StageContext) -> Any:
        services = ctx.services
        insights_input, from_input, to_input = (
            self.params.get("insights_input", "insights"),
            self.params.get("from_ancestors_input", "lineage_from_ancestors"),
            self.params.get("to_descendants_input", "lineage_to_descendants"),
        )
        insights = [Insight.from_dict(i) for i in ctx.inputs.get(insights_input) or []]
        from_ancestors = [
            LineageAnalysis.from_dict(a) for a in ctx.inputs.get(from_input) or []
        ]
        to_descendants = [
            LineageAnalysis.from_dict(a) for a in ctx.inputs.get(to_input) or []
        ]
        context = assemble_mutation_context(
            ctx.program,
            metrics=_ensured_metrics(ctx),
            insights=insights,
            from_ancestors=from_ancestors,
            to_descendants=to_descendants,
            error_trace=_first_error_trace(ctx),
            max_insights=services.settings.max_insights,
            max_analyses_per_direction=services.settings.max_analyses_per_direction,
            code_char_budget=services.settings.code_char_budget,
        )
        return context.to_dict()


def format_metrics(metrics: Dict[str, float], schemas: List[MetricSchema]) -> str:
    """One metric per line, rounded per schema precision where a schema exists."""
    lines = []
    for name in sorted(metrics):
        value = metrics[name]
        try:
            schema = schema_by_name(schemas, name)
            direction = "higher is better" if schema.higher_is_better else "lower is better"
            lines.append(f"- {name}: {schema.display(value)} ({direction})")
        except KeyError:
            lines.append(f"- {name}: {value}")
    return "\n".join(lines) if lines else "- (no metrics)"


STAGE_KINDS: Dict[str, type] = {
    cls.kind: cls
    for cls in (
        ValidateCodeStage,
        CallProgramStage,
        CallValidatorStage,
        ComplexityStage,
        EnsureMetricsStage,
        InsightsStage,
        LineageStage,
        SelectRelativesStage,
        LineageFromAncestorsStage,
        LineageToDescendantsStage,
        MutationContextStage,
    )
}
