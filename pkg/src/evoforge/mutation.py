"""The mutation operator: prompt assembly, model calls, and offspring parsing.

Rewrite mode asks for a complete program and extracts the last fenced code
block (reasoning models emit scratch blocks first). Diff mode applies
search/replace blocks against the first parent; every SEARCH text must match
the current source exactly once -- a silent mispatch is worse than a loud
failure, and failure reasons feed run telemetry.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .core import MetricSchema
from .llm import LLMUnavailableError, ModelRouter
from .stages import MutationContext, format_metrics

REWRITE = "rewrite"
DIFF = "diff"
MUTATION_MODES = (REWRITE, DIFF)

SEARCH_OPEN = "<<<<<<< SEARCH"
DIVIDER = "======="
REPLACE_CLOSE = ">>>>>>> REPLACE"

_FENCED_BLOCK = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)

FAILURE_PROMPT_BUDGET = "prompt_budget"
FAILURE_UNAVAILABLE = "model_unavailable"
FAILURE_NO_BLOCK = "no_fenced_block"
FAILURE_EMPTY = "empty_program"
FAILURE_MALFORMED_DIFF = "malformed_diff"
FAILURE_SEARCH_NOT_FOUND = "search_not_found"
FAILURE_SEARCH_AMBIGUOUS = "search_ambiguous"


class MutationParseError(Exception):
    def __init__(self, reason: str, detail: str = "") -> None:
        super().__init__(detail or reason)
        self.reason = reason


class PromptBudgetError(Exception):
    pass


@dataclass
class MutationResult:
    source: Optional[str] = None
    failure_reason: Optional[str] = None
    prompt: str = ""
    response: str = ""

    @property
    def ok(self) -> bool:
        return self.source is not None


def render_fenced(source: str, language: str = "python") -> str:
    return f"```{language}\n{source}\n```"


def parse_rewrite(response: str) -> str:
    """Contents of the last fenced code block; must be non-empty."""
    blocks = _FENCED_BLOCK.findall(response)
    if not blocks:
        raise MutationParseError(FAILURE_NO_BLOCK, "response contains no fenced code block")
    source = blocks[-1].rstrip("\n")
    if not source.strip():
        raise MutationParseError(FAILURE_EMPTY, "fenced block is empty")
    return source


def parse_diff_blocks(response: str) -> List[Tuple[str, str]]:
    """Extract (search, replace) pairs; prose outside blocks is ignored."""
    blocks: List[Tuple[str, str]] = []
    lines = response.splitlines()
    i = 0
    while i < len(lines):
        if lines[i].strip() != SEARCH_OPEN:
            i += 1
            continue
        search_lines: List[str] = []
        replace_lines: List[str] = []
        i += 1
        while i < len(lines) and lines[i].strip() != DIVIDER:
            if lines[i].strip() == REPLACE_CLOSE or lines[i].strip() == SEARCH_OPEN:
                raise MutationParseError(
                    FAILURE_MALFORMED_DIFF, "SEARCH section not terminated by divider"
                )
            search_lines.append(lines[i])
            i += 1
        if i >= len(lines):
            raise MutationParseError(FAILURE_MALFORMED_DIFF, "missing divider")
        i += 1  # past divider
        while i < len(lines) and lines[i].strip() != REPLACE_CLOSE:
            if lines[i].strip() in (SEARCH_OPEN, DIVIDER):
                raise MutationParseError(
                    FAILURE_MALFORMED_DIFF, "REPLACE section not terminated"
                )
            replace_lines.append(lines[i])
            i += 1
        if i >= len(lines):
            raise MutationParseError(FAILURE_MALFORMED_DIFF, "missing REPLACE terminator")
        i += 1  # past terminator
        blocks.append(("\n".join(search_lines), "\n".join(replace_lines)))
    if not blocks:
        raise MutationParseError(FAILURE_MALFORMED_DIFF, "no search/replace blocks found")
    return blocks


def apply_diff(parent_source: str, response: str) -> str:
    """Apply search/replace blocks sequentially; each SEARCH must match exactly once."""
    source = parent_source
    for search, replace in parse_diff_blocks(response):
        occurrences = source.count(search) if search else 0
        if occurrences == 0:
            raise MutationParseError(
                FAILURE_SEARCH_NOT_FOUND, f"SEARCH text not found: {search[:120]!r}"
            )
        if occurrences > 1:
            raise MutationParseError(
                FAILURE_SEARCH_AMBIGUOUS,
                f"SEARCH text occurs {occurrences} times: {search[:120]!r}",
            )
        source = source.replace(search, replace, 1)
    return source


def build_prompt(
    task_description: str,
    contexts: List[MutationContext],
    mode: str,
    schemas: List[MetricSchema],
    templates,
    prompt_char_budget: int = 32000,
) -> str:
    """Deterministic prompt: task, one labeled section per parent (source,
    metrics, insights, both lineage directions, error trace), mode suffix."""
    if not contexts:
        raise ValueError("at least one mutation context is required")
    if mode not in MUTATION_MODES:
        raise ValueError(f"unknown mutation mode {mode!r}")

    parts: List[str] = ["# Task", "", task_description.strip(), ""]
    for index, ctx in enumerate(contexts, start=1):
        parts += [f"# Parent {index} (id: {ctx.program_id})", ""]
        parts += ["## Source", "", render_fenced(ctx.source), ""]
        parts += ["## Metrics", "", format_metrics(ctx.metrics, schemas), ""]
        parts += ["## Insights", ""]
        if ctx.insights:
            parts += [f"- {insight.render()}" for insight in ctx.insights]
        else:
            parts.append("- none")
        parts.append("")
        parts += ["## Lineage: gains over ancestors", ""]
        parts += _lineage_bullets(ctx.lineage_from_ancestors, schemas)
        parts.append("")
        parts += ["## Lineage: gains achieved by descendants", ""]
        parts += _lineage_bullets(ctx.lineage_to_descendants, schemas)
        parts.append("")
        if ctx.error_trace:
            parts += ["## Last error", "", "```", ctx.error_trace, "```", ""]

    suffix_template = "mutation_rewrite" if mode == REWRITE else "mutation_diff"
    parts += ["# Instructions", "", templates.render(suffix_template).strip(), ""]
    prompt = "\n".join(parts)
    if len(prompt) > prompt_char_budget:
        raise PromptBudgetError(
            f"prompt is {len(prompt)} chars, budget {prompt_char_budget} "
            "(lower context caps or raise mutation.prompt_char_budget)"
        )
    return prompt


def _lineage_bullets(analyses, schemas: List[MetricSchema]) -> List[str]:
    if not analyses:
        return ["- none"]
    primary = next(s for s in schemas if s.is_primary)
    bullets = []
    for analysis in analyses:
        text = analysis.explanation.strip() or "(no explanation)"
        bullets.append(f"- {primary.name} {analysis.primary_delta:+.6g}: {text}")
    return bullets


@dataclass
class MutationOperator:
    """build_prompt -> route_and_call -> parse, with failure accounting."""

    router: ModelRouter
    templates: object
    task_description: str
    schemas: List[MetricSchema]
    mode: str = REWRITE
    prompt_char_budget: int = 32000
    failure_counts: Dict[str, int] = field(default_factory=dict)

    def _count_failure(self, reason: str) -> None:
        self.failure_counts[reason] = self.failure_counts.get(reason, 0) + 1

    def mutate(self, contexts: List[MutationContext]) -> MutationResult:
        try:
            prompt = build_prompt(
                self.task_description,
                contexts,
                self.mode,
                self.schemas,
                self.templates,
                self.prompt_char_budget,
            )
        except PromptBudgetError:
            self._count_failure(FAILURE_PROMPT_BUDGET)
            return MutationResult(failure_reason=FAILURE_PROMPT_BUDGET)
        try:
            response = self.router.call("mutation", prompt)
        except LLMUnavailableError:
            self._count_failure(FAILURE_UNAVAILABLE)
            return MutationResult(failure_reason=FAILURE_UNAVAILABLE, prompt=prompt)
        try:
            if self.mode == REWRITE:
                source = parse_rewrite(response)
            else:
                source = apply_diff(contexts[0].source, response)
        except MutationParseError as exc:
            self._count_failure(exc.reason)
            return MutationResult(
                failure_reason=exc.reason, prompt=prompt, response=response
            )
        return MutationResult(source=source, prompt=prompt, response=response)
