"""Run orchestration: wires problem, store, sandbox, DAG pipeline, archive and
mutation operator from a composed configuration, then drives the generational
loop until the budget (generations or LLM calls) is exhausted.
"""

from __future__ import annotations

import asyncio
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

from . import report as report_mod
from .config import ConfigError, RunConfig, load_dag_topology
from .core import LifecycleState, Program, lifecycle_transition, new_program_id
from .dag import DagEngine, StageDAG
from .evolution import (
    Archive,
    BehaviorSpaceSpec,
    EvolutionEngine,
    Island,
    StepReport,
)
from .llm import (
    HttpClient,
    LLMUnavailableError,
    MockClient,
    ModelRoute,
    ModelRouter,
    resolve_api_token,
)
from .mutation import MutationContext, MutationOperator
from .problems import ProblemContext, load_problem, resolve_problem_dir
from .sandbox import InProcessExecutor, ResourceLimits, SubprocessExecutor
from . import stages as stages_mod
from .stages import STAGE_KINDS
from .store import cas_update, open_store
from .templates import TemplateSet, for_problem
from .util import LogicalClock, WallClock, derived_rng

logger = logging.getLogger(__name__)

CONTEXT_STAGE = "mutation_context"


@dataclass
class ContextSettings:
    max_insights: int = 5
    max_analyses_per_direction: int = 3
    code_char_budget: int = 8000
    relative_depth: int = 5
    relative_k: int = 3
    relative_strategy: str = "top_fitness"

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> "ContextSettings":
        return cls(
            max_insights=int(section["max_insights"]),
            max_analyses_per_direction=int(section["max_analyses_per_direction"]),
            code_char_budget=int(section["code_char_budget"]),
            relative_depth=int(section["relative_depth"]),
            relative_k=int(section["relative_k"]),
            relative_strategy=str(section["relative_strategy"]),
        )


class RunServices:
    """Shared dependencies handed to stage implementations."""

    def __init__(
        self,
        store,
        problem: ProblemContext,
        executor,
        limits: ResourceLimits,
        llm: Optional[ModelRouter],
        templates: TemplateSet,
        settings: ContextSettings,
        dag: StageDAG,
        metrics_stage: str = "ensure_metrics",
        clock=None,
    ) -> None:
        self.store = store
        self.problem = problem
        self.executor = executor
        self.limits = limits
        self.llm = llm
        self.templates = templates
        self.settings = settings
        self.dag = dag
        self.metrics_stage = metrics_stage
        self.clock = clock or WallClock()

    async def run_executor(self, source: str, mode: str, context: Any):
        return await asyncio.to_thread(self.executor.execute, source, mode, context, self.limits)

    async def call_llm(self, kind: str, prompt: str) -> str:
        if self.llm is None:
            raise LLMUnavailableError("no model router configured")
        return await asyncio.to_thread(self.llm.call, kind, prompt)


class ProgramProcessor:
    """FRESH -> RUNNING -> (COMPLETE with ensured metrics | FAILED) per program."""

    def __init__(self, engine: DagEngine, services: RunServices, max_concurrent: int = 4):
        self.engine = engine
        self.services = services
        self.max_concurrent = max(1, max_concurrent)

    async def process(self, program: Program) -> Program:
        store = self.services.store

        def to_running(stored: Program) -> Optional[Program]:
            if stored.state == LifecycleState.RUNNING:
                return None
            return lifecycle_transition(stored, LifecycleState.RUNNING)

        program = cas_update(store, program.id, to_running)
        externals = {"problem_context": self.services.problem.context_data}
        outcomes = await self.engine.run_program(program, externals)

        metrics_outcome = outcomes.get(self.services.metrics_stage)
        metrics = metrics_outcome.value if metrics_outcome and metrics_outcome.done else None

        def finish(stored: Program) -> Program:
            if isinstance(metrics, dict):
                finished = lifecycle_transition(stored, LifecycleState.COMPLETE)
                finished.metrics = dict(metrics)
            else:
                finished = lifecycle_transition(stored, LifecycleState.FAILED)
            return finished

        return cas_update(store, program.id, finish)

    async def process_many(self, programs: List[Program]) -> List[Program]:
        semaphore = asyncio.Semaphore(self.max_concurrent)
        results: Dict[str, Program] = {}

        async def run_one(prog: Program) -> None:
            async with semaphore:
                results[prog.id] = await self.process(prog)

        await asyncio.gather(*(run_one(p) for p in programs))
        return [results[p.id] for p in programs]


def build_router(config: RunConfig, seed: int) -> ModelRouter:
    rng = derived_rng(seed, "model-routing")
    llm_cfg = config["llm"]
    max_retries = int(llm_cfg["max_retries"])
    backoff = float(llm_cfg["backoff_seconds"])
    if llm_cfg["mode"] == "mock":
        clients: Dict[str, list] = {}
        script_tree: Dict[str, Any] = {}
        if llm_cfg.get("mock_script"):
            import yaml

            script_tree = yaml.safe_load(Path(llm_cfg["mock_script"]).read_text()) or {}
        for kind in ("mutation", "insights", "lineage"):
            section = script_tree.get(kind) or {}
            clients[kind] = [
                MockClient(
                    ModelRoute(stage_kind=kind, model_id=f"mock-{kind}"),
                    script=section.get("script"),
                    sequence=section.get("sequence"),
                    default=section.get("default", ""),
                )
            ]
        return ModelRouter(clients, rng, max_retries=max_retries, backoff_seconds=0.0)
    if llm_cfg["mode"] == "http":
        token = resolve_api_token(str(llm_cfg["api_token_env"]))
        clients_list = []
        for route_cfg in llm_cfg["routes"] or []:
            route = ModelRoute(
                stage_kind=route_cfg["stage_kind"],
                model_id=route_cfg["model_id"],
                endpoint=route_cfg["endpoint"],
                temperature=float(route_cfg.get("temperature", 0.7)),
                max_tokens=int(route_cfg.get("max_tokens", 4096)),
                weight=float(route_cfg.get("weight", 1.0)),
            )
            clients_list.append(HttpClient(route, api_token=token))
        if not clients_list:
            raise ConfigError("llm.mode=http requires at least one route")
        return ModelRouter(clients_list, rng, max_retries=max_retries, backoff_seconds=backoff)
    raise ConfigError(f"unknown llm.mode {llm_cfg['mode']!r}")


def build_islands(config: RunConfig, problem: ProblemContext, seed: int) -> List[Island]:
    algo = config["algorithm"]
    primary_name = problem.primary.name

    def resolve_dims(dims) -> tuple:
        resolved = []
        for name, bins in dims:
            resolved.append((primary_name if name == "primary" else str(name), int(bins)))
        return tuple(resolved)

    if algo["kind"] == "single_island":
        space = BehaviorSpaceSpec(
            dims=((primary_name, int(algo["fitness_bins"])),),
            validity_dim=bool(algo["validity_dim"]),
        )
        return [Island(id="island-0", space=space, rng_seed=seed)]
    if algo["kind"] == "multi_island":
        islands = []
        for index, island_cfg in enumerate(algo["islands"]):
            space = BehaviorSpaceSpec(
                dims=resolve_dims(island_cfg["dims"]),
                validity_dim=bool(island_cfg.get("validity_dim", algo["validity_dim"])),
            )
            islands.append(Island(id=f"island-{index}", space=space, rng_seed=seed + index))
        if len(islands) < 2:
            raise ConfigError("multi_island requires at least two islands")
        return islands
    raise ConfigError(f"unknown algorithm.kind {algo['kind']!r}")


def build_executor(config: RunConfig, problem: ProblemContext):
    execution = config["execution"]
    if execution["executor"] == "in_process":
        return InProcessExecutor(helper_module=problem.helper_module)
    if execution["executor"] == "subprocess":
        cmd = execution["interpreter_cmd"]
        if not cmd:
            raise ConfigError("execution.executor=subprocess requires interpreter_cmd")
        resolved = [part.replace("{problem}", problem.name) for part in cmd]
        return SubprocessExecutor(resolved)
    raise ConfigError(f"unknown execution.executor {execution['executor']!r}")


class Runner:
    """Owns one evolutionary run end to end."""

    def __init__(self, config: RunConfig) -> None:
        self.config = config
        execution = config["execution"]
        self.seed = config.seed
        self.single_threaded = bool(execution["single_threaded"])
        self.clock = LogicalClock() if self.single_threaded else WallClock()

        problem_dir = resolve_problem_dir(str(config.get("problem.name")))
        self.problem = load_problem(problem_dir)
        self.templates = for_problem(problem_dir)

        self.dag = StageDAG.from_dict(load_dag_topology(str(config.get("dag.topology"))))
        self.store = open_store(
            str(config.get("store.backend")),
            config.get("store.address"),
            config.namespace,
        )
        self.limits = ResourceLimits(
            wall_timeout=float(execution["wall_timeout"]),
            memory_cap=int(execution["memory_cap"]),
            output_cap=int(execution["output_cap"]),
        )
        self.executor = build_executor(config, self.problem)
        self.router = build_router(config, self.seed)
        settings = ContextSettings.from_config(config["context"])

        max_stages = 1 if self.single_threaded else int(execution["max_concurrent_stages"])
        max_programs = 1 if self.single_threaded else int(execution["max_concurrent_programs"])
        self.services = RunServices(
            store=self.store,
            problem=self.problem,
            executor=self.executor,
            limits=self.limits,
            llm=self.router,
            templates=self.templates,
            settings=settings,
            dag=self.dag,
            metrics_stage=str(config.get("dag.metrics_stage")),
            clock=self.clock,
        )
        self.dag_engine = DagEngine(
            self.dag,
            STAGE_KINDS,
            self.services,
            max_concurrent_programs=max_programs,
            max_concurrent_stages=max_stages,
        )
        self.processor = ProgramProcessor(self.dag_engine, self.services, max_programs)

        islands = build_islands(config, self.problem, self.seed)
        self.archive = Archive(islands, self.problem.schemas, self.store)
        algo = config["algorithm"]
        self.engine = EvolutionEngine(
            store=self.store,
            schemas=self.problem.schemas,
            archive=self.archive,
            seed=self.seed,
            n_parents=int(algo["n_parents"]),
            batch_size=int(algo["batch_size"]),
            migration_interval=int(algo["migration_interval"]),
            migration_top_k=int(algo["migration_top_k"]),
            selection_epsilon=float(algo["selection_epsilon"]),
            clock=self.clock,
        )
        self.operator = MutationOperator(
            router=self.router,
            templates=self.templates,
            task_description=self.problem.task_description,
            schemas=self.problem.schemas,
            mode=str(config.get("mutation.mode")),
            prompt_char_budget=int(config.get("mutation.prompt_char_budget")),
        )
        self.series: List[StepReport] = []
        self._seed_rng = derived_rng(self.seed, "seed-programs")

    # -- seeding ----------------------------------------------------------

    def _seed_sources(self) -> List[str]:
        export_path = self.config.get("problem.seed_export")
        if export_path:
            data = json.loads(Path(export_path).read_text())
            sources, seen = [], set()
            for island in data.get("islands", []):
                for cell_key in sorted(island.get("cells", {})):
                    elite = island["cells"][cell_key]
                    if elite["program_id"] in seen:
                        continue
                    seen.add(elite["program_id"])
                    record = data.get("programs", {}).get(elite["program_id"])
                    if record:
                        sources.append(record["source"])
            if sources:
                return sources
            raise ConfigError(f"seed export {export_path} contains no elites")
        if self.problem.initial_programs:
            return list(self.problem.initial_programs)
        if self.problem.seed_namespace:
            seed_store = open_store(
                str(self.config.get("store.backend")),
                self.config.get("store.address"),
                str(self.problem.seed_namespace),
            )
            sources = [p.source for p in seed_store.all_programs()]
            if sources:
                return sources
        raise ConfigError(f"problem {self.problem.name!r} has no seed programs")

    def seed_programs(self) -> List[Program]:
        programs = []
        for index, source in enumerate(self._seed_sources()):
            program = Program(
                id=new_program_id(self._seed_rng),
                source=source,
                state=LifecycleState.FRESH,
                generation=0,
                created_at=self.clock.now(),
            )
            self.store.put_program(program, expected_version=None)
            self.engine.assign_island(program.id, index % len(self.archive.islands))
            programs.append(program)
        return programs

    # -- mutation ---------------------------------------------------------

    def _context_for(self, parent: Program) -> MutationContext:
        stored = parent.stage_outputs.get(CONTEXT_STAGE)
        if isinstance(stored, dict) and stored.get("status") == "done" and stored.get("value"):
            context = MutationContext.from_dict(stored["value"])
        else:
            context = MutationContext(
                program_id=parent.id, source=parent.source, metrics=dict(parent.metrics or {})
            )
        # Descendants appear only after the parent's pipeline ran, so the
        # descendant-lineage half of the context refreshes at selection time.
        settings = self.services.settings
        try:
            descendant_ids = stages_mod.select_relatives(
                parent,
                direction="descendants",
                strategy=settings.relative_strategy,
                k=settings.relative_k,
                store=self.store,
                schemas=self.problem.schemas,
                depth=settings.relative_depth,
            )
            analyses = stages_mod.collect_descendant_analyses(
                parent.id, descendant_ids, self.store
            )
            context.lineage_to_descendants = [
                stages_mod.LineageAnalysis.from_dict(a)
                for a in analyses[: settings.max_analyses_per_direction]
            ]
        except Exception:
            logger.exception("descendant context refresh failed for %s", parent.id)
        return context

    def mutate(self, parents: List[Program]):
        return self.operator.mutate([self._context_for(p) for p in parents])

    # -- main loop --------------------------------------------------------

    def run(self) -> Dict[str, Any]:
        return asyncio.run(self._run())

    async def _run(self) -> Dict[str, Any]:
        max_generations = int(self.config.get("budget.max_generations"))
        max_llm_calls = int(self.config.get("budget.max_llm_calls"))
        pending = self.seed_programs()

        for _ in range(max_generations):
            if self.router.calls >= max_llm_calls:
                logger.info("LLM call budget exhausted (%d)", self.router.calls)
                break
            if pending:
                await self.processor.process_many(pending)
            report, pending = self.engine.step(self.mutate)
            if (
                not pending
                and report.inserted > 0
                and any(i.cells for i in self.archive.islands)
                and self.router.calls < max_llm_calls
            ):
                # a fully failed batch would stall the loop; breed again
                pending = self.engine.breed(self.mutate, report)
                report.offspring_created = len(pending)
            self.series.append(report)

        if pending:
            await self.processor.process_many(pending)
        self.series.append(self.engine.drain())
        return self.finalize()

    # -- reporting --------------------------------------------------------

    def best_program(self) -> Optional[Program]:
        elite = self.archive.best_elite()
        return self.store.get_program(elite.program_id) if elite else None

    def lineage_edges(self) -> List[List[str]]:
        edges = []
        for program in self.store.all_programs():
            for parent_id in program.parent_ids:
                edges.append([parent_id, program.id])
        return edges

    def export_snapshot(self) -> Dict[str, Any]:
        programs = {p.id: p.to_dict() for p in self.store.all_programs()}
        return {
            "namespace": self.config.namespace,
            "problem": self.problem.name,
            "schemas": [s.to_dict() for s in self.problem.schemas],
            "islands": self.archive.snapshot(),
            "lineage_edges": self.lineage_edges(),
            "programs": programs,
        }

    def run_report(self) -> Dict[str, Any]:
        best = self.best_program()
        return {
            "problem": self.problem.name,
            "namespace": self.config.namespace,
            "seed": self.seed,
            "generations": len(self.series),
            "llm_calls": self.router.calls,
            "mutation_failures": dict(sorted(self.operator.failure_counts.items())),
            "series": [r.to_dict() for r in self.series],
            "best": None
            if best is None
            else {
                "program_id": best.id,
                "generation": best.generation,
                "metrics": dict(sorted((best.metrics or {}).items())),
                "source": best.source,
            },
            "archive_occupancy": {
                island.id: len(island.cells) for island in self.archive.islands
            },
        }

    def finalize(self) -> Dict[str, Any]:
        run_report = self.run_report()
        snapshot = self.export_snapshot()
        out_dir = Path(str(self.config.get("report.dir"))) / self.config.namespace
        report_mod.write_run_artifacts(
            out_dir,
            run_report,
            snapshot,
            figures=bool(self.config.get("report.figures")),
        )
        self.store.put_blob("archive", json.dumps(snapshot, sort_keys=True))
        self.store.put_blob("report", json.dumps(run_report, sort_keys=True))
        run_report["report_dir"] = str(out_dir)
        return run_report


def validate_run_config(config: RunConfig) -> List[str]:
    """Fail-fast composition check: problem, DAG, islands, router all build."""
    errors: List[str] = []
    try:
        problem_dir = resolve_problem_dir(str(config.get("problem.name")))
        problem = load_problem(problem_dir)
    except Exception as exc:
        errors.append(f"problem: {exc}")
        return errors
    try:
        dag = StageDAG.from_dict(load_dag_topology(str(config.get("dag.topology"))))
        from .dag import validate_dag

        errors.extend(f"dag: {e}" for e in validate_dag(dag))
        for spec in dag.stages:
            if spec.kind not in STAGE_KINDS:
                errors.append(f"dag: unknown stage kind {spec.kind!r}")
    except Exception as exc:
        errors.append(f"dag: {exc}")
    try:
        build_islands(config, problem, config.seed)
    except Exception as exc:
        errors.append(f"algorithm: {exc}")
    try:
        build_router(config, config.seed)
    except Exception as exc:
        errors.append(f"llm: {exc}")
    try:
        ResourceLimits(
            wall_timeout=float(config.get("execution.wall_timeout")),
            memory_cap=int(config.get("execution.memory_cap")),
            output_cap=int(config.get("execution.output_cap")),
        )
    except Exception as exc:
        errors.append(f"execution: {exc}")
    return errors
