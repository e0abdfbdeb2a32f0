"""MAP-Elites quality-diversity loop.

Completed programs map into behavior cells (metric bins plus a validity
axis); a cell's occupant is replaced only on a significant improvement of the
primary metric, so per-cell fitness is monotone. Parents are sampled
fitness-proportionally with a small floor so invalid elites (and their error
traces) occasionally re-enter the mutation context. Multiple islands hold
independent archives over possibly different behavior spaces and exchange
top elites along a fixed ring.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from .core import (
    BehaviorCell,
    LifecycleState,
    MetricSchema,
    Program,
    bin_index,
    is_significant_improvement,
    lifecycle_transition,
    new_program_id,
    primary_schema,
    schema_by_name,
)
from .store import START_CURSOR, ProgramStore, cas_update
from .util import derived_rng

logger = logging.getLogger(__name__)

SELECTION_EPSILON = 0.01


class EmptyIslandError(Exception):
    """No elites yet; the evolution loop should wait for completions."""


@dataclass(frozen=True)
class BehaviorSpaceSpec:
    dims: tuple  # ((metric_name, n_bins), ...)
    validity_dim: bool = True

    def __post_init__(self) -> None:
        if not self.dims:
            raise ValueError("behavior space needs at least one dimension")

    def to_dict(self) -> Dict:
        return {"dims": [[name, bins] for name, bins in self.dims], "validity_dim": self.validity_dim}

    @classmethod
    def from_dict(cls, data: Dict) -> "BehaviorSpaceSpec":
        return cls(
            dims=tuple((str(n), int(b)) for n, b in data["dims"]),
            validity_dim=bool(data.get("validity_dim", True)),
        )


def map_to_cell(
    metrics: Dict[str, float], space: BehaviorSpaceSpec, schemas: List[MetricSchema]
) -> BehaviorCell:
    coords = []
    for name, n_bins in space.dims:
        try:
            schema = schema_by_name(schemas, name)
        except KeyError as exc:
            raise ValueError(f"behavior dimension {name!r} has no metric schema") from exc
        coords.append(bin_index(metrics[name], schema, n_bins))
    if space.validity_dim:
        coords.append(int(metrics.get("is_valid", 0)))
    return BehaviorCell(tuple(coords))


@dataclass
class Elite:
    program_id: str
    metrics: Dict[str, float]


@dataclass
class InsertOutcome:
    kind: str  # accepted_new | replaced | discarded
    cell: Optional[BehaviorCell] = None
    evicted_id: Optional[str] = None
    reason: str = ""


@dataclass
class Island:
    id: str
    space: BehaviorSpaceSpec
    rng_seed: int = 0
    cells: Dict[BehaviorCell, Elite] = field(default_factory=dict)

    def occupant_ids(self) -> List[str]:
        return [elite.program_id for elite in self.cells.values()]

    def snapshot(self) -> Dict:
        cells = {}
        for cell in sorted(self.cells, key=lambda c: c.coords):
            elite = self.cells[cell]
            cells[cell.to_key()] = {
                "program_id": elite.program_id,
                "metrics": dict(sorted(elite.metrics.items())),
            }
        return {
            "island": self.id,
            "space": self.space.to_dict(),
            "rng_seed": self.rng_seed,
            "cells": cells,
        }


def island_insert(
    island: Island, program: Program, schemas: List[MetricSchema]
) -> InsertOutcome:
    """Pure cell-competition logic; lifecycle side effects live in the Archive."""
    if not program.metrics:
        raise ValueError("insert requires ensured metrics")
    primary = primary_schema(schemas)
    cell = map_to_cell(program.metrics, island.space, schemas)
    incumbent = island.cells.get(cell)
    if incumbent is None:
        island.cells[cell] = Elite(program.id, dict(program.metrics))
        return InsertOutcome(kind="accepted_new", cell=cell)
    if incumbent.program_id == program.id:
        return InsertOutcome(kind="discarded", cell=cell, reason="already the elite")
    if is_significant_improvement(
        program.metrics[primary.name], incumbent.metrics[primary.name], primary
    ):
        island.cells[cell] = Elite(program.id, dict(program.metrics))
        return InsertOutcome(kind="replaced", cell=cell, evicted_id=incumbent.program_id)
    return InsertOutcome(kind="discarded", cell=cell, reason="did not beat the elite")


def select_parents(
    island: Island,
    k: int,
    rng,
    schemas: List[MetricSchema],
    epsilon: float = SELECTION_EPSILON,
) -> List[str]:
    """Fitness-proportional sampling with replacement over a single island.

    Weight of a valid elite = direction-normalized fitness + epsilon; invalid
    elites get the bare epsilon floor so their error traces keep circulating.
    """
    if not island.cells:
        raise EmptyIslandError(island.id)
    primary = primary_schema(schemas)
    elites = [island.cells[cell] for cell in sorted(island.cells, key=lambda c: c.coords)]
    weights = []
    for elite in elites:
        if int(elite.metrics.get("is_valid", 0)) == 1:
            weights.append(primary.normalized(elite.metrics[primary.name]) + epsilon)
        else:
            weights.append(epsilon)
    total = sum(weights)
    chosen = []
    for _ in range(k):
        if total <= 0:
            chosen.append(elites[rng.randrange(len(elites))].program_id)
            continue
        draw = rng.random() * total
        acc = 0.0
        pick = elites[-1]
        for elite, weight in zip(elites, weights):
            acc += weight
            if draw < acc:
                pick = elite
                break
        chosen.append(pick.program_id)
    return chosen


class Archive:
    """Multi-island coordinator: owns lifecycle transitions through the store.

    The EVOLVING program set always equals the union of island occupants; a
    program is discarded only when it holds no cell on any island.
    """

    def __init__(self, islands: List[Island], schemas: List[MetricSchema], store: ProgramStore):
        if not islands:
            raise ValueError("at least one island required")
        self.islands = islands
        self.schemas = schemas
        self.store = store

    def occupant_anywhere(self, program_id: str) -> bool:
        return any(program_id in island.occupant_ids() for island in self.islands)

    def _transition(self, program_id: str, target: LifecycleState) -> None:
        def apply(stored: Program) -> Optional[Program]:
            if stored.state == target:
                return None
            return lifecycle_transition(stored, target)

        cas_update(self.store, program_id, apply)

    def insert(self, island_index: int, program: Program) -> InsertOutcome:
        island = self.islands[island_index]
        outcome = island_insert(island, program, self.schemas)
        if outcome.kind in ("accepted_new", "replaced"):
            self._transition(program.id, LifecycleState.EVOLVING)
            if outcome.evicted_id and not self.occupant_anywhere(outcome.evicted_id):
                self._transition(outcome.evicted_id, LifecycleState.DISCARDED)
        elif outcome.kind == "discarded" and not self.occupant_anywhere(program.id):
            self._transition(program.id, LifecycleState.DISCARDED)
        return outcome

    def migrate(self, top_k: int) -> int:
        """Ring migration island i -> i+1; the destination's insert rule decides.

        Migrant batches snapshot before any insert so one round's migrations
        do not cascade. Returns the number of accepted migrants.
        """
        if len(self.islands) < 2:
            return 0
        primary = primary_schema(self.schemas)
        batches: List[List[str]] = []
        for island in self.islands:
            elites = sorted(
                island.cells.values(),
                key=lambda e: (-primary.normalized(e.metrics[primary.name]), e.program_id),
            )
            batches.append([e.program_id for e in elites[:top_k]])
        accepted = 0
        for index, batch in enumerate(batches):
            destination = (index + 1) % len(self.islands)
            for program_id in batch:
                program = self.store.require(program_id)
                outcome = self.insert(destination, program)
                if outcome.kind in ("accepted_new", "replaced"):
                    accepted += 1
        return accepted

    def best_elite(self) -> Optional[Elite]:
        """Best valid elite across islands by direction-normalized primary."""
        primary = primary_schema(self.schemas)
        best: Optional[Elite] = None
        best_norm = -1.0
        for island in self.islands:
            for cell in sorted(island.cells, key=lambda c: c.coords):
                elite = island.cells[cell]
                if int(elite.metrics.get("is_valid", 0)) != 1:
                    continue
                norm = primary.normalized(elite.metrics[primary.name])
                if norm > best_norm:
                    best_norm = norm
                    best = elite
        return best

    def snapshot(self) -> List[Dict]:
        return [island.snapshot() for island in self.islands]


@dataclass
class StepReport:
    step: int
    inserted: int = 0
    accepted_new: int = 0
    replaced: int = 0
    discarded: int = 0
    offspring_created: int = 0
    mutation_failures: Dict[str, int] = field(default_factory=dict)
    migrations: int = 0
    best_fitness: Optional[float] = None

    def to_dict(self) -> Dict:
        return {
            "step": self.step,
            "inserted": self.inserted,
            "accepted_new": self.accepted_new,
            "replaced": self.replaced,
            "discarded": self.discarded,
            "offspring_created": self.offspring_created,
            "mutation_failures": dict(sorted(self.mutation_failures.items())),
            "migrations": self.migrations,
            "best_fitness": self.best_fitness,
        }


class EvolutionEngine:
    """Drains the completion feed into the archive and breeds the next batch.

    MutateFn receives the selected parent programs and returns a MutationResult
    -like object with `.ok`, `.source`, `.failure_reason`.
    """

    def __init__(
        self,
        store: ProgramStore,
        schemas: List[MetricSchema],
        archive: Archive,
        seed: int = 0,
        n_parents: int = 1,
        batch_size: int = 4,
        migration_interval: int = 5,
        migration_top_k: int = 1,
        selection_epsilon: float = SELECTION_EPSILON,
        clock=None,
    ) -> None:
        self.store = store
        self.schemas = schemas
        self.archive = archive
        self.n_parents = max(1, n_parents)
        self.batch_size = batch_size
        self.migration_interval = max(1, migration_interval)
        self.migration_top_k = migration_top_k
        self.selection_epsilon = selection_epsilon
        self.cursor = START_CURSOR
        self.step_count = 0
        self.island_of: Dict[str, int] = {}
        self._selection_rngs = [
            derived_rng(seed, f"select:{island.id}") for island in archive.islands
        ]
        self._id_rng = derived_rng(seed, "program-ids")
        self._island_cycle = 0
        self._clock = clock

    def home_island(self, program_id: str) -> int:
        return self.island_of.get(program_id, 0)

    def assign_island(self, program_id: str, island_index: int) -> None:
        self.island_of[program_id] = island_index % len(self.archive.islands)

    def new_offspring(
        self, source: str, parents: List[Program], island_index: int
    ) -> Program:
        offspring = Program(
            id=new_program_id(self._id_rng),
            source=source,
            state=LifecycleState.FRESH,
            parent_ids=[p.id for p in parents],
            generation=max(p.generation for p in parents) + 1,
            created_at=self._clock.now() if self._clock else time.time(),
        )
        self.store.put_program(offspring, expected_version=None)
        self.assign_island(offspring.id, island_index)
        return offspring

    def _drain_completed(self, report: StepReport) -> None:
        completed, self.cursor = self.store.poll_completed(self.cursor)
        for program in completed:
            island_index = self.home_island(program.id)
            outcome = self.archive.insert(island_index, program)
            report.inserted += 1
            if outcome.kind == "accepted_new":
                report.accepted_new += 1
            elif outcome.kind == "replaced":
                report.replaced += 1
            else:
                report.discarded += 1

    def _record_best(self, report: StepReport) -> None:
        best = self.archive.best_elite()
        if best is not None:
            primary = primary_schema(self.schemas)
            report.best_fitness = float(best.metrics[primary.name])

    def drain(self) -> StepReport:
        """Insert pending completions without breeding (used by the final sweep)."""
        self.step_count += 1
        report = StepReport(step=self.step_count)
        self._drain_completed(report)
        self._record_best(report)
        return report

    def step(self, mutate_fn: Callable[[List[Program]], object]) -> Tuple[StepReport, List[Program]]:
        """One evolution step; returns the report and the offspring to evaluate."""
        self.step_count += 1
        report = StepReport(step=self.step_count)
        self._drain_completed(report)

        offspring: List[Program] = []
        if report.inserted > 0:
            offspring = self.breed(mutate_fn, report)
        report.offspring_created = len(offspring)

        if len(self.archive.islands) > 1 and self.step_count % self.migration_interval == 0:
            report.migrations = self.archive.migrate(self.migration_top_k)

        self._record_best(report)
        return report, offspring

    def breed(
        self, mutate_fn: Callable[[List[Program]], object], report: Optional[StepReport] = None
    ) -> List[Program]:
        """Select parents and request one batch of offspring (islands round-robin).

        Exposed separately so the driver can keep breeding when a whole batch
        of mutations failed and there is nothing left to evaluate.
        """
        report = report if report is not None else StepReport(step=self.step_count)
        offspring: List[Program] = []
        populated = [i for i, island in enumerate(self.archive.islands) if island.cells]
        if not populated:
            return offspring
        for _ in range(self.batch_size):
            island_index = populated[self._island_cycle % len(populated)]
            self._island_cycle += 1
            island = self.archive.islands[island_index]
            parent_ids = select_parents(
                island,
                self.n_parents,
                self._selection_rngs[island_index],
                self.schemas,
                self.selection_epsilon,
            )
            parents = [self.store.require(pid) for pid in parent_ids]
            result = mutate_fn(parents)
            if getattr(result, "ok", False):
                offspring.append(self.new_offspring(result.source, parents, island_index))
            else:
                reason = getattr(result, "failure_reason", None) or "unknown"
                report.mutation_failures[reason] = report.mutation_failures.get(reason, 0) + 1
        return offspring
