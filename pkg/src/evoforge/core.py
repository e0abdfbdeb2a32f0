"""Core evolutionary data model: programs, lifecycle states, metric schemas, binning."""

from __future__ import annotations

import json
import math
import time
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional

MANDATORY_VALIDITY_METRIC = "is_valid"


class LifecycleState(str, Enum):
    FRESH = "FRESH"
    RUNNING = "RUNNING"
    COMPLETE = "COMPLETE"
    EVOLVING = "EVOLVING"
    DISCARDED = "DISCARDED"
    FAILED = "FAILED"


# Legal transitions of the program lifecycle. EVOLVING->DISCARDED happens on
# elite replacement; FAILED and DISCARDED are terminal.
LEGAL_TRANSITIONS: Dict[LifecycleState, frozenset] = {
    LifecycleState.FRESH: frozenset({LifecycleState.RUNNING}),
    LifecycleState.RUNNING: frozenset({LifecycleState.COMPLETE, LifecycleState.FAILED}),
    LifecycleState.COMPLETE: frozenset({LifecycleState.EVOLVING, LifecycleState.DISCARDED}),
    LifecycleState.EVOLVING: frozenset({LifecycleState.DISCARDED}),
    LifecycleState.DISCARDED: frozenset(),
    LifecycleState.FAILED: frozenset(),
}


class LifecycleError(Exception):
    """Raised on an illegal lifecycle state transition."""


class CorruptMetricError(Exception):
    """Raised when a metric value is non-finite or non-numeric."""


@dataclass
class Program:
    """The evolutionary unit: a candidate source plus its evaluation record."""

    id: str
    source: str
    state: LifecycleState = LifecycleState.FRESH
    metrics: Optional[Dict[str, float]] = None
    parent_ids: List[str] = field(default_factory=list)
    generation: int = 0
    stage_outputs: Dict[str, Any] = field(default_factory=dict)
    version: int = 0
    created_at: float = field(default_factory=time.time)

    def __post_init__(self) -> None:
        if self.generation < 0:
            raise ValueError("generation must be non-negative")
        if (self.generation == 0) != (len(self.parent_ids) == 0):
            raise ValueError("parent_ids must be empty iff generation is 0")
        if self.metrics is not None and MANDATORY_VALIDITY_METRIC not in self.metrics:
            raise ValueError(f"metrics must contain {MANDATORY_VALIDITY_METRIC!r}")

    @property
    def is_valid(self) -> bool:
        return bool(self.metrics) and self.metrics.get(MANDATORY_VALIDITY_METRIC) == 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "source": self.source,
            "state": self.state.value,
            "metrics": self.metrics,
            "parent_ids": list(self.parent_ids),
            "generation": self.generation,
            "stage_outputs": self.stage_outputs,
            "version": self.version,
            "created_at": self.created_at,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Program":
        return cls(
            id=data["id"],
            source=data["source"],
            state=LifecycleState(data["state"]),
            metrics=data.get("metrics"),
            parent_ids=list(data.get("parent_ids", [])),
            generation=int(data.get("generation", 0)),
            stage_outputs=dict(data.get("stage_outputs", {})),
            version=int(data.get("version", 0)),
            created_at=float(data.get("created_at", 0.0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "Program":
        return cls.from_dict(json.loads(text))


def new_program_id(rng=None) -> str:
    """Fresh UUID; pass an rng for reproducible id streams."""
    if rng is None:
        return str(uuid.uuid4())
    return str(uuid.UUID(bytes=rng.getrandbits(128).to_bytes(16, "big"), version=4))


@dataclass(frozen=True)
class MetricSchema:
    """Declarative per-metric metadata driving binning, display and replacement."""

    name: str
    higher_is_better: bool
    bounds: tuple  # (lo, hi), closed interval
    precision: int = 4
    significance: float = 0.0
    is_primary: bool = False

    def __post_init__(self) -> None:
        lo, hi = self.bounds
        if not (lo < hi):
            raise ValueError(f"schema {self.name!r}: bounds must satisfy lo < hi")
        if self.precision < 0:
            raise ValueError(f"schema {self.name!r}: precision must be non-negative")
        if self.significance < 0:
            raise ValueError(f"schema {self.name!r}: significance must be non-negative")

    @property
    def lo(self) -> float:
        return float(self.bounds[0])

    @property
    def hi(self) -> float:
        return float(self.bounds[1])

    @property
    def worst(self) -> float:
        """The worst in-bounds value (used to fill missing metrics)."""
        return self.lo if self.higher_is_better else self.hi

    def normalized(self, value: float) -> float:
        """Map a value into [0, 1] with 1 = best, clamping out-of-range values."""
        v = min(max(float(value), self.lo), self.hi)
        frac = (v - self.lo) / (self.hi - self.lo)
        return frac if self.higher_is_better else 1.0 - frac

    def display(self, value: float) -> str:
        return f"{float(value):.{self.precision}f}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "higher_is_better": self.higher_is_better,
            "bounds": [self.bounds[0], self.bounds[1]],
            "precision": self.precision,
            "significance": self.significance,
            "is_primary": self.is_primary,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricSchema":
        return cls(
            name=data["name"],
            higher_is_better=bool(data["higher_is_better"]),
            bounds=(float(data["bounds"][0]), float(data["bounds"][1])),
            precision=int(data.get("precision", 4)),
            significance=float(data.get("significance", 0.0)),
            is_primary=bool(data.get("is_primary", False)),
        )


def primary_schema(schemas: List[MetricSchema]) -> MetricSchema:
    primaries = [s for s in schemas if s.is_primary]
    if len(primaries) != 1:
        raise ValueError(f"expected exactly one primary metric schema, found {len(primaries)}")
    return primaries[0]


def schema_by_name(schemas: List[MetricSchema], name: str) -> MetricSchema:
    for s in schemas:
        if s.name == name:
            return s
    raise KeyError(f"no schema for metric {name!r}")


@dataclass(frozen=True)
class BehaviorCell:
    """Grid coordinates of a program in the discretized behavior space."""

    coords: tuple

    def __iter__(self):
        return iter(self.coords)

    def to_key(self) -> str:
        return ",".join(str(c) for c in self.coords)

    @classmethod
    def from_key(cls, key: str) -> "BehaviorCell":
        return cls(tuple(int(c) for c in key.split(",")))


def bin_index(value: float, schema: MetricSchema, n_bins: int) -> int:
    """Uniform half-open binning over the schema bounds; hi maps into the last bin.

    Out-of-range values are clamped, never rejected: evolved programs routinely
    overshoot their declared bounds and must still land in a boundary bin.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    lo, hi = schema.lo, schema.hi
    v = min(max(float(value), lo), hi)
    idx = int(math.floor((v - lo) / (hi - lo) * n_bins))
    return min(idx, n_bins - 1)


# Relative slack so that a delta computed in floating point still counts as
# reaching the significance threshold when it equals it mathematically.
_SIGNIFICANCE_RTOL = 1e-9
_SIGNIFICANCE_ATOL = 1e-15


def is_significant_improvement(candidate: float, incumbent: float, schema: MetricSchema) -> bool:
    """True iff candidate beats incumbent by at least the schema's significance.

    The delta is direction-normalized (positive = improvement). With zero
    significance any strict improvement counts; ties never replace.
    """
    if not (math.isfinite(candidate) and math.isfinite(incumbent)):
        raise CorruptMetricError(
            f"non-finite metric for {schema.name!r}: candidate={candidate}, incumbent={incumbent}"
        )
    delta = (candidate - incumbent) if schema.higher_is_better else (incumbent - candidate)
    if schema.significance == 0:
        return delta > 0
    if delta >= schema.significance:
        return True
    return delta > 0 and math.isclose(
        delta, schema.significance, rel_tol=_SIGNIFICANCE_RTOL, abs_tol=_SIGNIFICANCE_ATOL
    )


def lifecycle_transition(program: Program, target: LifecycleState) -> Program:
    """Return a copy of the program moved to `target`, enforcing the legal edges."""
    if target not in LEGAL_TRANSITIONS[program.state]:
        raise LifecycleError(f"illegal transition {program.state.value} -> {target.value}")
    return replace(program, state=target)
