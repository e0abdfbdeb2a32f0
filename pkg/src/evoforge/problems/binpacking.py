"""Online bin packing: instance generation, bounds, and the assignment validator.

The offline optimum is approximated by the ceiling lower bound ceil(sum/cap)
(the exact optimum is NP-hard); an exact branch-and-bound exists for tiny
instances to calibrate the bound. Heuristic quality is the mean excess-bin
fraction over a seeded instance set, lower is better.
"""

from __future__ import annotations

import math
from typing import Dict, List, Optional, Sequence

import numpy as np

from .base import ValidationResult

CAPACITY_TOL = 1e-9
_SUM_EPS = 1e-12


def generate_instances(
    distribution: str,
    n_instances: int,
    n_items: int,
    capacity: float = 1.0,
    seed: int = 0,
) -> List[Dict]:
    """Seeded instance sets. Uniform draws item sizes from U(0.2, 0.8); Weibull
    uses shape 3.0 scaled by 0.45, clipped into (0.01, capacity)."""
    rng = np.random.default_rng(seed)
    instances = []
    for _ in range(n_instances):
        if distribution == "uniform":
            items = rng.uniform(0.2, 0.8, size=n_items)
        elif distribution == "weibull":
            items = np.clip(rng.weibull(3.0, size=n_items) * 0.45, 0.01, capacity)
        else:
            raise ValueError(f"unknown distribution {distribution!r}")
        instances.append({"items": [float(x) for x in items], "capacity": float(capacity)})
    return instances


def binpacking_lower_bound(items: Sequence[float], capacity: float) -> int:
    """ceil(sum/capacity), with a tiny slack so float dust never inflates it."""
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    for item in items:
        if item <= 0:
            raise ValueError("items must be positive")
        if item > capacity * (1 + _SUM_EPS):
            raise ValueError(f"item {item} exceeds capacity {capacity}")
    if not items:
        return 0
    return int(math.ceil(sum(items) / capacity - _SUM_EPS))


def exact_min_bins(items: Sequence[float], capacity: float) -> int:
    """Branch-and-bound exact optimum; only feasible for small instances (<= ~15 items)."""
    if len(items) > 15:
        raise ValueError("exact solver is limited to 15 items")
    if not items:
        return 0
    ordered = sorted(items, reverse=True)
    best = len(ordered)

    def search(index: int, loads: List[float]) -> None:
        nonlocal best
        if len(loads) >= best:
            return
        if index == len(ordered):
            best = min(best, len(loads))
            return
        item = ordered[index]
        seen_loads = set()
        for b, load in enumerate(loads):
            if load + item <= capacity + _SUM_EPS and load not in seen_loads:
                seen_loads.add(load)
                loads[b] = load + item
                search(index + 1, loads)
                loads[b] = load
        loads.append(item)
        search(index + 1, loads)
        loads.pop()

    search(0, [])
    return best


def first_fit(items: Sequence[float], capacity: float) -> List[int]:
    """Reference online heuristic: place each item into the first bin that fits."""
    loads: List[float] = []
    assignment: List[int] = []
    for item in items:
        for b, load in enumerate(loads):
            if load + item <= capacity + _SUM_EPS:
                loads[b] = load + item
                assignment.append(b)
                break
        else:
            loads.append(item)
            assignment.append(len(loads) - 1)
    return assignment


def check_assignment(items: Sequence[float], capacity: float, assignment) -> Optional[str]:
    """Feasibility of one online assignment; returns a diagnostic or None.

    Bins must be opened in index order (an item may only start bin B when bins
    0..B-1 already exist) and no bin may exceed capacity.
    """
    if not isinstance(assignment, (list, tuple)):
        return "malformed assignment"
    if len(assignment) != len(items):
        return f"assignment length {len(assignment)} != item count {len(items)}"
    loads: List[float] = []
    for pos, bin_index in enumerate(assignment):
        if isinstance(bin_index, bool) or not isinstance(bin_index, int):
            return f"non-integer bin index at item {pos}"
        if bin_index < 0 or bin_index > len(loads):
            return f"item {pos} assigned to bin {bin_index} before bins 0..{len(loads) - 1} filled"
        if bin_index == len(loads):
            loads.append(0.0)
        loads[bin_index] += items[pos]
        if loads[bin_index] > capacity + CAPACITY_TOL:
            return f"bin {bin_index} overfull after item {pos} ({loads[bin_index]:.6f} > {capacity})"
    return None


def binpacking_validate(raw, instances: List[Dict]) -> ValidationResult:
    """Total validator over an instance set; fitness is the mean excess fraction."""
    if not isinstance(raw, (list, tuple)) or len(raw) != len(instances):
        return ValidationResult(
            {"is_valid": 0},
            reason=f"expected {len(instances)} assignments, got "
            f"{len(raw) if isinstance(raw, (list, tuple)) else type(raw).__name__}",
        )
    fractions = []
    for idx, (assignment, instance) in enumerate(zip(raw, instances)):
        items, capacity = instance["items"], instance["capacity"]
        diagnostic = check_assignment(items, capacity, assignment)
        if diagnostic is not None:
            return ValidationResult({"is_valid": 0}, reason=f"instance {idx}: {diagnostic}")
        bins_used = (max(assignment) + 1) if assignment else 0
        lower = binpacking_lower_bound(items, capacity)
        if lower == 0:
            fractions.append(0.0 if bins_used == 0 else 1.0)
        else:
            fractions.append((bins_used - lower) / lower)
    mean_excess = float(sum(fractions) / len(fractions)) if fractions else 0.0
    return ValidationResult({"is_valid": 1, "mean_excess_frac": mean_excess})
