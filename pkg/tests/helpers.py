"""Test utilities: program builders and lattice constructions used as oracles."""

from __future__ import annotations

import itertools
from typing import List, Optional

from evoforge.core import LifecycleState, MetricSchema, Program

DEFAULT_SCHEMAS = [
    MetricSchema("fitness", higher_is_better=True, bounds=(0.0, 1.0),
                 precision=4, significance=0.0, is_primary=True),
    MetricSchema("loc", higher_is_better=False, bounds=(0, 500),
                 precision=0, significance=1.0),
]


_COUNTER = itertools.count(1)


def make_program(
    source: str = "def entrypoint():\n    return 1\n",
    state: LifecycleState = LifecycleState.FRESH,
    metrics: Optional[dict] = None,
    parent_ids: Optional[List[str]] = None,
    generation: int = 0,
    program_id: Optional[str] = None,
    created_at: Optional[float] = None,
) -> Program:
    n = next(_COUNTER)
    return Program(
        id=program_id or f"00000000-0000-4000-8000-{n:012d}",
        source=source,
        state=state,
        metrics=metrics,
        parent_ids=parent_ids or [],
        generation=generation,
        created_at=float(n) if created_at is None else created_at,
    )


def d4_vectors() -> List[List[int]]:
    """The 24 minimal vectors of the D4 lattice: signed pairs in 4 coordinates."""
    vectors = []
    for i, j in itertools.combinations(range(4), 2):
        for si in (1, -1):
            for sj in (1, -1):
                v = [0, 0, 0, 0]
                v[i], v[j] = si, sj
                vectors.append(v)
    return vectors


def e8_vectors_scaled() -> List[List[int]]:
    """The 240 roots of E8, scaled by 2 so all coordinates are integers.

    Integer part: (+-2, +-2, 0^6) in all coordinate pairs (112 vectors);
    half-integer part: (+-1)^8 with an even number of minus signs (128).
    Squared norm 8, minimum pairwise squared distance 8.
    """
    vectors = []
    for i, j in itertools.combinations(range(8), 2):
        for si in (2, -2):
            for sj in (2, -2):
                v = [0] * 8
                v[i], v[j] = si, sj
                vectors.append(v)
    for signs in itertools.product((1, -1), repeat=8):
        if signs.count(-1) % 2 == 0:
            vectors.append(list(signs))
    return vectors
