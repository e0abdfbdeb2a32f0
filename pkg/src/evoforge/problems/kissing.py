"""Exact verifier for integer-vector kissing configurations.

A set of distinct non-zero integer vectors certifies a kissing configuration
when all squared norms equal a common shell value r^2 > 0 and every pairwise
squared distance is at least r^2. Everything runs on Python integers, so
arbitrarily large coordinates verify without overflow.
"""

from __future__ import annotations

from typing import List, Optional, Tuple

from .base import ValidationResult


def _coerce_integer_vectors(raw) -> Optional[List[Tuple[int, ...]]]:
    if not isinstance(raw, (list, tuple)) or len(raw) == 0:
        return None
    vectors = []
    dim = None
    for row in raw:
        if not isinstance(row, (list, tuple)) or len(row) == 0:
            return None
        if dim is None:
            dim = len(row)
        elif len(row) != dim:
            return None
        vec = []
        for entry in row:
            # bool is an int subclass but not a legitimate coordinate
            if isinstance(entry, bool) or not isinstance(entry, int):
                return None
            vec.append(entry)
        vectors.append(tuple(vec))
    return vectors


def kissing_validate(raw, dim: Optional[int] = None) -> ValidationResult:
    """Total validator; fitness is the number of vectors in a valid set."""
    vectors = _coerce_integer_vectors(raw)
    if vectors is None:
        return ValidationResult(
            {"is_valid": 0, "num_vectors": 0},
            reason="malformed output: expected a non-empty list of equal-length integer vectors",
        )
    if dim is not None and len(vectors[0]) != dim:
        return ValidationResult(
            {"is_valid": 0, "num_vectors": 0},
            reason=f"dimension: expected {dim}, got {len(vectors[0])}",
        )
    if len(set(vectors)) != len(vectors):
        return ValidationResult(
            {"is_valid": 0, "num_vectors": 0}, reason="duplicate vectors"
        )

    shell = sum(x * x for x in vectors[0])
    if shell <= 0:
        return ValidationResult({"is_valid": 0, "num_vectors": 0}, reason="zero vector")
    for vec in vectors[1:]:
        if sum(x * x for x in vec) != shell:
            return ValidationResult(
                {"is_valid": 0, "num_vectors": 0},
                reason="shell: squared norms are not all equal",
            )

    n = len(vectors)
    for i in range(n):
        vi = vectors[i]
        for j in range(i + 1, n):
            vj = vectors[j]
            dist_sq = sum((a - b) * (a - b) for a, b in zip(vi, vj))
            if dist_sq < shell:
                return ValidationResult(
                    {"is_valid": 0, "num_vectors": 0},
                    reason=f"separation: vectors {i} and {j} have squared distance "
                    f"{dist_sq} < {shell}",
                )
    return ValidationResult({"is_valid": 1, "num_vectors": n})
