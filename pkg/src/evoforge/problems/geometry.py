"""Planar geometry validators: triangle-area maximization and circle packing.

All checks are deliberately exhaustive (O(n^3) triples, O(n^2) pairs) --
candidate set sizes are tiny and exactness beats cleverness here.
"""

from __future__ import annotations

import itertools
from typing import Optional, Tuple

import numpy as np

from .base import ValidationResult

CONTAINMENT_TOL = 1e-12
CIRCLE_TOL = 1e-9


def unit_triangle() -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Equilateral triangle of unit area, apex at the origin, flat base below.

    Side s = 2 * 3^(-1/4), height h = 2/s; vertices (0,0), (-s/2,-h), (s/2,-h).
    """
    s = 2.0 / (3.0 ** 0.25)
    h = 2.0 / s
    a = np.array([0.0, 0.0])
    b = np.array([-s / 2.0, -h])
    c = np.array([s / 2.0, -h])
    return a, b, c


def triangle_area(p1, p2, p3) -> float:
    """Area via the cross product of edge vectors from p1."""
    return abs(
        (p2[0] - p1[0]) * (p3[1] - p1[1]) - (p2[1] - p1[1]) * (p3[0] - p1[0])
    ) * 0.5


def min_triangle_area(points) -> float:
    """Minimum triangle area over all point triples, exhaustively."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n < 3:
        raise ValueError("need at least 3 points")
    idx = np.array(list(itertools.combinations(range(n), 3)))
    i, j, k = idx[:, 0], idx[:, 1], idx[:, 2]
    v1 = pts[j] - pts[i]
    v2 = pts[k] - pts[i]
    cross = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
    return float(np.min(np.abs(cross) * 0.5))


def points_inside_triangle(points, a, b, c, tol: float = CONTAINMENT_TOL) -> bool:
    """Half-plane sign tests with additive slack; boundary points count as inside."""
    pts = np.asarray(points, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    orient = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    sign = 1.0 if orient >= 0 else -1.0
    for p0, p1 in ((a, b), (b, c), (c, a)):
        d = (p1[0] - p0[0]) * (pts[:, 1] - p0[1]) - (p1[1] - p0[1]) * (pts[:, 0] - p0[0])
        if np.any(sign * d < -tol):
            return False
    return True


def _coerce_points(raw, n_cols: int) -> Optional[np.ndarray]:
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        return None
    if arr.ndim != 2 or arr.shape[1] != n_cols or arr.shape[0] == 0:
        return None
    if not np.all(np.isfinite(arr)):
        return None
    return arr


def heilbronn_validate(raw, n_points: int = 11) -> ValidationResult:
    """Total validator for point configurations in the unit-area triangle.

    Valid iff: exactly n_points points, all inside-or-on the triangle, pairwise
    distinct, and no collinear triple (minimum triangle area strictly positive).
    The score is the minimum triangle area; zero when invalid.
    """
    pts = _coerce_points(raw, 2)
    if pts is None:
        return ValidationResult({"is_valid": 0, "min_area": 0.0}, reason="malformed output")
    if len(pts) != n_points:
        return ValidationResult(
            {"is_valid": 0, "min_area": 0.0},
            reason=f"cardinality: expected {n_points} points, got {len(pts)}",
        )
    a, b, c = unit_triangle()
    if not points_inside_triangle(pts, a, b, c):
        return ValidationResult(
            {"is_valid": 0, "min_area": 0.0}, reason="containment: point outside triangle"
        )
    seen = set(map(tuple, pts.tolist()))
    if len(seen) != len(pts):
        return ValidationResult(
            {"is_valid": 0, "min_area": 0.0}, reason="distinctness: duplicate points"
        )
    area = min_triangle_area(pts)
    if area <= 0.0:
        return ValidationResult(
            {"is_valid": 0, "min_area": 0.0}, reason="collinearity: zero-area triangle"
        )
    return ValidationResult({"is_valid": 1, "min_area": area})


def circle_packing_validate(raw, n_circles: int, tol: float = CIRCLE_TOL) -> ValidationResult:
    """Total validator for disk packings of the unit square.

    Each row is (cx, cy, r). Valid iff: exactly n_circles disks, r > 0, every
    disk inside the square and pairwise non-overlapping, both with additive
    tolerance. The score is the sum of radii; zero when invalid.
    """
    circles = _coerce_points(raw, 3)
    if circles is None:
        return ValidationResult({"is_valid": 0, "sum_radii": 0.0}, reason="malformed output")
    if len(circles) != n_circles:
        return ValidationResult(
            {"is_valid": 0, "sum_radii": 0.0},
            reason=f"cardinality: expected {n_circles} circles, got {len(circles)}",
        )
    cx, cy, r = circles[:, 0], circles[:, 1], circles[:, 2]
    if np.any(r <= 0):
        return ValidationResult(
            {"is_valid": 0, "sum_radii": 0.0}, reason="radius: non-positive radius"
        )
    inside = (cx >= r - tol) & (cx <= 1 - r + tol) & (cy >= r - tol) & (cy <= 1 - r + tol)
    if not np.all(inside):
        return ValidationResult(
            {"is_valid": 0, "sum_radii": 0.0}, reason="boundary: circle outside unit square"
        )
    for i, j in itertools.combinations(range(len(circles)), 2):
        dist = float(np.hypot(cx[i] - cx[j], cy[i] - cy[j]))
        if dist < r[i] + r[j] - tol:
            return ValidationResult(
                {"is_valid": 0, "sum_radii": 0.0},
                reason=f"overlap: circles {i} and {j} intersect",
            )
    return ValidationResult({"is_valid": 1, "sum_radii": float(np.sum(r))})
