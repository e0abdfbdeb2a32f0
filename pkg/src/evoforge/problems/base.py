"""Shared validator result type."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict


@dataclass
class ValidationResult:
    """Numeric metrics (always including is_valid) plus a human diagnostic."""

    metrics: Dict[str, float]
    reason: str = ""

    def __post_init__(self) -> None:
        if "is_valid" not in self.metrics:
            raise ValueError("validator metrics must include is_valid")
