"""Small shared helpers: canonical digests, deterministic clocks and RNG streams."""

from __future__ import annotations

import hashlib
import json
import random
import time


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def canonical_digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


class WallClock:
    def now(self) -> float:
        return time.time()


class LogicalClock:
    """Deterministic monotone clock for reproducible runs and tests."""

    def __init__(self, start: float = 0.0, step: float = 1.0) -> None:
        self._value = start
        self._step = step

    def now(self) -> float:
        self._value += self._step
        return self._value


def derived_rng(seed: int, stream: str) -> random.Random:
    """Independent deterministic RNG stream named off a master seed."""
    digest = hashlib.sha256(f"{seed}:{stream}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))
