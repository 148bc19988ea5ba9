"""Minimal shared helpers: path blocks, hashing and seed derivation."""

from __future__ import annotations

import hashlib
import json
from typing import Any, Iterator, List, Sequence, Tuple

import numpy as np


def chunked(seq: Sequence[Any], size: int) -> Iterator[Sequence[Any]]:
    """Yield slices of a sequence with the configured size."""
    for start in range(0, len(seq), size):
        yield seq[start : start + size]


def block_ranges(n_items: int, size: int) -> List[Tuple[int, int, int]]:
    """Split ``range(n_items)`` into ``(block_index, start, stop)`` triples."""
    return [(index, chunk.start, chunk.stop) for index, chunk in enumerate(chunked(range(n_items), size))]


def stable_hash(payload: Any) -> str:
    """sha256 of the canonical JSON form (sorted keys, no whitespace)."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def cell_seed(seed: int, index: int) -> int:
    """Deterministic child seed for sweep cell ``index`` of a run seeded with ``seed``."""
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])
