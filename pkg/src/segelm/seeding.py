"""Deterministic derivation of independent random streams.

All stochastic stages draw from generators keyed by (seed, context
indices), so any unit of work produces the same result whether it runs
serially or in a worker pool.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive_seed", "derive_rng"]


def derive_seed(*parts: int) -> int:
    """Collapse a context tuple into a single integer seed."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def derive_rng(*parts: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in parts]))
