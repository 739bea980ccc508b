"""Thread control and deterministic seed derivation.

All heavy kernels in this package parallelize by assigning each output
element to exactly one worker (no cross-thread reductions), so results are
bit-identical for any thread count. ``set_threads(1)`` therefore changes
wall time, never values.
"""

from __future__ import annotations

import os

import numba
import numpy as np

_current_threads: int | None = None


def max_threads() -> int:
    """Upper bound on usable worker threads in this process."""
    return numba.config.NUMBA_NUM_THREADS


def set_threads(n: int) -> int:
    """Set the worker thread count for compiled kernels.

    Requests above the process limit are clamped. Returns the count in
    effect.
    """
    global _current_threads
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    n = min(n, max_threads())
    numba.set_num_threads(n)
    _current_threads = n
    return n


def get_threads() -> int:
    """Worker thread count currently in effect."""
    if _current_threads is None:
        return max_threads()
    return _current_threads


def default_threads() -> int:
    return min(os.cpu_count() or 1, max_threads())


def child_rng(master_seed: int, *path: int) -> np.random.Generator:
    """Derive an independent generator from a master seed and an index path.

    The same (seed, path) pair always yields the same stream; distinct paths
    yield independent streams. This is the single splitting rule used by
    dataset generation, noise injection, and sweeps, so any sample can be
    regenerated in isolation.
    """
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, path)]))
