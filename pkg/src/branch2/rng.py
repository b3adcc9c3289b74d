"""Per-replicate random streams and a thread fan-out that does not change results."""
from __future__ import annotations

import contextlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

T = TypeVar("T")


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Stream for replicate ``index``; independent of how replicates are scheduled."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def run_replicates(fn: Callable[[int, np.random.Generator], T], n: int, seed: int, threads: int = 1) -> list[T]:
    """Evaluate ``fn(i, rng_i)`` for i < n, returned in index order.

    The numba kernels release the GIL, so threads give real parallelism.
    """
    if n < 0:
        raise ValueError("replicate count must be nonnegative")

    def job(i):
        return fn(i, replicate_rng(seed, i))

    if threads <= 1 or n < 2:
        return [job(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(job, range(n)))


@contextlib.contextmanager
def open_text(target):
    """Yield a writable text stream for a path, or pass an open stream through."""
    if hasattr(target, "write"):
        yield target
    else:
        with open(target, "w", newline="") as fh:
            yield fh
