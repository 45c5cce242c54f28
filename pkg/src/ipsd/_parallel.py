"""Order-preserving map over independent jobs, optionally in worker processes.

Jobs carry their own seeds, so results do not depend on the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from typing import Callable, Iterable


def default_workers() -> int:
    return os.cpu_count() or 1


class JobRunner:
    def __init__(self, workers: int | None = 1):
        self.workers = max(1, workers or default_workers())
        self._pool = None

    def __enter__(self):
        if self.workers > 1:
            self._pool = ProcessPoolExecutor(max_workers=self.workers)
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def map(self, fn: Callable, jobs: Iterable) -> list:
        jobs = list(jobs)
        if self._pool is None or len(jobs) < 2:
            return [fn(j) for j in jobs]
        return list(self._pool.map(fn, jobs))


@contextmanager
def runner(workers: int | None = 1):
    with JobRunner(workers) as r:
        yield r
