"""Deterministic parallel task execution and solver instrumentation.

This module owns the only concurrency in the package. Tasks are pure
functions of picklable inputs writing to disjoint output slots, so results
are identical (bitwise) to serial execution for any worker count; only wall
clocks change. Workers are OS processes (fork) because the per-step solver
loops are Python-bound.
"""

from __future__ import annotations

import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

from .errors import TaskError


def available_workers() -> int:
    return os.cpu_count() or 1


def _noop(_):
    return None


def _run_task(fn, index, args):
    # Executed inside the worker so pool dispatch overhead never lands in the
    # level timings. Monotonic wall clock: thread CPU clocks tick too coarsely
    # on some kernels to resolve sub-millisecond tasks.
    start = time.perf_counter()
    try:
        result = fn(*args)
    except BaseException as exc:  # propagated with the task index by the caller
        return index, None, time.perf_counter() - start, exc
    return index, result, time.perf_counter() - start, None


class WorkerPool:
    """Maps independent tasks over a fixed number of workers.

    ``workers`` is the requested (modeled) parallelism used for critical-path
    aggregation; the actual process count is capped at the core count, which
    changes nothing but wall clocks. ``workers == 1`` runs everything
    in-process (no pickling); larger counts use a process pool created lazily
    and reused for the pool's lifetime.
    """

    def __init__(self, workers: int | None = None):
        self.workers = int(workers) if workers else available_workers()
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        self.processes = min(self.workers, available_workers())
        self._executor: ProcessPoolExecutor | None = None

    def __enter__(self) -> "WorkerPool":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def _ensure_executor(self) -> ProcessPoolExecutor:
        if self._executor is None:
            try:
                ctx = multiprocessing.get_context("fork")
            except ValueError:  # pragma: no cover - non-POSIX fallback
                ctx = multiprocessing.get_context("spawn")
            self._executor = ProcessPoolExecutor(max_workers=self.processes,
                                                 mp_context=ctx)
            # Warm the workers up so cold-start cost never lands in task clocks.
            list(self._executor.map(_noop, range(2 * self.processes)))
        return self._executor

    def map(self, fn, args_list):
        """Run ``fn(*args)`` for each args tuple; order of results == order of tasks.

        Returns ``(results, task_seconds, elapsed)`` where ``task_seconds[i]``
        is task i's own wall clock and ``elapsed`` is the whole region's.
        Task exceptions re-raise as ``TaskError`` carrying the task index.
        """
        args_list = list(args_list)
        region_start = time.perf_counter()
        if not args_list:
            return [], [], time.perf_counter() - region_start
        if self.processes == 1 or len(args_list) == 1:
            raw = [_run_task(fn, i, args) for i, args in enumerate(args_list)]
        else:
            ex = self._ensure_executor()
            raw = list(ex.map(_run_task, [fn] * len(args_list),
                              range(len(args_list)), args_list))
        elapsed = time.perf_counter() - region_start
        results, seconds = [], []
        for index, result, secs, exc in raw:
            if exc is not None:
                raise TaskError(index, exc) from exc
            results.append(result)
            seconds.append(secs)
        return results, seconds, elapsed


def parallel_map(fn, args_list, workers: int = 1):
    """One-shot convenience wrapper around ``WorkerPool.map``."""
    with WorkerPool(workers) as pool:
        return pool.map(fn, args_list)


def critical_path_seconds(task_seconds: list[float], workers: int) -> float:
    """Max-over-workers wall clock under round-robin task assignment.

    Equals the longest task when tasks fit within the worker count; the
    per-level "max" aggregation is built from this.
    """
    if not task_seconds:
        return 0.0
    loads = [0.0] * min(workers, len(task_seconds))
    for i, secs in enumerate(task_seconds):
        loads[i % len(loads)] += secs
    return max(loads)


class Timings:
    """Accumulates labelled wall-clock sections; labels repeat additively."""

    def __init__(self):
        self.seconds: dict[str, float] = {}

    def add(self, label: str, seconds: float) -> None:
        self.seconds[label] = self.seconds.get(label, 0.0) + seconds

    @contextmanager
    def section(self, label: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.add(label, time.perf_counter() - start)

    def timed(self, label: str, thunk):
        """Run ``thunk()`` inside a section and return its result."""
        with self.section(label):
            return thunk()

    def get(self, label: str) -> float:
        return self.seconds.get(label, 0.0)


@dataclass
class CostEstimate:
    """Operation-count model of the multilevel direct solve.

    ``flop_sequential`` counts one forward substitution of the fine system;
    ``cpu_parallel`` models the per-worker critical path over all levels;
    ``speedup`` is the modeled ratio with ``processors`` workers.
    """

    flop_sequential: float
    flop_parallel_bound: float
    cpu_sequential: float
    cpu_parallel: float
    speedup: float
    processors: int
    levels: int


@dataclass
class SolverReport:
    """Per-solve instrumentation: timings, iteration counts, residual history."""

    solver: str = ""
    workers: int = 1
    converged: bool = True
    outer_iterations: int = 0
    picard_iterations: int = 0
    newton_iterations: int = 0
    inner_picard: int = 0
    inner_newton: int = 0
    avg_iterations_per_step: float | None = None
    residual_history: list[float] = field(default_factory=list)
    interior_residual_history: list[float] = field(default_factory=list)
    mode_history: list[str] = field(default_factory=list)
    per_level_max: dict[int, float] = field(default_factory=dict)
    per_level_sum: dict[int, float] = field(default_factory=dict)
    wall_seconds: float = 0.0
    cost_estimate: CostEstimate | None = None

    def add_level_tasks(self, level: int, task_seconds: list[float]) -> None:
        """Fold one parallel region's task clocks into the level aggregates."""
        if not task_seconds:
            return
        self.per_level_max[level] = self.per_level_max.get(level, 0.0) + \
            critical_path_seconds(task_seconds, self.workers)
        self.per_level_sum[level] = self.per_level_sum.get(level, 0.0) + sum(task_seconds)

    def add_level_serial(self, level: int, seconds: float) -> None:
        self.per_level_max[level] = self.per_level_max.get(level, 0.0) + seconds
        self.per_level_sum[level] = self.per_level_sum.get(level, 0.0) + seconds

    @property
    def residual_final(self) -> float | None:
        return self.residual_history[-1] if self.residual_history else None
