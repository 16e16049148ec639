"""Deterministic process-parallel map over independent replicates.

The worker count is capped by the ``SDOT_THREADS`` environment variable.
Every task must derive its randomness from its own index (see
:meth:`sdot.measures.RandomSource.spawn`), so results do not depend on how
tasks are scheduled; they are always returned in task order.
"""
from __future__ import annotations

import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor

_CONTEXT = None


def worker_count(n_tasks: int | None = None) -> int:
    env = os.environ.get("SDOT_THREADS", "").strip()
    n = int(env) if env else (os.cpu_count() or 1)
    n = max(1, n)
    if n_tasks is not None:
        n = max(1, min(n, n_tasks))
    return n


def _init(context):
    global _CONTEXT
    _CONTEXT = context


def _run_chunk(args):
    fn, chunk = args
    return [fn(_CONTEXT, item) for item in chunk]


def parallel_map(fn, items, context=None) -> list:
    """``[fn(context, item) for item in items]``, possibly across processes.

    ``fn`` must be a module-level function.  ``context`` is shipped once per
    worker rather than once per task.
    """
    items = list(items)
    workers = worker_count(len(items))
    if workers == 1:
        return [fn(context, item) for item in items]
    n_chunks = min(len(items), 4 * workers)
    bounds = [len(items) * k // n_chunks for k in range(n_chunks + 1)]
    chunks = [items[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
    with ProcessPoolExecutor(workers, mp_context=ctx, initializer=_init, initargs=(context,)) as pool:
        parts = list(pool.map(_run_chunk, [(fn, c) for c in chunks]))
    return [r for part in parts for r in part]
