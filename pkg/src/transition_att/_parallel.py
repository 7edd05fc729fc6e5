"""Order-preserving process-pool map.

Callers split work into a fixed task list that does not depend on the worker
count, so results are identical whether tasks run serially or in parallel.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List


def pmap(fn: Callable, tasks: Iterable, workers: int = 1) -> List:
    """Apply ``fn`` to each task and return results in task order."""
    tasks = list(tasks)
    if workers is None or workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as ex:
        return list(ex.map(fn, tasks))


def chunked(seq, size: int) -> list:
    seq = list(seq)
    return [seq[i:i + size] for i in range(0, len(seq), size)]
