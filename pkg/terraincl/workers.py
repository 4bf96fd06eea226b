"""
A small thread pool for stepping disjoint agent chunks.

Tasks go through a :class:`queue.Queue` to daemon threads; every result lands in the slot of its
chunk, so the output order (and therefore every reduction done afterwards) does not depend on the
number of workers. numpy releases the GIL inside its kernels, which is where the time goes.
"""
import logging
import os
import threading
from queue import Queue

import numpy as np

log = logging.getLogger(__name__)

THREADS_ENV_VAR = 'TERRAINCL_THREADS'


def default_num_workers():
    """
    Get the worker count: ``TERRAINCL_THREADS`` if set, else ``min(8, cpu_count)``.

    Returns:
        int: At least 1.
    """
    value = os.environ.get(THREADS_ENV_VAR)
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            log.warning('ignoring non-integer %s=%r', THREADS_ENV_VAR, value)
    return max(1, min(8, os.cpu_count() or 1))


def split_chunks(num_items, num_chunks):
    """
    Split ``range(num_items)`` into at most ``num_chunks`` contiguous, non-empty index arrays.
    """
    num_chunks = max(1, min(num_chunks, num_items))
    return [chunk for chunk in np.array_split(np.arange(num_items), num_chunks) if len(chunk)]


class WorkerPool:
    """
    Thread pool with ordered results.

    Attributes:
        num_workers (int): Number of threads; 1 runs everything in the calling thread.
    """

    def __init__(self, num_workers=None):
        self.num_workers = default_num_workers() if num_workers is None else max(1, int(num_workers))
        self._tasks = Queue()
        self._threads = []
        self._lock = threading.Lock()
        if self.num_workers > 1:
            for i in range(self.num_workers):
                thread = threading.Thread(target=self._work, name=f'terraincl-worker-{i}', daemon=True)
                thread.start()
                self._threads.append(thread)

    def _work(self):
        while True:
            task = self._tasks.get()
            if task is None:
                break
            fn, item, slot, results, done = task
            try:
                results[slot] = fn(item)
                done.put((slot, None))
            except BaseException as exc:
                done.put((slot, exc))

    def map(self, fn, items):
        """
        Apply ``fn`` to every item.

        Args:
            fn (callable): The task.
            items (list): Task arguments.

        Returns:
            list: ``[fn(item) for item in items]``.

        Raises:
            Exception: The first exception raised by a task (in item order).
        """
        items = list(items)
        if self.num_workers <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        results = [None] * len(items)
        errors = [None] * len(items)
        done = Queue()
        # one map at a time, so concurrent callers cannot interleave their tasks' completions
        with self._lock:
            for slot, item in enumerate(items):
                self._tasks.put((fn, item, slot, results, done))
            for _ in items:
                slot, exc = done.get()
                errors[slot] = exc
        for exc in errors:
            if exc is not None:
                raise exc
        return results

    def close(self):
        """
        Stop the worker threads.
        """
        for _ in self._threads:
            self._tasks.put(None)
        for thread in self._threads:
            thread.join()
        self._threads = []
        self.num_workers = 1
