import threading
from collections.abc import Callable, Iterable
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Any

from app.core.config import settings
from app.utils.singleton import Singleton

_local = threading.local()


class ThreadHelper(metaclass=Singleton):
    """Thread pool shared by the bootstrap and the simulation harness."""

    def __init__(self):
        self.workers = settings.CONF.workers
        self.pool = ThreadPoolExecutor(
            max_workers=self.workers, thread_name_prefix=settings.PROJECT_NAME
        )

    @staticmethod
    def _run(func: Callable, *args, **kwargs) -> Any:
        _local.in_pool = True
        try:
            return func(*args, **kwargs)
        finally:
            _local.in_pool = False

    @staticmethod
    def in_worker() -> bool:
        """True inside a task already running on the pool."""
        return getattr(_local, "in_pool", False)

    def submit(self, func: Callable, *args, **kwargs) -> Future:
        """Submits a task.

        :param func: callable
        :param args: positional arguments
        :param kwargs: keyword arguments
        :return: future
        """
        return self.pool.submit(self._run, func, *args, **kwargs)

    def map(self, func: Callable, items: Iterable, parallel: bool = True) -> list:
        """Applies func to every item, results in input order.

        Runs inline when parallelism is off, the pool has a single worker or the
        caller is itself a pool task, so nested fan-outs never wait on their own pool.
        """
        items = list(items)
        if not parallel or self.workers <= 1 or len(items) <= 1 or self.in_worker():
            return [func(item) for item in items]
        futures = [self.submit(func, item) for item in items]
        return [future.result() for future in futures]
