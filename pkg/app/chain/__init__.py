from collections.abc import Callable, Iterable

from app.core.config import settings
from app.helper.thread import ThreadHelper
from app.log import logger


class ChainBase:
    """Processing chain base class."""

    def __init__(self, parallel: bool = True):
        """Public initialization.

        :param parallel: dispatch replicate loops through the shared thread pool
        """
        self.parallel = parallel
        self.threadhelper = ThreadHelper()

    @staticmethod
    def _resolve(value, default):
        """Explicit keyword override, else the configured default."""
        return default if value is None else value

    def run_replicates(self, func: Callable, items: Iterable) -> list:
        """Runs independent replicates, results in input order."""
        return self.threadhelper.map(func, items, parallel=self.parallel)

    @staticmethod
    def log_settings():
        logger.debug(
            f"{settings.PROJECT_NAME}: workers={settings.CONF.workers} "
            f"tol={settings.MLQE_TOL:g} max_iter={settings.MLQE_MAX_ITER}"
        )
