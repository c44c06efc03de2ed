import math

import numpy as np


class StatsUtils:
    @staticmethod
    def upper_quantile(draws, alpha: float) -> float:
        """Empirical (1 - alpha) quantile, linear between order statistics.

        The order-statistic index is h = (B - 1)(1 - alpha) + 1 (1-based).
        """
        values = np.asarray(draws, dtype=float)
        if values.size == 0:
            raise ValueError("no draws")
        return float(np.quantile(values, 1.0 - alpha, method="linear"))

    @staticmethod
    def exceedance_p_value(draws, observed: float) -> float:
        """(1 + #{draw >= observed}) / (B + 1)."""
        values = np.asarray(draws, dtype=float)
        return float((1 + np.count_nonzero(values >= observed)) / (values.size + 1))

    @staticmethod
    def rate_stderr(rate: float, m: int) -> float:
        """Binomial standard error sqrt(p (1 - p) / M)."""
        if m <= 0:
            return float("nan")
        return math.sqrt(max(rate * (1.0 - rate), 0.0) / m)

    @staticmethod
    def signed_root(d_q: float, theta_hat: float, theta0: float) -> float:
        """sign(theta_hat - theta0) * sqrt(D_q)."""
        return float(np.sign(theta_hat - theta0) * math.sqrt(max(d_q, 0.0)))
