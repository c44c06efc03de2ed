"""Classical one-sample tests the LqLR is compared against."""

import math
from collections.abc import Callable

import numpy as np
from scipy import stats

from app.chain import ChainBase
from app.chain.estimation import EstimationChain
from app.chain.lqlr import LqlrChain
from app.core.config import settings
from app.log import logger
from app.schemas.exception import DomainException, TestFailureException
from app.schemas.hypothesis import BootstrapMeta, HypothesisSpec, TestResult
from app.schemas.types import Alternative, TestMethod
from app.utils.stats import StatsUtils

Density = Callable[[np.ndarray], np.ndarray]


class CompetitorChain(ChainBase):
    """t, z, Wilcoxon signed-rank, sign and Huber censored likelihood ratio tests."""

    def __init__(self, parallel: bool = True):
        super().__init__(parallel)
        self.estimation = EstimationChain(parallel)
        self.lqlr = LqlrChain(parallel)

    @staticmethod
    def __sample(data) -> np.ndarray:
        values = np.asarray(data, dtype=float).reshape(-1)
        if values.size == 0:
            raise DomainException("no observations")
        if not np.all(np.isfinite(values)):
            raise DomainException("observations must be finite")
        return values

    @staticmethod
    def __boundary(dist, alternative: Alternative, alpha: float) -> float:
        """Rejection boundary of a continuous reference law on the statistic's scale."""
        if alternative == Alternative.Greater:
            return float(dist.ppf(1.0 - alpha))
        if alternative == Alternative.Less:
            return float(dist.ppf(alpha))
        return float(dist.ppf(1.0 - alpha / 2.0))

    def t_test(
        self,
        data,
        mu0: float = 0.0,
        alternative: Alternative | str = Alternative.TwoSided,
        alpha: float | None = None,
    ) -> TestResult:
        """One-sample Student t test."""
        alternative = Alternative.parse(alternative)
        alpha = self._resolve(alpha, settings.ALPHA)
        values = self.__sample(data)
        n = values.size
        if n < 2:
            raise DomainException("the t test needs at least 2 observations")
        if np.std(values) == 0:
            raise TestFailureException("zero sample variance")
        result = stats.ttest_1samp(values, mu0, alternative=alternative.value)
        return TestResult(
            statistic=float(result.statistic),
            critical_value=self.__boundary(stats.t(df=n - 1), alternative, alpha),
            p_value=float(result.pvalue),
            reject=bool(result.pvalue <= alpha),
            method=TestMethod.LrT,
            alternative=alternative,
            alpha=alpha,
            n=n,
        )

    def z_test(
        self,
        data,
        mu0: float = 0.0,
        sigma: float = 1.0,
        alternative: Alternative | str = Alternative.TwoSided,
        alpha: float | None = None,
    ) -> TestResult:
        """Known-variance z test, sqrt(n)(mean - mu0)/sigma against N(0, 1)."""
        alternative = Alternative.parse(alternative)
        alpha = self._resolve(alpha, settings.ALPHA)
        values = self.__sample(data)
        if not sigma > 0:
            raise DomainException(f"sigma must be positive, got {sigma}")
        z = math.sqrt(values.size) * (float(np.mean(values)) - mu0) / sigma
        if alternative == Alternative.Greater:
            p_value = float(stats.norm.sf(z))
        elif alternative == Alternative.Less:
            p_value = float(stats.norm.cdf(z))
        else:
            p_value = float(2.0 * stats.norm.sf(abs(z)))
        return TestResult(
            statistic=z,
            critical_value=self.__boundary(stats.norm, alternative, alpha),
            p_value=p_value,
            reject=p_value <= alpha,
            method=TestMethod.Z,
            alternative=alternative,
            alpha=alpha,
            n=int(values.size),
        )

    @staticmethod
    def signed_rank_distribution(ranks) -> tuple[np.ndarray, np.ndarray]:
        """Exact null law of W+ = sum of the ranks carrying a + sign.

        Ranks may be averages of ties, so the recursion runs on doubled ranks.

        :return: (support values of W+, probabilities)
        """
        doubled = np.rint(2.0 * np.asarray(ranks, dtype=float)).astype(int)
        counts = np.zeros(int(doubled.sum()) + 1)
        counts[0] = 1.0
        for rank in doubled:
            # each rank enters the sum with probability one half
            shifted = np.zeros_like(counts)
            shifted[rank:] = counts[: counts.size - rank]
            counts = counts + shifted
        support = np.arange(counts.size) / 2.0
        probs = counts / counts.sum()
        keep = probs > 0
        return support[keep], probs[keep]

    def wilcoxon_signed_rank(
        self,
        data,
        mu0: float = 0.0,
        alternative: Alternative | str = Alternative.TwoSided,
        alpha: float | None = None,
    ) -> TestResult:
        """Signed-rank test, zeros dropped and ties given average ranks.

        Exact null law up to WILCOXON_EXACT_MAX_N nonzero differences, normal
        approximation with continuity correction above.
        """
        alternative = Alternative.parse(alternative)
        alpha = self._resolve(alpha, settings.ALPHA)
        diffs = self.__sample(data) - mu0
        diffs = diffs[diffs != 0]
        if diffs.size == 0:
            raise TestFailureException("all differences are zero")
        ranks = stats.rankdata(np.abs(diffs))
        w_plus = float(np.sum(ranks[diffs > 0]))

        if diffs.size <= settings.WILCOXON_EXACT_MAX_N:
            support, probs = self.signed_rank_distribution(ranks)
            upper = float(np.sum(probs[support >= w_plus - 1e-9]))
            lower = float(np.sum(probs[support <= w_plus + 1e-9]))
        else:
            mean = float(np.sum(ranks)) / 2.0
            sd = math.sqrt(float(np.sum(ranks**2)) / 4.0)
            upper = float(stats.norm.sf((w_plus - mean - 0.5) / sd))
            lower = float(stats.norm.cdf((w_plus - mean + 0.5) / sd))

        if alternative == Alternative.Greater:
            p_value = upper
        elif alternative == Alternative.Less:
            p_value = lower
        else:
            p_value = min(1.0, 2.0 * min(upper, lower))
        return TestResult(
            statistic=w_plus,
            p_value=p_value,
            reject=p_value <= alpha,
            method=TestMethod.Wilcoxon,
            alternative=alternative,
            alpha=alpha,
            n=int(diffs.size),
        )

    def sign_test(
        self,
        data,
        mu0: float = 0.0,
        alternative: Alternative | str = Alternative.TwoSided,
        alpha: float | None = None,
    ) -> TestResult:
        """Exact binomial(n', 1/2) test on the count of positive differences."""
        alternative = Alternative.parse(alternative)
        alpha = self._resolve(alpha, settings.ALPHA)
        diffs = self.__sample(data) - mu0
        diffs = diffs[diffs != 0]
        if diffs.size == 0:
            raise TestFailureException("all differences are zero")
        positives = int(np.count_nonzero(diffs > 0))
        p_value = float(
            stats.binomtest(positives, diffs.size, 0.5, alternative=alternative.value).pvalue
        )
        return TestResult(
            statistic=float(positives),
            p_value=p_value,
            reject=p_value <= alpha,
            method=TestMethod.Sign,
            alternative=alternative,
            alpha=alpha,
            n=int(diffs.size),
        )

    @staticmethod
    def huber_statistic(
        data, p0: Density, p1: Density, c_low: float, c_high: float
    ) -> float:
        """sum_i log clamp(p1(x_i) / p0(x_i), c_low, c_high).

        p0 = 0 < p1 counts as c_high, p0 = p1 = 0 as a ratio of 1.
        """
        if not 0 < c_low < c_high:
            raise DomainException("huber bounds need 0 < c_low < c_high")
        num = np.asarray(p1(data), dtype=float)
        den = np.asarray(p0(data), dtype=float)
        ratio = np.ones_like(num)
        np.divide(num, den, out=ratio, where=den > 0)
        ratio = np.where((den <= 0) & (num > 0), c_high, ratio)
        return float(np.sum(np.log(np.clip(ratio, c_low, c_high))))

    def huber_censored_lr(
        self,
        data,
        spec: HypothesisSpec,
        c_low: float | None = None,
        c_high: float | None = None,
        B: int | None = None,
        seed: int | None = None,
        p0: Density | None = None,
        p1: Density | None = None,
    ) -> TestResult:
        """Huber's censored likelihood ratio test calibrated by the shift bootstrap.

        Without explicit densities p1 is f at the unconstrained q = 1 fit and p0
        is f at the null-constrained q = 1 fit, both refitted on every resample.
        With explicit p0 and p1 the same pair is used on every resample.
        """
        c_low = self._resolve(c_low, settings.HUBER_C_LOW)
        c_high = self._resolve(c_high, settings.HUBER_C_HIGH)
        B = self._resolve(B, settings.BOOTSTRAP_SIZE)
        seed = self._resolve(seed, settings.DEFAULT_SEED)
        if B < settings.BOOTSTRAP_MIN_SIZE:
            raise DomainException(
                f"bootstrap size must be at least {settings.BOOTSTRAP_MIN_SIZE}, got {B}"
            )
        fam = spec.family
        batch, _ = fam.as_batch(data)
        fixed_pair = p0 is not None and p1 is not None

        def statistic(sample: np.ndarray) -> float:
            full, null = self.lqlr.fit_pair(sample, spec, 1.0)
            if fixed_pair:
                value = self.huber_statistic(sample, p0, p1, c_low, c_high)
            else:
                value = self.huber_statistic(
                    sample,
                    lambda x: fam.density(x, null.theta),
                    lambda x: fam.density(x, full.theta),
                    c_low,
                    c_high,
                )
            if spec.alternative == Alternative.TwoSided:
                return value
            sign = np.sign(full.theta_hat[0] - spec.theta0[0]) or 1.0
            orient = 1.0 if spec.alternative == Alternative.Greater else -1.0
            return float(orient * sign * value)

        observed = statistic(batch)
        centre = self.estimation.mlqe(batch, fam, 1.0)
        shifted = self.lqlr.shift_to_null(batch, spec, centre.theta_hat)
        draws, redraws = self.lqlr.shift_bootstrap(shifted, statistic, B, seed)
        critical_value = StatsUtils.upper_quantile(draws, spec.alpha)
        p_value = StatsUtils.exceedance_p_value(draws, observed)
        logger.info(
            f"Huber c=({c_low:g}, {c_high:g}) T={observed:.6g} "
            f"critical={critical_value:.6g} p={p_value:.4g}"
        )
        return TestResult(
            statistic=observed,
            critical_value=critical_value,
            p_value=p_value,
            reject=p_value <= spec.alpha,
            method=TestMethod.Huber,
            alternative=spec.alternative,
            alpha=spec.alpha,
            n=int(batch.shape[0]),
            seed=seed,
            bootstrap_meta=BootstrapMeta(
                B=B, seed=seed, theta_hat_centre=centre.theta_hat, redraws=redraws
            ),
        )
