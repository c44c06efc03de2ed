from collections.abc import Callable

import numpy as np

from app.chain import ChainBase
from app.chain.estimation import EstimationChain
from app.core import lq
from app.core.config import settings
from app.core.mixture import GrossErrorModel
from app.log import logger
from app.schemas.estimation import EstimationResult
from app.schemas.exception import (
    BootstrapException,
    DomainException,
    EstimationException,
    SelectionException,
)
from app.schemas.hypothesis import (
    BootstrapMeta,
    CriticalValueResult,
    HypothesisSpec,
    QCurvePoint,
    QSelection,
    TestResult,
)
from app.schemas.types import Alternative, TestMethod
from app.utils.seed import SeedUtils
from app.utils.stats import StatsUtils

ADAPTIVE = "adaptive"
# Relative gap under which two q-selection objectives count as tied
TIE_TOLERANCE = 1e-12


class LqlrChain(ChainBase):
    """The Lq-likelihood ratio test: D_q, its bootstrap calibration and adaptive q."""

    def __init__(self, parallel: bool = True):
        super().__init__(parallel)
        self.estimation = EstimationChain(parallel)

    def fit_pair(
        self, data, spec: HypothesisSpec, q: float, multistart: bool | None = None
    ) -> tuple[EstimationResult, EstimationResult]:
        """Unconstrained and null-constrained MLqE of the same sample.

        The null fit runs from the family's default start and from the
        unconstrained estimate; the larger Lq-likelihood wins.
        """
        full = self.estimation.mlqe(data, spec.family, q, multistart=multistart)
        fits, first_error = [], None
        for init in (None, full.theta):
            try:
                fits.append(
                    self.estimation.mlqe_constrained(
                        data, spec.family, q, spec.fixed, init=init, multistart=multistart
                    )
                )
            except EstimationException as err:
                logger.debug(f"null fit start {init} failed: {err}")
                first_error = first_error or err
        if not fits:
            raise first_error
        null = max(fits, key=lambda fit: fit.lq_likelihood)
        return full, null

    @staticmethod
    def gap(full: EstimationResult, null: EstimationResult) -> float:
        """2 (sum L_q at theta_hat - sum L_q at theta_hat_0), clamped at 0."""
        d_q = 2.0 * (full.lq_likelihood - null.lq_likelihood)
        if d_q < -1e-8:
            logger.debug(f"constrained fit above the unconstrained one, D_q={d_q:.3e} clamped")
        return max(d_q, 0.0)

    def lqlr_statistic(
        self, data, spec: HypothesisSpec, q: float, multistart: bool | None = None
    ) -> float:
        """D_q for H0: theta[:r] = theta0."""
        return self.gap(*self.fit_pair(data, spec, q, multistart))

    @staticmethod
    def oriented(spec: HypothesisSpec, d_q: float, full: EstimationResult) -> float:
        """D_q for two-sided tests, else the signed root pointing toward H1."""
        if spec.alternative == Alternative.TwoSided:
            return d_q
        root = StatsUtils.signed_root(d_q, full.theta_hat[0], spec.theta0[0])
        return root if spec.alternative == Alternative.Greater else -root

    def observed(
        self, data, spec: HypothesisSpec, q: float, multistart: bool | None = None
    ) -> tuple[float, float, EstimationResult]:
        """(statistic, D_q, unconstrained fit) on the observed sample."""
        full, null = self.fit_pair(data, spec, q, multistart)
        d_q = self.gap(full, null)
        return self.oriented(spec, d_q, full), d_q, full

    @staticmethod
    def shift_to_null(data, spec: HypothesisSpec, theta_hat) -> np.ndarray:
        """Moves the sample so that its estimate sits on the null value.

        Only tested location coordinates are translated; a tested scale is
        imposed by the constrained fit alone.
        """
        shifted = np.asarray(data, dtype=float)
        for j, value in enumerate(spec.theta0):
            if j in spec.family.location_coords:
                shifted = spec.family.shift(shifted, j, value - float(theta_hat[j]))
        return shifted

    def shift_bootstrap(
        self,
        data: np.ndarray,
        statistic: Callable[[np.ndarray], float],
        B: int,
        seed: int,
    ) -> tuple[list[float], int]:
        """Evaluates ``statistic`` on B resamples with replacement.

        A resample whose estimation fails is redrawn from the next attempt
        stream; more redraws than the configured fraction of B is a failure.

        :return: the B draws and the number of redraws
        """
        batch = np.asarray(data, dtype=float)
        n = batch.shape[0]
        limit = int(settings.BOOTSTRAP_REDRAW_LIMIT * B)

        def replicate(b: int) -> tuple[float, int]:
            attempt = 0
            while True:
                rng = SeedUtils.generator(seed, "bootstrap", b, attempt)
                resample = batch[rng.integers(0, n, size=n)]
                try:
                    return float(statistic(resample)), attempt
                except EstimationException as err:
                    attempt += 1
                    logger.debug(f"bootstrap resample {b} redrawn: {err}")
                    if attempt > limit:
                        raise BootstrapException(
                            f"bootstrap resample {b} failed {attempt} times"
                        ) from err

        results = self.run_replicates(replicate, range(B))
        redraws = sum(r[1] for r in results)
        if redraws > limit:
            raise BootstrapException(
                f"{redraws} of {B} bootstrap resamples had to be redrawn "
                f"(limit {settings.BOOTSTRAP_REDRAW_LIMIT:.0%})"
            )
        if redraws:
            logger.warning(f"{redraws} bootstrap resamples redrawn")
        return [r[0] for r in results], redraws

    def __calibrate(
        self,
        batch,
        spec: HypothesisSpec,
        q: float,
        full: EstimationResult,
        B: int,
        seed: int,
        multistart: bool | None,
    ) -> CriticalValueResult:
        if B < settings.BOOTSTRAP_MIN_SIZE:
            raise DomainException(
                f"bootstrap size must be at least {settings.BOOTSTRAP_MIN_SIZE}, got {B}"
            )
        shifted = self.shift_to_null(batch, spec, full.theta_hat)

        def statistic(sample: np.ndarray) -> float:
            return self.observed(sample, spec, q, multistart)[0]

        draws, redraws = self.shift_bootstrap(shifted, statistic, B, seed)
        critical_value = StatsUtils.upper_quantile(draws, spec.alpha)
        return CriticalValueResult(
            critical_value=critical_value,
            bootstrap_draws=draws,
            q=q,
            alpha=spec.alpha,
            meta=BootstrapMeta(
                B=B, seed=seed, theta_hat_centre=full.theta_hat, redraws=redraws
            ),
        )

    def bootstrap_critical_value(
        self,
        data,
        spec: HypothesisSpec,
        q: float,
        B: int | None = None,
        seed: int | None = None,
        multistart: bool | None = None,
    ) -> CriticalValueResult:
        """(1 - alpha) quantile of the statistic over shifted-sample resamples.

        :param data: observed sample
        :param spec: hypothesis
        :param q: tuning parameter
        :param B: resamples, default BOOTSTRAP_SIZE
        :param seed: base seed, default DEFAULT_SEED
        """
        B = self._resolve(B, settings.BOOTSTRAP_SIZE)
        seed = self._resolve(seed, settings.DEFAULT_SEED)
        batch, _ = spec.family.as_batch(data)
        full = self.estimation.mlqe(batch, spec.family, q, multistart=multistart)
        return self.__calibrate(batch, spec, q, full, B, seed, multistart)

    def select_q(
        self, data, spec: HypothesisSpec, grid: list[float] | None = None
    ) -> QSelection:
        """argmin over the grid of mean(psi^2) / mean(psi')^2 at theta_hat_q.

        The objective is summed over the tested coordinates; ties go to the
        larger q.
        """
        grid = sorted(self._resolve(grid, settings.Q_GRID))
        if not grid:
            raise DomainException("q grid must not be empty")
        for q in grid:
            if not settings.Q_FLOOR <= q <= 1.0:
                raise DomainException(
                    f"q grid values must lie in [{settings.Q_FLOOR}, 1], got {q}"
                )
        batch, _ = spec.family.as_batch(data)
        curve, excluded = [], []
        for q in grid:
            try:
                fit = self.estimation.mlqe(batch, spec.family, q)
            except EstimationException as err:
                logger.warning(f"q={q:g} excluded from selection: {err}")
                excluded.append(q)
                continue
            psi = lq.psi_q(batch, fit.theta, spec.family, q)
            psi_prime = lq.psi_q_prime(batch, fit.theta, spec.family, q)
            objective = 0.0
            for j in range(spec.r):
                objective += float(
                    np.mean(psi[:, j] ** 2) / np.mean(psi_prime[:, j, j]) ** 2
                )
            curve.append(QCurvePoint(q=q, objective=objective, theta_hat=fit.theta_hat))
        if not curve:
            raise SelectionException("every q on the grid failed to fit")
        best = min(point.objective for point in curve)
        tied = [
            point.q
            for point in curve
            if point.objective <= best * (1.0 + TIE_TOLERANCE) + TIE_TOLERANCE
        ]
        q_hat = max(max(tied), settings.Q_FLOOR)
        logger.info(f"selected q={q_hat:g} over {len(curve)} grid points")
        return QSelection(q_hat=q_hat, curve=curve, excluded=excluded)

    def lqlr_test(
        self,
        data,
        spec: HypothesisSpec,
        q: float | str | None = ADAPTIVE,
        B: int | None = None,
        seed: int | None = None,
        grid: list[float] | None = None,
        multistart: bool | None = None,
    ) -> TestResult:
        """Full LqLR test: optional q selection, D_q, bootstrap calibration.

        :param q: fixed q, or "adaptive" (or None) to select it on the data
        :return: TestResult with p = (1 + #{draw >= observed}) / (B + 1)
        """
        B = self._resolve(B, settings.BOOTSTRAP_SIZE)
        seed = self._resolve(seed, settings.DEFAULT_SEED)
        batch, _ = spec.family.as_batch(data)
        selection = None
        if q is None or q == ADAPTIVE:
            selection = self.select_q(batch, spec, grid)
            q = selection.q_hat
        q = lq.check_q(float(q))

        statistic, d_q, full = self.observed(batch, spec, q, multistart)
        calibration = self.__calibrate(batch, spec, q, full, B, seed, multistart)
        p_value = StatsUtils.exceedance_p_value(calibration.bootstrap_draws, statistic)
        result = TestResult(
            statistic=statistic,
            critical_value=calibration.critical_value,
            p_value=p_value,
            reject=p_value <= spec.alpha,
            q_used=q,
            method=TestMethod.Lqlr,
            alternative=spec.alternative,
            alpha=spec.alpha,
            n=int(batch.shape[0]),
            seed=seed,
            bootstrap_meta=calibration.meta,
            d_q=d_q,
            q_selection=selection,
        )
        logger.info(
            f"LqLR q={q:g} D_q={d_q:.6g} critical={calibration.critical_value:.6g} "
            f"p={p_value:.4g} reject={result.reject}"
        )
        return result

    def oracle_critical_value(
        self,
        model: GrossErrorModel,
        spec: HypothesisSpec,
        q: float,
        n: int,
        M: int,
        seed: int,
    ) -> float:
        """(1 - alpha) quantile of the statistic simulated from a known null model."""

        def replicate(i: int) -> float | None:
            sample = model.sample(n, SeedUtils.derive(seed, "oracle", i))
            try:
                return self.observed(sample, spec, q)[0]
            except EstimationException:
                return None

        draws = [d for d in self.run_replicates(replicate, range(M)) if d is not None]
        if len(draws) < M * (1.0 - settings.SIM_CELL_FAILURE_LIMIT):
            raise BootstrapException(f"only {len(draws)} of {M} oracle draws succeeded")
        return StatsUtils.upper_quantile(draws, spec.alpha)
