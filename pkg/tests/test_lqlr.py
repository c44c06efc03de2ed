import numpy as np
import pytest
from scipy import stats

from app.chain.estimation import EstimationChain
from app.chain.lqlr import ADAPTIVE, LqlrChain
from app.core import datasets
from app.core.config import settings
from app.core.family import (
    MultivariateNormalKnownCovariance,
    NormalKnownVariance,
    NormalLocationScale,
)
from app.core.mixture import GrossErrorModel, NormalContamination
from app.schemas.estimation import EstimationResult
from app.schemas.exception import DomainException
from app.schemas.hypothesis import HypothesisSpec
from app.schemas.types import Alternative, TestMethod


@pytest.fixture(scope="module")
def chain():
    return LqlrChain(parallel=False)


@pytest.fixture
def sleep():
    return np.asarray(datasets.sleep_differences())


def hypothesis(fam=None, theta0=0.0, alternative="two-sided", alpha=0.05):
    return HypothesisSpec(
        family=fam or NormalLocationScale(),
        theta0=[theta0] if np.isscalar(theta0) else list(theta0),
        alternative=alternative,
        alpha=alpha,
    )


class TestStatistic:
    @pytest.mark.parametrize("seed", range(100))
    def test_classical_reduction(self, chain, seed):
        x = np.random.default_rng(seed).normal(0.1, 1.0, 30)
        spec = hypothesis(NormalKnownVariance(), theta0=0.2)
        expected = x.size * (x.mean() - 0.2) ** 2
        assert chain.lqlr_statistic(x, spec, 1.0) == pytest.approx(
            expected, rel=1e-8, abs=1e-10
        )

    def test_location_scale_reduction(self, chain):
        x = np.random.default_rng(3).normal(0.4, 2.0, 50)
        spec = hypothesis(theta0=0.0)
        expected = x.size * np.log(np.mean(x**2) / x.var())
        assert chain.lqlr_statistic(x, spec, 1.0) == pytest.approx(expected, rel=1e-7)

    def test_zero_at_the_estimate(self, chain):
        x = np.random.default_rng(4).normal(size=25)
        spec = hypothesis(NormalKnownVariance(), theta0=float(x.mean()))
        assert chain.lqlr_statistic(x, spec, 1.0) == pytest.approx(0.0, abs=1e-10)

    def test_gap_clamped(self):
        full = EstimationResult(theta_hat=[0.0], lq_likelihood=-10.0)
        null = EstimationResult(theta_hat=[0.0], lq_likelihood=-9.0)
        assert LqlrChain.gap(full, null) == 0.0

    @pytest.mark.parametrize(
        "alternative, theta_hat, expected",
        [
            ("greater", 1.0, 2.0),
            ("greater", -1.0, -2.0),
            ("less", -1.0, 2.0),
            ("less", 1.0, -2.0),
            ("two-sided", -1.0, 4.0),
        ],
    )
    def test_oriented(self, alternative, theta_hat, expected):
        spec = hypothesis(NormalKnownVariance(), alternative=alternative)
        full = EstimationResult(theta_hat=[theta_hat], lq_likelihood=0.0)
        assert LqlrChain.oriented(spec, 4.0, full) == pytest.approx(expected)

    def test_multivariate_block(self, chain):
        fam = MultivariateNormalKnownCovariance(np.eye(3))
        x = np.random.default_rng(5).normal(size=(40, 3))
        spec = hypothesis(fam, theta0=[0.0, 0.0])
        expected = x.shape[0] * float(np.sum(x.mean(axis=0)[:2] ** 2))
        assert chain.lqlr_statistic(x, spec, 1.0) == pytest.approx(expected, rel=1e-8)

    @pytest.mark.parametrize("q", [0.7, 0.9])
    def test_location_invariance(self, chain, q):
        x = np.random.default_rng(13).normal(0.3, 1.5, 40)
        base = chain.lqlr_statistic(x, hypothesis(theta0=0.0), q)
        moved = chain.lqlr_statistic(x + 4.25, hypothesis(theta0=4.25), q)
        assert moved == pytest.approx(base, abs=1e-8)

    def test_far_outlier_barely_moves_statistic(self, chain):
        x = np.random.default_rng(14).normal(1.0, 1.0, 60)
        x[0] = 3.0
        far = x.copy()
        far[0] = 1e6
        robust = chain.lqlr_statistic(x, hypothesis(), 0.6)
        assert chain.lqlr_statistic(far, hypothesis(), 0.6) == pytest.approx(robust, rel=0.1)
        classical = chain.lqlr_statistic(x, hypothesis(NormalKnownVariance()), 1.0)
        assert chain.lqlr_statistic(far, hypothesis(NormalKnownVariance()), 1.0) > 100 * classical

    def test_sleep_small_q_null_fit(self, chain, sleep):
        full, null = chain.fit_pair(sleep, hypothesis(), 0.5)
        assert null.theta_hat[0] == 0.0
        assert null.theta_hat[1] > 0.5
        assert null.lq_likelihood <= full.lq_likelihood + 1e-9
        d_q = chain.lqlr_statistic(sleep, hypothesis(), 0.5)
        assert np.isfinite(d_q)
        assert d_q >= 0.0


class TestHypothesisSpec:
    def test_one_sided_needs_single_coordinate(self):
        fam = MultivariateNormalKnownCovariance(np.eye(2))
        with pytest.raises(ValueError):
            hypothesis(fam, theta0=[0.0, 0.0], alternative="greater")

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.5])
    def test_alpha(self, alpha):
        with pytest.raises(ValueError):
            hypothesis(alpha=alpha)

    def test_too_many_coordinates(self):
        with pytest.raises(ValueError):
            hypothesis(NormalKnownVariance(), theta0=[0.0, 1.0])

    def test_alternative_spellings(self):
        assert hypothesis(alternative="one_sided_greater").alternative == Alternative.Greater


class TestBootstrap:
    def test_shift_moves_estimate_to_null(self, chain):
        x = np.random.default_rng(6).normal(1.0, 1.0, 30)
        spec = hypothesis(NormalKnownVariance(), theta0=0.0)
        shifted = chain.shift_to_null(x, spec, [x.mean()])
        assert shifted.mean() == pytest.approx(0.0, abs=1e-12)

    def test_reproducible(self, chain, sleep):
        spec = hypothesis(alternative="greater")
        first = chain.bootstrap_critical_value(sleep, spec, 0.85, B=100, seed=17)
        second = chain.bootstrap_critical_value(sleep, spec, 0.85, B=100, seed=17)
        other = chain.bootstrap_critical_value(sleep, spec, 0.85, B=100, seed=18)
        assert first.bootstrap_draws == second.bootstrap_draws
        assert first.critical_value == second.critical_value
        assert first.bootstrap_draws != other.bootstrap_draws
        assert first.meta.B == 100
        assert len(first.bootstrap_draws) == 100

    def test_critical_value_is_upper_quantile(self, chain, sleep):
        result = chain.bootstrap_critical_value(sleep, hypothesis(), 0.9, B=100, seed=1)
        assert result.critical_value == pytest.approx(
            np.quantile(result.bootstrap_draws, 0.95)
        )

    def test_minimum_bootstrap_size(self, chain, sleep):
        with pytest.raises(DomainException):
            chain.bootstrap_critical_value(sleep, hypothesis(), 0.9, B=50, seed=1)

    def test_shift_leaves_scale_alone(self, chain):
        x = np.random.default_rng(15).normal(1.0, 2.0, 30)
        spec = hypothesis(theta0=[0.0, 1.0])
        shifted = chain.shift_to_null(x, spec, [1.2, 2.0])
        assert shifted == pytest.approx(x - 1.2)

    def test_location_and_scale_null(self, chain):
        x = np.random.default_rng(16).normal(0.0, 1.0, 30)
        result = chain.lqlr_test(x, hypothesis(theta0=[0.0, 1.0]), q=0.9, B=100, seed=1)
        assert result.d_q >= 0.0
        assert 1 / 101 <= result.p_value <= 1.0
        assert result.bootstrap_meta.B == 100

    @pytest.mark.slow
    def test_chi_square_critical_value(self, chain):
        x = np.random.default_rng(20).normal(size=200)
        spec = hypothesis(NormalKnownVariance(), theta0=0.0)
        result = chain.bootstrap_critical_value(x, spec, 1.0, B=4000, seed=20)
        assert result.critical_value == pytest.approx(stats.chi2.ppf(0.95, 1), abs=0.4)

    @pytest.mark.slow
    def test_oracle_critical_value(self, chain):
        fam = NormalKnownVariance()
        model = GrossErrorModel(fam, [0.0], NormalContamination(variance=10.0), 0.0)
        spec = hypothesis(fam, theta0=0.0)
        value = chain.oracle_critical_value(model, spec, 1.0, n=50, M=4000, seed=3)
        assert value == pytest.approx(stats.chi2.ppf(0.95, 1), abs=0.4)


class TestSelectQ:
    def test_singleton_grid(self, chain, sleep):
        assert chain.select_q(sleep, hypothesis(), [0.8]).q_hat == 0.8

    def test_sleep_prefers_robust_q(self, chain, sleep):
        selection = chain.select_q(sleep, hypothesis())
        assert selection.q_hat < 1.0
        assert len(selection.curve) == 11
        assert selection.q_hat == min(selection.curve, key=lambda p: p.objective).q

    def test_never_below_floor(self, chain):
        x = np.random.default_rng(9).standard_t(1, size=60)
        assert chain.select_q(x, hypothesis()).q_hat >= 0.5

    @pytest.mark.parametrize("grid", [[], [0.3, 0.8], [0.9, 1.1]])
    def test_invalid_grid(self, chain, sleep, grid):
        with pytest.raises(DomainException):
            chain.select_q(sleep, hypothesis(), grid)

    def test_clean_data_prefers_large_q(self, chain):
        x = np.random.default_rng(10).normal(size=2000)
        assert chain.select_q(x, hypothesis()).q_hat >= 0.85


class TestLqlrTest:
    def test_fixed_q(self, chain, sleep):
        result = chain.lqlr_test(
            sleep, hypothesis(alternative="greater"), q=0.85, B=200, seed=5
        )
        assert result.method == TestMethod.Lqlr
        assert result.q_used == 0.85
        assert result.q_selection is None
        assert 1 / 201 <= result.p_value <= 1.0
        assert result.reject == (result.p_value <= 0.05)
        assert result.statistic == pytest.approx(np.sqrt(result.d_q))

    def test_adaptive(self, chain, sleep):
        result = chain.lqlr_test(sleep, hypothesis(), q=ADAPTIVE, B=100, seed=5)
        assert result.q_selection is not None
        assert result.q_used == result.q_selection.q_hat

    def test_reproducible(self, chain, sleep):
        spec = hypothesis(alternative="greater")
        first = chain.lqlr_test(sleep, spec, q=0.85, B=100, seed=8)
        second = chain.lqlr_test(sleep, spec, q=0.85, B=100, seed=8)
        assert first.model_dump() == second.model_dump()

    def test_output_keys(self, chain, sleep):
        result = chain.lqlr_test(sleep, hypothesis(), q=0.9, B=100, seed=2)
        assert set(result.to_output()) == {
            "statistic", "q", "critical_value", "p_value", "reject", "method", "seed", "n",
        }

    def test_self_centred_null(self, chain):
        x = np.random.default_rng(12).normal(size=25)
        fam = NormalKnownVariance()
        centre = float(EstimationChain().mlqe(x, fam, 0.8).theta_hat[0])
        result = chain.lqlr_test(x, hypothesis(fam, theta0=centre), q=0.8, B=100, seed=3)
        assert result.d_q == pytest.approx(0.0, abs=1e-8)
        assert result.p_value > 0.5
        assert not result.reject

    def test_sleep_small_q(self, chain, sleep):
        result = chain.lqlr_test(sleep, hypothesis(), q=0.5, B=100, seed=4)
        assert np.isfinite(result.statistic)
        assert 1 / 101 <= result.p_value <= 1.0

    def test_sleep_outlier_bootstrap(self, chain):
        data = datasets.sleep_differences(8.0)
        result = chain.lqlr_test(data, hypothesis(alternative="greater"), q=0.85, B=200)
        assert result.seed == settings.DEFAULT_SEED
        assert len(result.bootstrap_meta.theta_hat_centre) == 2

    @pytest.mark.slow
    def test_sleep_rejects_for_every_outlier(self, chain):
        spec = hypothesis(alternative="greater")
        p_values = []
        for delta9 in (4.6, 8.0, 12.0, 16.0):
            data = datasets.sleep_differences(delta9)
            result = chain.lqlr_test(data, spec, q=0.85, B=2000)
            assert result.reject
            p_values.append(result.p_value)
        assert all(b <= a + 1e-12 for a, b in zip(p_values, p_values[1:]))
