import numpy as np
import pytest

from app.chain import estimation
from app.chain.estimation import EstimationChain
from app.core import lq
from app.core.config import settings
from app.core.family import (
    MultivariateNormalKnownCovariance,
    NormalKnownVariance,
    NormalLocationScale,
)
from app.schemas.exception import (
    ConvergenceException,
    DomainException,
    ScaleCollapseException,
)


@pytest.fixture(scope="module")
def chain():
    return EstimationChain(parallel=False)


def contaminated(seed: int, n: int = 40, eps: float = 0.1, shift: float = 8.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 1.0, n)
    k = int(round(eps * n))
    x[:k] = rng.normal(shift, 1.0, k)
    return x


class TestMlqe:
    def test_q_one_known_variance_is_mean(self, chain):
        x = contaminated(1)
        result = chain.mlqe(x, NormalKnownVariance(), 1.0)
        assert result.theta_hat == pytest.approx([x.mean()], abs=1e-10)
        assert result.converged

    def test_q_one_location_scale_is_mle(self, chain):
        x = contaminated(2)
        result = chain.mlqe(x, NormalLocationScale(), 1.0)
        assert result.theta_hat == pytest.approx([x.mean(), x.std()], abs=1e-7)

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_brute_force_grid(self, chain, seed):
        fam = NormalKnownVariance()
        x = contaminated(seed, eps=0.15)
        q = 0.6
        grid = np.linspace(-3.0, 10.0, 13_001)
        log_f = -0.5 * (x[None, :] - grid[:, None]) ** 2 - 0.5 * np.log(2 * np.pi)
        best = grid[int(np.argmax(lq.lq_of_log(log_f, q).sum(axis=1)))]
        result = chain.mlqe(x, fam, q)
        assert result.theta_hat[0] == pytest.approx(best, abs=2e-3)

    @pytest.mark.parametrize("q", [0.6, 0.8, 0.95, 1.0])
    def test_trace_never_decreases(self, chain, q):
        result = chain.mlqe(contaminated(5), NormalLocationScale(), q)
        trace = np.asarray(result.trace)
        assert np.all(np.diff(trace) >= -1e-9 * np.maximum(1.0, np.abs(trace[:-1])))

    def test_downweights_outliers(self, chain):
        x = contaminated(3, eps=0.1, shift=10.0)
        robust = chain.mlqe(x, NormalLocationScale(), 0.7)
        assert abs(robust.theta_hat[0]) < abs(x.mean())
        weights = np.asarray(robust.weights)
        assert weights[:4].max() < weights[4:].min()

    @pytest.mark.parametrize("q", [0.7, 0.9])
    def test_location_equivariance(self, chain, q):
        x = contaminated(4)
        base = chain.mlqe(x, NormalLocationScale(), q)
        moved = chain.mlqe(x + 3.5, NormalLocationScale(), q)
        assert moved.theta_hat[0] == pytest.approx(base.theta_hat[0] + 3.5, abs=1e-6)
        assert moved.theta_hat[1] == pytest.approx(base.theta_hat[1], abs=1e-6)

    def test_score_vanishes_at_estimate(self, chain):
        x = contaminated(6)
        result = chain.mlqe(x, NormalLocationScale(), 0.8)
        score = chain.score_sum(x, result.theta, NormalLocationScale(), 0.8)
        assert score.n == x.size
        assert score.norm < 1e-5

    def test_deterministic(self, chain):
        x = contaminated(7)
        first = chain.mlqe(x, NormalLocationScale(), 0.65)
        second = chain.mlqe(x, NormalLocationScale(), 0.65)
        assert first.theta_hat == second.theta_hat
        assert first.starts == 3

    def test_multivariate(self, chain):
        fam = MultivariateNormalKnownCovariance(np.eye(2))
        rng = np.random.default_rng(8)
        x = rng.normal(size=(100, 2)) + np.array([1.0, -1.0])
        result = chain.mlqe(x, fam, 1.0)
        assert result.theta_hat == pytest.approx(x.mean(axis=0), abs=1e-8)

    def test_small_sample_grid(self, chain):
        x = np.array([0.0, 0.1, -0.1, 0.05, 8.0])
        grid = np.arange(-2.0, 9.0 + 5e-5, 1e-4)
        log_f = -0.5 * (x[None, :] - grid[:, None]) ** 2 - 0.5 * np.log(2 * np.pi)
        best = grid[int(np.argmax(lq.lq_of_log(log_f, 0.5).sum(axis=1)))]
        result = chain.mlqe(x, NormalKnownVariance(), 0.5)
        assert result.theta_hat[0] == pytest.approx(best, abs=1e-3)
        assert abs(result.theta_hat[0]) < 0.1


class TestConstrainedMlqe:
    def test_fixed_coordinate_held(self, chain):
        x = contaminated(9)
        result = chain.mlqe_constrained(x, NormalLocationScale(), 1.0, {0: 0.0})
        assert result.theta_hat[0] == 0.0
        assert result.theta_hat[1] == pytest.approx(np.sqrt(np.mean(x**2)), abs=1e-7)
        assert result.constraint_mask == [0]

    def test_everything_fixed(self, chain):
        x = contaminated(10)
        result = chain.mlqe_constrained(x, NormalKnownVariance(), 0.8, {0: 0.5})
        assert result.iterations == 0
        assert result.theta_hat == [0.5]
        assert result.lq_likelihood == pytest.approx(
            lq.lq_likelihood(x, [0.5], NormalKnownVariance(), 0.8)
        )

    def test_unknown_coordinate(self, chain):
        with pytest.raises(DomainException):
            chain.mlqe_constrained(contaminated(11), NormalKnownVariance(), 0.8, {3: 0.0})

    def test_constrained_below_unconstrained(self, chain):
        x = contaminated(12)
        full = chain.mlqe(x, NormalLocationScale(), 0.8)
        null = chain.mlqe_constrained(x, NormalLocationScale(), 0.8, {0: 1.0})
        assert null.lq_likelihood <= full.lq_likelihood + 1e-9

    def test_constrained_scale_grid(self, chain):
        x = contaminated(15)
        grid = np.arange(0.05, 8.0, 1e-4)
        z = x[None, :] / grid[:, None]
        log_f = -0.5 * z**2 - np.log(grid)[:, None] - 0.5 * np.log(2 * np.pi)
        best = grid[int(np.argmax(lq.lq_of_log(log_f, 0.7).sum(axis=1)))]
        result = chain.mlqe_constrained(x, NormalLocationScale(), 0.7, {0: 0.0})
        assert result.theta_hat[0] == 0.0
        assert result.theta_hat[1] == pytest.approx(best, abs=1e-3)

    def test_collapsed_start_recovers(self, chain):
        rng = np.random.default_rng(16)
        x = np.concatenate([rng.normal(0.0, 1.0, 40), np.full(5, 2.5)])
        # a narrow start on the repeated value runs into the scale floor
        result = chain.mlqe(x, NormalLocationScale(), 0.7, init=[2.5, 0.05], multistart=False)
        assert result.starts == 2
        assert result.theta_hat[1] > 0.5
        assert abs(result.theta_hat[0]) < 1.0


class TestMlqeErrors:
    def test_identical_observations(self, chain):
        with pytest.raises(ScaleCollapseException):
            chain.mlqe(np.full(10, 2.0), NormalLocationScale(), 0.8)

    @pytest.mark.parametrize(
        "data", [[1.0, 2.0], [1.0, np.nan, 2.0, 3.0], [1.0, np.inf, 0.0, 2.0]]
    )
    def test_bad_data(self, chain, data):
        with pytest.raises(DomainException):
            chain.mlqe(data, NormalLocationScale(), 0.8)

    def test_bad_q(self, chain):
        with pytest.raises(DomainException):
            chain.mlqe(contaminated(13), NormalLocationScale(), 1.2)

    def test_iteration_limit_from_settings(self, chain, monkeypatch):
        monkeypatch.setattr(settings, "MLQE_MAX_ITER", 1)
        with pytest.raises(ConvergenceException):
            chain.mlqe(contaminated(17), NormalLocationScale(), 0.6)

    def test_tolerance_from_settings(self, chain, monkeypatch):
        x = contaminated(18)
        tight = chain.mlqe(x, NormalLocationScale(), 0.8)
        monkeypatch.setattr(settings, "MLQE_TOL", 1e-2)
        loose = chain.mlqe(x, NormalLocationScale(), 0.8)
        assert loose.iterations < tight.iterations

    def test_stalled_iterate_not_converged(self, chain, monkeypatch):
        monkeypatch.setattr(estimation, "MAX_HALVINGS", 0)
        result = chain.mlqe(contaminated(19), NormalKnownVariance(), 0.8, init=[3.0])
        assert result.converged is False
        assert result.theta_hat == [3.0]
        assert result.score_norm > 0
