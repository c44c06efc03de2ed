import math

import numpy as np
import pytest

from app.core import lq
from app.core.family import (
    MultivariateNormalKnownCovariance,
    NormalKnownVariance,
    NormalLocationScale,
)
from app.schemas.exception import DomainException


class TestLqTransform:
    @pytest.mark.parametrize(
        "u, q, expected",
        [
            (1.0, 0.5, 0.0),
            (1.0, 1.0, 0.0),
            (math.e, 1.0, 1.0),
            (4.0, 0.5, 2.0),
            (0.25, 0.5, -1.0),
            (2.0, 0.9, (2.0**0.1 - 1.0) / 0.1),
        ],
    )
    def test_values(self, u, q, expected):
        assert lq.lq_transform(u, q) == pytest.approx(expected, rel=1e-12, abs=1e-15)

    def test_continuous_at_one(self):
        assert lq.lq_transform(2.0, 1.0 - 1e-9) == pytest.approx(math.log(2.0), rel=1e-6)

    def test_array_shape(self):
        values = lq.lq_transform(np.array([[1.0, 2.0], [3.0, 4.0]]), 0.7)
        assert values.shape == (2, 2)

    @pytest.mark.parametrize("u", [0.0, -1.0, np.nan])
    def test_non_positive_rejected(self, u):
        with pytest.raises(DomainException):
            lq.lq_transform(u, 0.8)

    @pytest.mark.parametrize("q", [0.0, -0.1, 1.5, np.nan])
    def test_q_outside_range(self, q):
        with pytest.raises(DomainException):
            lq.check_q(q)

    @pytest.mark.parametrize(
        "q, expected", [(0.5, -2.0), (0.8, -5.0), (1.0, -math.inf)]
    )
    def test_lower_bound(self, q, expected):
        assert lq.lq_lower_bound(q) == pytest.approx(expected)

    def test_log_floor(self):
        assert lq.lq_of_log(-np.inf, 0.5) == pytest.approx(-2.0)
        assert lq.lq_of_log(-np.inf, 1.0) == lq.LOG_FLOOR

    def test_underflowing_density_stays_finite(self):
        # log f = -1e6 underflows f itself but not L_q
        assert lq.lq_of_log(-1e6, 0.5) == pytest.approx(-2.0)


def _finite_difference(func, theta, h=1e-6):
    theta = np.asarray(theta, dtype=float)
    columns = []
    for j in range(theta.size):
        step = np.zeros_like(theta)
        step[j] = h
        columns.append((func(theta + step) - func(theta - step)) / (2 * h))
    return np.stack(columns, axis=-1)


class TestPsi:
    @pytest.mark.parametrize(
        "fam, theta",
        [
            (NormalKnownVariance(1.5), [0.3]),
            (NormalLocationScale(), [0.3, 1.2]),
            (MultivariateNormalKnownCovariance([[1.0, 0.3], [0.3, 2.0]]), [0.1, -0.2]),
        ],
    )
    @pytest.mark.parametrize("q", [0.6, 0.85, 1.0])
    def test_psi_matches_finite_difference(self, fam, theta, q):
        rng = np.random.default_rng(7)
        x = fam.sample(50, theta, rng)
        numeric = _finite_difference(
            lambda t: lq.lq_of_log(fam.log_density(x, t), q), theta
        )
        assert lq.psi_q(x, theta, fam, q) == pytest.approx(numeric, rel=1e-5, abs=1e-7)

    @pytest.mark.parametrize(
        "fam, theta",
        [
            (NormalKnownVariance(1.0), [0.0]),
            (NormalLocationScale(), [-0.4, 0.8]),
        ],
    )
    @pytest.mark.parametrize("q", [0.7, 1.0])
    def test_psi_prime_matches_finite_difference(self, fam, theta, q):
        rng = np.random.default_rng(11)
        x = fam.sample(40, theta, rng)
        numeric = _finite_difference(lambda t: lq.psi_q(x, t, fam, q), theta)
        assert lq.psi_q_prime(x, theta, fam, q) == pytest.approx(
            numeric, rel=1e-5, abs=1e-6
        )

    def test_psi_at_one_is_score(self):
        fam = NormalLocationScale()
        x = np.array([-1.0, 0.5, 2.0])
        assert lq.psi_q(x, [0.2, 1.3], fam, 1.0) == pytest.approx(
            fam.score(x, [0.2, 1.3])
        )

    def test_single_observation_shapes(self):
        fam = NormalLocationScale()
        assert lq.psi_q(0.5, [0.0, 1.0], fam, 0.8).shape == (2,)
        assert lq.psi_q_prime(0.5, [0.0, 1.0], fam, 0.8).shape == (2, 2)

    def test_lq_likelihood_at_one_is_log_likelihood(self):
        fam = NormalKnownVariance(1.0)
        x = np.array([0.1, -0.3, 1.2, 2.5])
        assert lq.lq_likelihood(x, [0.4], fam, 1.0) == pytest.approx(
            float(np.sum(fam.log_density(x, [0.4])))
        )

    def test_score_sum_zero_at_mean(self):
        fam = NormalKnownVariance(1.0)
        x = np.array([0.1, -0.3, 1.2, 2.5])
        assert lq.score_sum(x, [x.mean()], fam, 1.0) == pytest.approx([0.0], abs=1e-12)

    @pytest.mark.parametrize(
        "fam, theta",
        [(NormalKnownVariance(1.0), [0.0]), (NormalLocationScale(), [0.5, 2.0])],
    )
    @pytest.mark.parametrize("q", [0.5, 0.8, 0.95])
    def test_psi_bounded_below_one(self, fam, theta, q):
        x = np.linspace(-1e3, 1e3, 200_001)
        size = np.abs(lq.psi_q(x, theta, fam, q)).max(axis=1)
        peak = int(np.argmax(size))
        assert np.isfinite(size[peak])
        assert 0 < peak < x.size - 1
        narrow = np.abs(x) <= 50.0
        assert size[narrow].max() == pytest.approx(size[peak])

    def test_psi_unbounded_at_one(self):
        fam = NormalKnownVariance(1.0)
        x = np.linspace(-1e3, 1e3, 200_001)
        size = np.abs(lq.psi_q(x, [0.0], fam, 1.0))[:, 0]
        assert int(np.argmax(size)) in (0, x.size - 1)
        assert size.max() == pytest.approx(1e3)
