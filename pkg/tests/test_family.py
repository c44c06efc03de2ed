import numpy as np
import pytest
from scipy import stats

from app.core.family import (
    MultivariateNormalKnownCovariance,
    NormalKnownVariance,
    NormalLocationScale,
)
from app.schemas.exception import DomainException, ScaleCollapseException


class TestNormalFamilies:
    @pytest.mark.parametrize(
        "fam, theta, loc, scale",
        [
            (NormalKnownVariance(2.0), [1.0], 1.0, 2.0),
            (NormalLocationScale(), [-0.5, 0.7], -0.5, 0.7),
        ],
    )
    def test_log_density_matches_scipy(self, fam, theta, loc, scale):
        x = np.linspace(-4, 4, 17)
        assert fam.log_density(x, theta) == pytest.approx(
            stats.norm.logpdf(x, loc, scale)
        )

    def test_unweighted_fit_is_mle(self):
        x = np.array([0.3, 1.1, -0.4, 2.2, 0.9])
        theta = NormalLocationScale().closed_form_mle(x)
        assert theta == pytest.approx([x.mean(), x.std()])

    def test_fixed_location(self):
        x = np.array([0.3, 1.1, -0.4, 2.2, 0.9])
        theta = NormalLocationScale().weighted_fit(x, np.ones(5), {0: 0.0})
        assert theta == pytest.approx([0.0, np.sqrt(np.mean(x**2))])

    def test_weights_pull_the_mean(self):
        x = np.array([0.0, 0.0, 10.0])
        theta = NormalKnownVariance().weighted_fit(x, np.array([1.0, 1.0, 0.0]), {})
        assert theta == pytest.approx([0.0])

    def test_scale_collapse(self):
        with pytest.raises(ScaleCollapseException):
            NormalLocationScale().initial_theta(np.full(6, 3.0))

    def test_initial_theta_falls_back_to_std(self):
        x = np.array([1.0, 1.0, 1.0, 1.0, 5.0])
        mu, sigma = NormalLocationScale().initial_theta(x)
        assert mu == 1.0
        assert sigma == pytest.approx(np.std(x))

    @pytest.mark.parametrize("theta", [[0.0], [0.0, 1.0, 2.0], [0.0, -1.0]])
    def test_bad_theta(self, theta):
        with pytest.raises(DomainException):
            NormalLocationScale().check_theta(theta)

    def test_bad_sigma(self):
        with pytest.raises(DomainException):
            NormalKnownVariance(0.0)

    def test_shift_only_moves_location(self):
        fam = NormalLocationScale()
        x = np.array([1.0, 2.0])
        assert fam.shift(x, 0, 0.5) == pytest.approx([1.5, 2.5])
        with pytest.raises(DomainException):
            fam.shift(x, 1, 0.5)

    def test_density_derivatives(self):
        fam = NormalLocationScale()
        theta = [0.2, 1.4]
        x = np.array([-1.0, 0.3, 2.0])
        h = 1e-6
        numeric = (
            fam.density(x, [theta[0] + h, theta[1]]) - fam.density(x, [theta[0] - h, theta[1]])
        ) / (2 * h)
        assert fam.density_grad(x, theta)[:, 0] == pytest.approx(numeric, rel=1e-6)
        assert fam.density_hess(x, theta).shape == (3, 2, 2)


class TestMultivariateNormal:
    def test_log_density_matches_scipy(self):
        cov = np.array([[1.0, 0.4], [0.4, 2.0]])
        fam = MultivariateNormalKnownCovariance(cov)
        x = np.array([[0.0, 0.0], [1.0, -1.0], [2.0, 0.5]])
        assert fam.log_density(x, [0.1, 0.2]) == pytest.approx(
            stats.multivariate_normal(mean=[0.1, 0.2], cov=cov).logpdf(x)
        )

    def test_constrained_fit_uses_correlation(self):
        cov = np.array([[1.0, 0.5], [0.5, 1.0]])
        fam = MultivariateNormalKnownCovariance(cov)
        x = np.array([[1.0, 1.0], [1.0, 1.0]])
        theta = fam.weighted_fit(x, np.ones(2), {0: 0.0})
        # conditional mean of mu2 given mu1 = 0
        assert theta == pytest.approx([0.0, 0.5])

    def test_identity_constrained_fit(self):
        fam = MultivariateNormalKnownCovariance(np.eye(3))
        x = np.arange(12, dtype=float).reshape(4, 3)
        theta = fam.weighted_fit(x, np.ones(4), {1: 0.0})
        assert theta == pytest.approx([x[:, 0].mean(), 0.0, x[:, 2].mean()])

    @pytest.mark.parametrize(
        "cov", [[[1.0, 2.0], [2.0, 1.0]], [[1.0, 0.1], [0.2, 1.0]], [[1.0, 0.0, 0.0]]]
    )
    def test_invalid_covariance(self, cov):
        with pytest.raises(DomainException):
            MultivariateNormalKnownCovariance(cov)

    def test_wrong_observation_dimension(self):
        fam = MultivariateNormalKnownCovariance(np.eye(2))
        with pytest.raises(DomainException):
            fam.as_batch([1.0, 2.0, 3.0])

    def test_every_coordinate_is_location(self):
        fam = MultivariateNormalKnownCovariance(np.eye(3))
        assert fam.location_coords == {0: 0, 1: 1, 2: 2}
