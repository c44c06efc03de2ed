import numpy as np
import pytest
from scipy import integrate, stats

from app.core.family import (
    MultivariateNormalKnownCovariance,
    NormalKnownVariance,
    NormalLocationScale,
)
from app.core.mixture import (
    POINT_MASS_VARIANCE,
    GrossErrorModel,
    MultivariateNormalContamination,
    NormalContamination,
    mixture_density,
    sample_mixture,
)
from app.schemas.exception import DomainException
from app.schemas.types import ContaminationKind


class TestGrossErrorModel:
    def test_density(self):
        model = GrossErrorModel(
            NormalKnownVariance(), [0.0], NormalContamination(mean=0.0, variance=10.0), 0.1
        )
        x = np.array([-2.0, 0.0, 3.0])
        expected = 0.9 * stats.norm.pdf(x) + 0.1 * stats.norm.pdf(x, 0.0, np.sqrt(10.0))
        assert mixture_density(model, x) == pytest.approx(expected)

    def test_sampling_is_deterministic(self):
        model = GrossErrorModel(
            NormalLocationScale(), [0.0, 1.0], NormalContamination(variance=50.0), 0.2
        )
        assert np.array_equal(sample_mixture(model, 100, 42), sample_mixture(model, 100, 42))
        assert not np.array_equal(
            sample_mixture(model, 100, 42), sample_mixture(model, 100, 43)
        )

    @pytest.mark.parametrize(
        "model",
        [
            GrossErrorModel(
                NormalKnownVariance(), [0.0], NormalContamination(variance=10.0), 0.1
            ),
            GrossErrorModel(
                NormalLocationScale(),
                [1.0, 2.0],
                NormalContamination(mean=5.0, variance=50.0),
                0.3,
            ),
        ],
    )
    def test_density_integrates_to_one(self, model):
        total, _ = integrate.quad(
            lambda t: mixture_density(model, t), -np.inf, np.inf, epsabs=1e-10
        )
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_contamination_fraction(self):
        model = GrossErrorModel(
            NormalKnownVariance(), [0.0], NormalContamination.point_mass(-5.0), 0.1
        )
        data, labels = model.sample(20_000, 3, return_labels=True)
        assert labels.mean() == pytest.approx(0.1, abs=0.01)
        assert np.all(np.abs(data[labels] + 5.0) < 0.1)

    def test_clean_model_draws_only_f(self):
        model = GrossErrorModel(
            NormalKnownVariance(), [0.0], NormalContamination.point_mass(-5.0), 0.0
        )
        _, labels = model.sample(500, 1, return_labels=True)
        assert not labels.any()

    @pytest.mark.parametrize("epsilon", [-0.1, 1.0, 1.5])
    def test_epsilon_range(self, epsilon):
        with pytest.raises(DomainException):
            GrossErrorModel(NormalKnownVariance(), [0.0], NormalContamination(), epsilon)

    def test_dimension_mismatch(self):
        fam = MultivariateNormalKnownCovariance(np.eye(2))
        with pytest.raises(DomainException):
            GrossErrorModel(fam, [0.0, 0.0], NormalContamination(), 0.1)

    @pytest.mark.parametrize(
        "contamination, expected",
        [
            (NormalContamination(mean=0.0, variance=10.0), True),
            (NormalContamination.point_mass(-5.0), False),
        ],
    )
    def test_symmetry(self, contamination, expected):
        model = GrossErrorModel(NormalKnownVariance(), [0.0], contamination, 0.1)
        assert model.is_symmetric() is expected
        assert model.with_epsilon(0.0).is_symmetric()

    def test_point_mass(self):
        g = NormalContamination.point_mass(2.0)
        assert g.kind == ContaminationKind.PointMass
        assert g.variance == POINT_MASS_VARIANCE

    def test_multivariate_contamination(self):
        fam = MultivariateNormalKnownCovariance(np.diag([1.0, 2.0]))
        g = MultivariateNormalContamination.scaled(fam, [0.0, 0.0], 30.0)
        assert np.asarray(g.cov) == pytest.approx(np.diag([30.0, 60.0]))
        model = GrossErrorModel(fam, [0.0, 0.0], g, 0.05)
        assert model.sample(10, 0).shape == (10, 2)
        assert model.is_symmetric()
        assert model.component_scales() == pytest.approx(
            [1.0, np.sqrt(2.0), np.sqrt(30.0), np.sqrt(60.0)]
        )
