"""Gross error models h = (1 - eps) f(.; theta_f) + eps g.

Normal contaminations are parameterised by their VARIANCE: phi(x; m, 50)
means a normal with mean m and variance 50, standard deviation sqrt(50).
A point mass at m is represented by a normal with variance 1e-4.
"""

import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import stats

from app.core.family import MultivariateNormalKnownCovariance, ParametricFamily
from app.schemas.exception import DomainException
from app.schemas.types import ContaminationKind
from app.utils.seed import SeedLike, SeedUtils

# Variance used for the point-mass stand-in
POINT_MASS_VARIANCE = 1e-4


class NormalContamination(BaseModel):
    """Univariate normal contamination g = phi(.; mean, variance)."""

    model_config = ConfigDict(frozen=True)

    kind: ContaminationKind = ContaminationKind.Normal
    # Centre of g
    mean: float = 0.0
    # Variance of g
    variance: float = Field(default=1.0, gt=0)

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    @property
    def dim_x(self) -> int:
        return 1

    def log_density(self, x) -> np.ndarray:
        return stats.norm.logpdf(np.asarray(x, dtype=float), self.mean, self.sd)

    def density(self, x) -> np.ndarray:
        return np.exp(self.log_density(x))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(self.mean, self.sd, size=n)

    def is_symmetric_about(self, centre, tol: float = 1e-12) -> bool:
        return abs(self.mean - float(np.ravel(centre)[0])) <= tol

    def scales(self) -> list[float]:
        return [self.sd]

    @classmethod
    def point_mass(cls, location: float) -> "NormalContamination":
        return cls(
            kind=ContaminationKind.PointMass,
            mean=location,
            variance=POINT_MASS_VARIANCE,
        )


class MultivariateNormalContamination(BaseModel):
    """Multivariate normal contamination N(mean, cov)."""

    model_config = ConfigDict(frozen=True)

    kind: ContaminationKind = ContaminationKind.Normal
    mean: tuple[float, ...]
    cov: tuple[tuple[float, ...], ...]

    @field_validator("cov")
    @classmethod
    def cov_validator(cls, v):
        arr = np.asarray(v, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("cov must be a square matrix")
        return v

    @property
    def dim_x(self) -> int:
        return len(self.mean)

    def log_density(self, x) -> np.ndarray:
        values = stats.multivariate_normal.logpdf(
            np.asarray(x, dtype=float), mean=np.asarray(self.mean), cov=np.asarray(self.cov)
        )
        # scipy squeezes single rows to a scalar
        return np.atleast_1d(values)

    def density(self, x) -> np.ndarray:
        return np.exp(self.log_density(x))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        chol = np.linalg.cholesky(np.asarray(self.cov, dtype=float))
        return np.asarray(self.mean) + rng.standard_normal((n, self.dim_x)) @ chol.T

    def is_symmetric_about(self, centre, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(np.asarray(self.mean) - np.ravel(centre)) <= tol))

    def scales(self) -> list[float]:
        return [float(s) for s in np.sqrt(np.diag(np.asarray(self.cov, dtype=float)))]

    @classmethod
    def scaled(
        cls, fam: MultivariateNormalKnownCovariance, mean, factor: float
    ) -> "MultivariateNormalContamination":
        """g = N(mean, factor * Sigma_f)."""
        cov = factor * fam.cov
        return cls(
            mean=tuple(float(m) for m in np.ravel(mean)),
            cov=tuple(tuple(float(c) for c in row) for row in cov),
        )


Contamination = NormalContamination | MultivariateNormalContamination


class GrossErrorModel:
    """h(x) = (1 - eps) f(x; theta_f) + eps g(x)."""

    def __init__(
        self,
        family: ParametricFamily,
        theta_f,
        contamination: Contamination,
        epsilon: float,
    ):
        if not 0.0 <= epsilon < 1.0:
            raise DomainException(f"epsilon must lie in [0, 1), got {epsilon}")
        if contamination.dim_x != family.dim_x:
            raise DomainException("contamination and family disagree on dimension")
        self.family = family
        self.theta_f = family.check_theta(theta_f)
        self.contamination = contamination
        self.epsilon = float(epsilon)

    @property
    def dim_x(self) -> int:
        return self.family.dim_x

    def with_epsilon(self, epsilon: float) -> "GrossErrorModel":
        return GrossErrorModel(self.family, self.theta_f, self.contamination, epsilon)

    def with_theta(self, theta_f) -> "GrossErrorModel":
        return GrossErrorModel(self.family, theta_f, self.contamination, self.epsilon)

    def density(self, x):
        batch, single = self.family.as_batch(x)
        values = (1.0 - self.epsilon) * np.exp(
            self.family.log_density(batch, self.theta_f)
        )
        if self.epsilon > 0:
            values = values + self.epsilon * self.contamination.density(batch)
        return float(values[0]) if single else values

    def sample(
        self, n: int, seed: SeedLike, return_labels: bool = False
    ) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
        """Draws n points; label True marks a draw from g."""
        if n < 1:
            raise DomainException(f"n must be at least 1, got {n}")
        rng = SeedUtils.generator(seed)
        labels = rng.random(n) < self.epsilon
        clean = self.family.sample(n, self.theta_f, rng)
        dirty = self.contamination.sample(n, rng)
        mask = labels if clean.ndim == 1 else labels[:, None]
        data = np.where(mask, dirty, clean)
        return (data, labels) if return_labels else data

    def is_symmetric(self) -> bool:
        """Both components symmetric about the location of f."""
        centre = [self.theta_f[c] for c in sorted(self.family.location_coords)]
        return self.epsilon == 0 or self.contamination.is_symmetric_about(centre)

    def component_scales(self) -> list[float]:
        scales = self.family.scales(self.theta_f)
        if self.epsilon > 0:
            scales = scales + self.contamination.scales()
        return scales

    def __repr__(self) -> str:
        return (
            f"GrossErrorModel({self.family!r}, theta_f={self.theta_f.tolist()}, "
            f"g={self.contamination!r}, eps={self.epsilon:g})"
        )


def mixture_density(model: GrossErrorModel, x):
    """(1 - eps) f(x; theta_f) + eps g(x)."""
    return model.density(x)


def sample_mixture(model: GrossErrorModel, n: int, seed: SeedLike) -> np.ndarray:
    """n draws from h, deterministic given the seed."""
    return model.sample(n, seed)
