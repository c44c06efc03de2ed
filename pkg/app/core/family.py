"""Parametric density families f(x; theta) with closed-form derivatives.

Every method is vectorised over a batch of observations: univariate
families take shape (n,), the multivariate family takes (n, d). Derivative
methods return (n, p) scores and (n, p, p) Hessians of log f; the density
derivatives f' and f'' are derived from those.
"""

import math
from abc import ABC, abstractmethod
from collections.abc import Mapping

import numpy as np

from app.core.config import settings
from app.schemas.exception import DomainException, ScaleCollapseException

# Consistency constant of the MAD under the normal model
MAD_SCALE = 1.4826


class ParametricFamily(ABC):
    """A density family the estimators and tests are generic over."""

    #: Number of parameters p
    dim_theta: int = 1
    #: Dimension of one observation
    dim_x: int = 1
    #: Parameter names, in coordinate order
    param_names: tuple[str, ...] = ()
    #: Support of one coordinate of x
    support: tuple[float, float] = (-math.inf, math.inf)

    @property
    def name(self) -> str:
        return type(self).__name__

    def as_batch(self, x) -> tuple[np.ndarray, bool]:
        """Returns (batch, was_single) for one observation or a batch."""
        arr = np.asarray(x, dtype=float)
        if self.dim_x == 1:
            if arr.ndim == 0:
                return arr.reshape(1), True
            return arr.reshape(-1), False
        if arr.ndim == 1:
            if arr.shape[0] != self.dim_x:
                raise DomainException(
                    f"{self.name} expects observations of dimension {self.dim_x}"
                )
            return arr.reshape(1, -1), True
        return arr, False

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape[0] != self.dim_theta:
            raise DomainException(
                f"{self.name} has {self.dim_theta} parameters, got {theta.shape[0]}"
            )
        return theta

    @abstractmethod
    def log_density(self, x, theta) -> np.ndarray:
        """log f(x_i; theta) for a batch."""
        pass

    @abstractmethod
    def score(self, x, theta) -> np.ndarray:
        """d/dtheta log f, shape (n, p)."""
        pass

    @abstractmethod
    def log_density_hess(self, x, theta) -> np.ndarray:
        """d^2/dtheta^2 log f, shape (n, p, p)."""
        pass

    def density(self, x, theta):
        batch, single = self.as_batch(x)
        values = np.exp(self.log_density(batch, theta))
        return float(values[0]) if single else values

    def density_grad(self, x, theta) -> np.ndarray:
        """f'_theta = f * score."""
        batch, single = self.as_batch(x)
        values = self.score(batch, theta) * np.exp(self.log_density(batch, theta))[:, None]
        return values[0] if single else values

    def density_hess(self, x, theta) -> np.ndarray:
        """f''_theta = f * (H + s s^T)."""
        batch, single = self.as_batch(x)
        score = self.score(batch, theta)
        f = np.exp(self.log_density(batch, theta))
        values = (
            self.log_density_hess(batch, theta)
            + np.einsum("ni,nj->nij", score, score)
        ) * f[:, None, None]
        return values[0] if single else values

    # ---- location structure, used by shift equivariance and the bootstrap ----

    @property
    def location_coords(self) -> dict[int, int]:
        """Maps location parameter indices to the data column they shift."""
        return {0: 0}

    def shift(self, data: np.ndarray, coord: int, delta: float) -> np.ndarray:
        """Translates the data column tied to a location coordinate."""
        if coord not in self.location_coords:
            raise DomainException(
                f"{self.name}: coordinate {coord} is not a location parameter"
            )
        shifted = np.array(data, dtype=float, copy=True)
        column = self.location_coords[coord]
        if shifted.ndim == 1:
            shifted += delta
        else:
            shifted[:, column] += delta
        return shifted

    # ---- estimation hooks ----

    @abstractmethod
    def weighted_fit(
        self, data: np.ndarray, weights: np.ndarray, fixed: Mapping[int, float]
    ) -> np.ndarray:
        """Closed-form weighted MLE with some coordinates held fixed."""
        pass

    @abstractmethod
    def initial_theta(self, data: np.ndarray) -> np.ndarray:
        """Robust starting point (median, MAD)."""
        pass

    def location_spread(self, data: np.ndarray) -> np.ndarray:
        """Per location coordinate MAD * 1.4826, used for multi-start offsets."""
        batch = np.asarray(data, dtype=float)
        columns = batch.reshape(batch.shape[0], -1)
        med = np.median(columns, axis=0)
        return MAD_SCALE * np.median(np.abs(columns - med), axis=0)

    def closed_form_mle(self, data: np.ndarray) -> np.ndarray:
        """The q = 1 estimate, i.e. the unweighted fit."""
        batch, _ = self.as_batch(data)
        return self.weighted_fit(batch, np.ones(batch.shape[0]), {})

    @abstractmethod
    def sample(self, n: int, theta, rng: np.random.Generator) -> np.ndarray:
        pass

    @abstractmethod
    def scales(self, theta) -> list[float]:
        """Characteristic standard deviations, used to lay out quadrature."""
        pass

    def __repr__(self) -> str:
        return f"{self.name}()"


class NormalKnownVariance(ParametricFamily):
    """N(mu, sigma^2) with sigma fixed; theta = (mu,)."""

    dim_theta = 1
    param_names = ("mu",)

    def __init__(self, sigma: float = 1.0):
        if not sigma > 0:
            raise DomainException(f"sigma must be positive, got {sigma}")
        self._sigma = float(sigma)

    @property
    def sigma(self) -> float:
        return self._sigma

    def log_density(self, x, theta) -> np.ndarray:
        (mu,) = self.check_theta(theta)
        z = (np.asarray(x, dtype=float) - mu) / self._sigma
        return -0.5 * z**2 - math.log(self._sigma) - 0.5 * math.log(2 * math.pi)

    def score(self, x, theta) -> np.ndarray:
        (mu,) = self.check_theta(theta)
        resid = np.asarray(x, dtype=float) - mu
        return (resid / self._sigma**2)[:, None]

    def log_density_hess(self, x, theta) -> np.ndarray:
        n = np.asarray(x).shape[0]
        return np.full((n, 1, 1), -1.0 / self._sigma**2)

    def weighted_fit(self, data, weights, fixed) -> np.ndarray:
        if 0 in fixed:
            return np.array([float(fixed[0])])
        return np.array([np.sum(weights * data) / np.sum(weights)])

    def initial_theta(self, data) -> np.ndarray:
        return np.array([float(np.median(data))])

    def sample(self, n, theta, rng) -> np.ndarray:
        (mu,) = self.check_theta(theta)
        return rng.normal(mu, self._sigma, size=n)

    def scales(self, theta) -> list[float]:
        return [self._sigma]

    def __repr__(self) -> str:
        return f"NormalKnownVariance(sigma={self._sigma:g})"


class NormalLocationScale(ParametricFamily):
    """N(mu, sigma^2) with both unknown; theta = (mu, sigma)."""

    dim_theta = 2
    param_names = ("mu", "sigma")

    def check_theta(self, theta) -> np.ndarray:
        theta = super().check_theta(theta)
        if not theta[1] > 0:
            raise DomainException(f"sigma must be positive, got {theta[1]}")
        return theta

    def log_density(self, x, theta) -> np.ndarray:
        mu, sigma = self.check_theta(theta)
        z = (np.asarray(x, dtype=float) - mu) / sigma
        return -0.5 * z**2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)

    def score(self, x, theta) -> np.ndarray:
        mu, sigma = self.check_theta(theta)
        resid = np.asarray(x, dtype=float) - mu
        return np.column_stack(
            [resid / sigma**2, -1.0 / sigma + resid**2 / sigma**3]
        )

    def log_density_hess(self, x, theta) -> np.ndarray:
        mu, sigma = self.check_theta(theta)
        resid = np.asarray(x, dtype=float) - mu
        hess = np.empty((resid.shape[0], 2, 2))
        hess[:, 0, 0] = -1.0 / sigma**2
        hess[:, 0, 1] = hess[:, 1, 0] = -2.0 * resid / sigma**3
        hess[:, 1, 1] = 1.0 / sigma**2 - 3.0 * resid**2 / sigma**4
        return hess

    def weighted_fit(self, data, weights, fixed) -> np.ndarray:
        total = np.sum(weights)
        mu = float(fixed[0]) if 0 in fixed else float(np.sum(weights * data) / total)
        if 1 in fixed:
            sigma = float(fixed[1])
        else:
            sigma = math.sqrt(float(np.sum(weights * (data - mu) ** 2) / total))
            sigma = max(sigma, settings.SIGMA_FLOOR)
        return np.array([mu, sigma])

    def initial_theta(self, data) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        med = float(np.median(data))
        scale = MAD_SCALE * float(np.median(np.abs(data - med)))
        if scale <= 0:
            # more than half the sample sits on the median
            scale = float(np.std(data))
        if scale <= 0:
            raise ScaleCollapseException(
                "scale collapse: all observations are identical",
                theta=[med, 0.0],
            )
        return np.array([med, scale])

    def sample(self, n, theta, rng) -> np.ndarray:
        mu, sigma = self.check_theta(theta)
        return rng.normal(mu, sigma, size=n)

    def scales(self, theta) -> list[float]:
        return [float(self.check_theta(theta)[1])]

    def __repr__(self) -> str:
        return "NormalLocationScale()"


class MultivariateNormalKnownCovariance(ParametricFamily):
    """N_r(mu, Sigma) with Sigma fixed; theta = mu."""

    param_names: tuple[str, ...]

    def __init__(self, cov):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape[0] != cov.shape[1]:
            raise DomainException("covariance must be square")
        if not np.allclose(cov, cov.T):
            raise DomainException("covariance must be symmetric")
        try:
            self._chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as err:
            raise DomainException("covariance must be positive definite") from err
        self._cov = cov
        self._prec = np.linalg.inv(cov)
        self._log_norm = -0.5 * cov.shape[0] * math.log(2 * math.pi) - float(
            np.sum(np.log(np.diag(self._chol)))
        )
        self.dim_theta = cov.shape[0]
        self.dim_x = cov.shape[0]
        self.param_names = tuple(f"mu{j + 1}" for j in range(cov.shape[0]))

    @property
    def cov(self) -> np.ndarray:
        return self._cov.copy()

    @property
    def location_coords(self) -> dict[int, int]:
        return {j: j for j in range(self.dim_theta)}

    def log_density(self, x, theta) -> np.ndarray:
        mu = self.check_theta(theta)
        resid = np.asarray(x, dtype=float) - mu
        quad = np.einsum("ni,ij,nj->n", resid, self._prec, resid)
        return self._log_norm - 0.5 * quad

    def score(self, x, theta) -> np.ndarray:
        mu = self.check_theta(theta)
        return (np.asarray(x, dtype=float) - mu) @ self._prec

    def log_density_hess(self, x, theta) -> np.ndarray:
        n = np.asarray(x).shape[0]
        return np.broadcast_to(-self._prec, (n, self.dim_theta, self.dim_theta)).copy()

    def weighted_fit(self, data, weights, fixed) -> np.ndarray:
        mean = weights @ data / np.sum(weights)
        if not fixed:
            return mean
        held = sorted(fixed)
        free = [j for j in range(self.dim_theta) if j not in fixed]
        theta = np.empty(self.dim_theta)
        theta[held] = [float(fixed[j]) for j in held]
        if free:
            # minimise (m - mu)^T P (m - mu) over the free block
            p_ff = self._prec[np.ix_(free, free)]
            p_fh = self._prec[np.ix_(free, held)]
            gap = mean[held] - theta[held]
            theta[free] = mean[free] + np.linalg.solve(p_ff, p_fh @ gap)
        return theta

    def initial_theta(self, data) -> np.ndarray:
        return np.median(np.asarray(data, dtype=float), axis=0)

    def sample(self, n, theta, rng) -> np.ndarray:
        mu = self.check_theta(theta)
        return mu + rng.standard_normal((n, self.dim_x)) @ self._chol.T

    def scales(self, theta) -> list[float]:
        return [float(s) for s in np.sqrt(np.diag(self._cov))]

    def __repr__(self) -> str:
        return f"MultivariateNormalKnownCovariance(dim={self.dim_theta})"
