"""Sandwich matrices and the asymptotic quantities derived from them.

Expectations under h = (1 - eps) f + eps g are taken component by component:
univariate observations by adaptive quadrature over the centre of each
component +- QUAD_HALF_WIDTH standard deviations, multivariate observations by
seeded Monte Carlo with MC_DRAWS draws.
"""

import functools
import math
from collections.abc import Callable, Mapping

import numpy as np
from scipy import integrate, optimize, stats

from app.chain import ChainBase
from app.core import lq
from app.core.config import settings
from app.core.family import MultivariateNormalKnownCovariance, ParametricFamily
from app.core.mixture import (
    Contamination,
    GrossErrorModel,
    MultivariateNormalContamination,
    NormalContamination,
)
from app.log import logger
from app.schemas.asymptotics import (
    AsymptoticSummary,
    CurvePoint,
    EigenRow,
    ExpectationMeta,
    OptimalQ,
    OverlayRow,
    SandwichMatrices,
    SurfaceRow,
    VqRow,
    WeightedChiSquare,
)
from app.schemas.exception import (
    AsymmetryException,
    DomainException,
    EstimationException,
    SingularMatrixException,
)
from app.schemas.types import ExpectationMethod
from app.utils.seed import SeedUtils

# Largest condition number of B accepted as invertible
MAX_CONDITION = 1e12
# Batches used for the Monte Carlo standard error of a quantile
QUANTILE_BATCHES = 20
# Draws behind a null/alternative density overlay
OVERLAY_DRAWS = 100_000

BatchFunction = Callable[[np.ndarray], np.ndarray]


@functools.lru_cache(maxsize=8)
def _weighted_chisq_draws(lambdas: tuple[float, ...], draws: int, seed: int) -> np.ndarray:
    rng = SeedUtils.generator(seed, "weighted-chisq", len(lambdas))
    z = rng.standard_normal((draws, len(lambdas)))
    return (z**2) @ np.asarray(lambdas)


class AsymptoticsChain(ChainBase):
    """A, B, B*, distortion eigenvalues, V_q and the influence functions."""

    # ---- expectations under h ----

    @staticmethod
    def __method(model: GrossErrorModel, method: ExpectationMethod | None) -> ExpectationMethod:
        if method is None:
            return (
                ExpectationMethod.Quadrature
                if model.dim_x == 1
                else ExpectationMethod.MonteCarlo
            )
        if method == ExpectationMethod.Quadrature and model.dim_x != 1:
            raise DomainException("quadrature is only available for univariate observations")
        return method

    @staticmethod
    def __components(model: GrossErrorModel) -> list[tuple[float, Callable, float, float]]:
        """(weight, density, centre, sd) of each univariate mixture component."""
        fam, theta_f = model.family, model.theta_f
        centre = float(theta_f[0])
        components = [
            (
                1.0 - model.epsilon,
                lambda x: fam.density(x, theta_f),
                centre,
                max(fam.scales(theta_f)),
            )
        ]
        if model.epsilon > 0:
            g = model.contamination
            components.append((model.epsilon, g.density, float(g.mean), g.sd))
        return components

    def __quadrature(self, model: GrossErrorModel, fn: BatchFunction) -> tuple[np.ndarray, int]:
        total, nodes = None, 0
        for weight, density, centre, sd in self.__components(model):
            half = settings.QUAD_HALF_WIDTH * sd

            def integrand(x, density=density):
                point = np.array([x])
                return density(point)[0] * fn(point)[0]

            value, _, info = integrate.quad_vec(
                integrand,
                centre - half,
                centre + half,
                epsabs=settings.QUAD_TOL,
                epsrel=settings.QUAD_TOL,
                points=(centre - sd, centre, centre + sd),
                full_output=True,
            )
            nodes += int(info.neval)
            total = weight * value if total is None else total + weight * value
        return np.asarray(total, dtype=float), nodes

    def expectation(
        self,
        model: GrossErrorModel,
        fn: BatchFunction,
        method: ExpectationMethod | None = None,
        seed: int | None = None,
        draws: int | None = None,
    ) -> tuple[np.ndarray, np.ndarray | None, ExpectationMeta]:
        """E_h[fn(X)] for a function mapping a batch (n, ...) to rows (n, k).

        :return: mean, Monte Carlo standard error (None for quadrature), metadata
        """
        method = self.__method(model, method)
        if method == ExpectationMethod.Quadrature:
            mean, nodes = self.__quadrature(model, fn)
            return mean, None, ExpectationMeta(method=method, nodes=nodes)
        seed = self._resolve(seed, settings.DEFAULT_SEED)
        draws = self._resolve(draws, settings.MC_DRAWS)
        sample = model.sample(draws, SeedUtils.derive(seed, "expectation"))
        values = fn(sample)
        mean = values.mean(axis=0)
        stderr = values.std(axis=0, ddof=1) / math.sqrt(draws)
        return mean, stderr, ExpectationMeta(method=method, draws=draws, seed=seed)

    # ---- sandwich ----

    @staticmethod
    def matrices_to_sandwich(
        A: np.ndarray,
        B: np.ndarray,
        r: int,
        theta,
        q: float,
        epsilon: float,
        meta: ExpectationMeta,
        A_stderr: np.ndarray | None = None,
        B_stderr: np.ndarray | None = None,
    ) -> SandwichMatrices:
        """B*, the condition diagnostics and the eigenvalues of A(B^{-1} - B*)."""
        p = A.shape[0]
        if not 1 <= r <= p:
            raise DomainException(f"tested block size must lie in [1, {p}], got {r}")
        condition = float(np.linalg.cond(B))
        if not np.isfinite(condition) or condition > MAX_CONDITION:
            raise SingularMatrixException(
                f"B is singular (condition number {condition:.3g})", condition
            )
        b_inv = np.linalg.inv(B)
        b_star = np.zeros_like(B)
        if r < p:
            b_star[r:, r:] = np.linalg.inv(B[r:, r:])
        # symmetric form A^{1/2}(B^{-1} - B*)A^{1/2} has the same spectrum
        w, v = np.linalg.eigh(A)
        a_half = v @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ v.T
        middle = b_inv - b_star
        product = a_half @ ((middle + middle.T) / 2.0) @ a_half
        eigenvalues = np.sort(np.linalg.eigvalsh((product + product.T) / 2.0))[::-1]
        lambdas = eigenvalues[:r]
        if np.any(lambdas <= settings.EIGEN_ZERO_TOL):
            logger.warning(f"non-positive distortion eigenvalue among {lambdas.tolist()}")
        return SandwichMatrices(
            A=A.tolist(),
            B=B.tolist(),
            B_star=b_star.tolist(),
            r=r,
            lambdas=[float(x) for x in lambdas],
            theta=[float(x) for x in np.ravel(theta)],
            q=q,
            epsilon=epsilon,
            condition_number=condition,
            expectation_meta=meta,
            A_stderr=None if A_stderr is None else A_stderr.tolist(),
            B_stderr=None if B_stderr is None else B_stderr.tolist(),
        )

    def sandwich(
        self,
        model: GrossErrorModel,
        fam: ParametricFamily,
        theta,
        q: float,
        r: int,
        method: ExpectationMethod | None = None,
        seed: int | None = None,
        draws: int | None = None,
    ) -> SandwichMatrices:
        """A = E_h[psi psi^T] and B = -E_h[psi'] at theta.

        :param model: data generating gross error model
        :param fam: assumed family
        :param theta: point of evaluation, usually ``pseudo_true_theta``
        :param r: size of the tested block (leading coordinates)
        """
        q = lq.check_q(q)
        theta = fam.check_theta(theta)
        p = fam.dim_theta

        def fn(x: np.ndarray) -> np.ndarray:
            psi = lq.psi_q(x, theta, fam, q)
            prime = lq.psi_q_prime(x, theta, fam, q)
            outer = np.einsum("ni,nj->nij", psi, psi)
            return np.concatenate(
                [outer.reshape(len(psi), -1), prime.reshape(len(psi), -1)], axis=1
            )

        mean, stderr, meta = self.expectation(model, fn, method, seed, draws)
        A = mean[: p * p].reshape(p, p)
        B = -mean[p * p :].reshape(p, p)
        A, B = (A + A.T) / 2.0, (B + B.T) / 2.0
        a_se = b_se = None
        if stderr is not None:
            a_se = stderr[: p * p].reshape(p, p)
            b_se = stderr[p * p :].reshape(p, p)
        return self.matrices_to_sandwich(
            A, B, r, theta, q, model.epsilon, meta, a_se, b_se
        )

    def pseudo_true_theta(
        self,
        model: GrossErrorModel,
        fam: ParametricFamily,
        q: float,
        fixed: Mapping[int, float] | None = None,
        method: ExpectationMethod | None = None,
        seed: int | None = None,
        draws: int | None = None,
    ) -> np.ndarray:
        """Population MLqE: the root of E_h[psi_q(X; theta)] in the free coordinates.

        Equals the centre for location families under a symmetric h; the scale
        coordinate of a location-scale family moves away from sigma_f when q < 1.
        """
        q = lq.check_q(q)
        fixed = dict(fixed or {})
        theta = np.array(model.theta_f, dtype=float)
        for j, value in fixed.items():
            theta[j] = value
        free = [j for j in range(fam.dim_theta) if j not in fixed]
        if not free:
            return theta
        location_only = set(fam.location_coords) == set(range(fam.dim_theta))
        if location_only and not fixed and model.is_symmetric():
            return theta

        method = self.__method(model, method)
        logs = [j for j in free if fam.param_names[j] == "sigma"]
        if method == ExpectationMethod.MonteCarlo:
            seed = self._resolve(seed, settings.DEFAULT_SEED)
            draws = self._resolve(draws, settings.MC_DRAWS)
            sample = model.sample(draws, SeedUtils.derive(seed, "pseudo-true"))

        def unpack(u: np.ndarray) -> np.ndarray:
            point = theta.copy()
            for k, j in enumerate(free):
                point[j] = math.exp(u[k]) if j in logs else u[k]
            return point

        def equations(u: np.ndarray) -> np.ndarray:
            point = unpack(u)

            def fn(x):
                return lq.psi_q(x, point, fam, q)[:, free]

            if method == ExpectationMethod.MonteCarlo:
                return fn(sample).mean(axis=0)
            return self.__quadrature(model, fn)[0]

        start = np.array([math.log(theta[j]) if j in logs else theta[j] for j in free])
        solution = optimize.root(equations, start, method="hybr", tol=1e-12)
        residual = float(np.max(np.abs(equations(solution.x))))
        if not solution.success and residual > 1e-8:
            raise EstimationException(
                f"population MLqE did not converge: {solution.message}",
                theta=unpack(solution.x).tolist(),
            )
        return unpack(solution.x)

    def sandwich_at_truth(
        self,
        model: GrossErrorModel,
        fam: ParametricFamily,
        q: float,
        r: int,
        method: ExpectationMethod | None = None,
        seed: int | None = None,
    ) -> SandwichMatrices:
        """Sandwich at the population MLqE of the model."""
        theta = self.pseudo_true_theta(model, fam, q, method=method, seed=seed)
        return self.sandwich(model, fam, theta, q, r, method=method, seed=seed)

    # ---- surfaces and curves ----

    def ratio_surface(
        self,
        fam: ParametricFamily,
        theta_f,
        contamination: Contamination,
        eps_grid: list[float],
        q_grid: list[float],
        method: ExpectationMethod | None = None,
        seed: int | None = None,
    ) -> list[SurfaceRow]:
        """A(eps, q)/B(eps, q) of the first coordinate over a grid.

        With nuisance parameters the ratio is the single distortion eigenvalue
        of the one-coordinate test, which reduces to A/B when p = 1.
        """
        seed = self._resolve(seed, settings.DEFAULT_SEED)
        cells = [(eps, q) for eps in eps_grid for q in q_grid]

        def evaluate(cell: tuple[float, float]) -> SurfaceRow:
            eps, q = cell
            model = GrossErrorModel(fam, theta_f, contamination, eps)
            matrices = self.sandwich_at_truth(
                model, fam, q, 1, method, SeedUtils.derive(seed, "surface", eps)
            )
            return SurfaceRow(eps=eps, q=q, ratio=matrices.lambdas[0])

        rows = self.run_replicates(evaluate, cells)
        logger.info(f"ratio surface over {len(eps_grid)} x {len(q_grid)} cells done")
        return rows

    def eigenvalue_curve(
        self,
        fam: ParametricFamily,
        theta_f,
        contamination: Contamination,
        eps_grid: list[float],
        q_values: list[float],
        r: int | None = None,
        method: ExpectationMethod | None = None,
        seed: int | None = None,
    ) -> list[EigenRow]:
        """Distortion eigenvalues lambda_j(eps, q), one row per j.

        All q at a given eps share the same Monte Carlo draws.
        """
        seed = self._resolve(seed, settings.DEFAULT_SEED)
        r = self._resolve(r, fam.dim_theta)
        cells = [(eps, q) for eps in eps_grid for q in q_values]

        def evaluate(cell: tuple[float, float]) -> list[EigenRow]:
            eps, q = cell
            model = GrossErrorModel(fam, theta_f, contamination, eps)
            matrices = self.sandwich_at_truth(
                model, fam, q, r, method, SeedUtils.derive(seed, "eigen", eps)
            )
            return [
                EigenRow(eps=eps, q=q, j=j + 1, value=value)
                for j, value in enumerate(matrices.lambdas)
            ]

        return [row for rows in self.run_replicates(evaluate, cells) for row in rows]

    # ---- weighted chi-square law ----

    @staticmethod
    def __check_lambdas(lambdas) -> tuple[float, ...]:
        values = tuple(float(x) for x in np.ravel(lambdas))
        if not values:
            raise DomainException("weighted chi-square needs at least one weight")
        if any(not x > 0 for x in values):
            raise DomainException("weighted chi-square weights must be positive")
        return values

    def weighted_chisq_quantile(
        self,
        lambdas,
        prob: float,
        draws: int | None = None,
        seed: int | None = None,
    ) -> WeightedChiSquare:
        """prob-quantile of sum_j lambda_j Z_j^2 by Monte Carlo.

        The standard error comes from the spread of the quantile over
        independent batches of the same draws.
        """
        if not 0 < prob < 1:
            raise DomainException(f"prob must lie in (0, 1), got {prob}")
        values = self.__check_lambdas(lambdas)
        draws = self._resolve(draws, settings.MC_DRAWS)
        seed = self._resolve(seed, settings.DEFAULT_SEED)
        sample = _weighted_chisq_draws(values, draws, seed)
        quantile = float(np.quantile(sample, prob))
        batches = np.array_split(sample, QUANTILE_BATCHES)
        batch_q = np.array([np.quantile(b, prob) for b in batches])
        stderr = float(batch_q.std(ddof=1) / math.sqrt(QUANTILE_BATCHES))
        return WeightedChiSquare(
            lambdas=list(values), value=quantile, stderr=stderr, draws=draws, seed=seed
        )

    def weighted_chisq_cdf(
        self,
        lambdas,
        x: float,
        draws: int | None = None,
        seed: int | None = None,
    ) -> WeightedChiSquare:
        """P(sum_j lambda_j Z_j^2 <= x) by Monte Carlo."""
        values = self.__check_lambdas(lambdas)
        draws = self._resolve(draws, settings.MC_DRAWS)
        seed = self._resolve(seed, settings.DEFAULT_SEED)
        sample = _weighted_chisq_draws(values, draws, seed)
        prob = float(np.mean(sample <= x))
        stderr = math.sqrt(prob * (1.0 - prob) / draws)
        return WeightedChiSquare(
            lambdas=list(values), value=prob, stderr=stderr, draws=draws, seed=seed
        )

    # ---- efficiency and power ----

    def asymptotic_variance(
        self,
        model: GrossErrorModel,
        fam: ParametricFamily,
        q: float,
        method: ExpectationMethod | None = None,
        seed: int | None = None,
    ) -> float:
        """V_q of the first coordinate, (B^{-1} A B^{-1})_00 at the population MLqE."""
        matrices = self.sandwich_at_truth(model, fam, q, 1, method, seed)
        b_inv = np.linalg.inv(matrices.b)
        return float((b_inv @ matrices.a @ b_inv)[0, 0])

    @staticmethod
    def __located(model: GrossErrorModel, theta0: float) -> GrossErrorModel:
        theta = np.array(model.theta_f, dtype=float)
        theta[0] = theta0
        return model.with_theta(theta)

    def asymptotic_summary(
        self,
        model: GrossErrorModel,
        fam: ParametricFamily,
        theta0: float,
        q: float,
        delta: float,
        alpha: float | None = None,
        allow_asymmetric: bool = False,
    ) -> AsymptoticSummary:
        """V_q, efficacy, limiting power and relative efficiency at theta0.

        Uses u_q(theta) = theta, which holds when f and g are symmetric about
        theta0; other contaminations are refused unless ``allow_asymmetric``.

        :param delta: local alternative, theta_n = theta0 + delta / sqrt(n)
        """
        alpha = self._resolve(alpha, settings.ALPHA)
        q = lq.check_q(q)
        model = self.__located(model, theta0)
        if not model.is_symmetric() and not allow_asymmetric:
            raise AsymmetryException(
                f"g is not symmetric about theta0={theta0:g}; "
                f"the expected MLqE is only characterised in the symmetric case"
            )
        v_q = self.asymptotic_variance(model, fam, q)
        v_1 = v_q if q == 1.0 else self.asymptotic_variance(model, fam, 1.0)
        efficacy = 1.0 / math.sqrt(v_q)
        power = float(stats.norm.cdf(efficacy * delta - stats.norm.ppf(1.0 - alpha)))
        return AsymptoticSummary(
            q=q,
            epsilon=model.epsilon,
            V_q=v_q,
            u_q=theta0,
            u_q_prime=1.0,
            efficacy=efficacy,
            delta=delta,
            alpha=alpha,
            limiting_power=power,
            relative_efficiency=v_1 / v_q,
        )

    def v_q_curve(
        self,
        model: GrossErrorModel,
        fam: ParametricFamily,
        theta0: float,
        q_grid: list[float] | None = None,
    ) -> list[VqRow]:
        """V_q over a q grid at the model's contamination level."""
        q_grid = sorted(self._resolve(q_grid, settings.Q_GRID))
        model = self.__located(model, theta0)

        def evaluate(q: float) -> VqRow:
            return VqRow(eps=model.epsilon, q=q, v_q=self.asymptotic_variance(model, fam, q))

        return self.run_replicates(evaluate, q_grid)

    def optimal_q(
        self,
        model: GrossErrorModel,
        fam: ParametricFamily,
        theta0: float,
        q_grid: list[float] | None = None,
    ) -> OptimalQ:
        """Population counterpart of the q selection: argmin of V_q, ties to larger q."""
        curve = self.v_q_curve(model, fam, theta0, q_grid)
        best = min(row.v_q for row in curve)
        q = max(row.q for row in curve if row.v_q <= best * (1.0 + 1e-12))
        return OptimalQ(eps=model.epsilon, q=q, v_q=best, curve=curve)

    # ---- influence ----

    @staticmethod
    def clean_model(fam: ParametricFamily, theta) -> GrossErrorModel:
        """F = f(.; theta) written as a gross error model with eps = 0."""
        contamination: Contamination
        if isinstance(fam, MultivariateNormalKnownCovariance):
            contamination = MultivariateNormalContamination.scaled(fam, theta, 1.0)
        else:
            contamination = NormalContamination()
        return GrossErrorModel(fam, theta, contamination, 0.0)

    def __influence(self, fam, theta, q, x_grid) -> tuple[np.ndarray, np.ndarray, float]:
        if fam.dim_x != 1:
            raise DomainException("influence curves are drawn for univariate observations")
        model = self.clean_model(fam, theta)
        centre = self.pseudo_true_theta(model, fam, q)
        matrices = self.sandwich(model, fam, centre, q, fam.dim_theta)
        b_inv = np.linalg.inv(matrices.b)
        x = np.asarray(x_grid, dtype=float).reshape(-1)
        influence = lq.psi_q(x, centre, fam, q) @ b_inv.T
        variance = float((b_inv @ matrices.a @ b_inv)[0, 0])
        return x, influence[:, 0], variance

    def influence_function(
        self, fam: ParametricFamily, theta, q: float, x_grid
    ) -> list[CurvePoint]:
        """IF(x) = B^{-1} psi_q(x) under the clean model, first coordinate."""
        x, influence, _ = self.__influence(fam, theta, q, x_grid)
        return [CurvePoint(x=float(a), value=float(b)) for a, b in zip(x, influence)]

    def level_influence(
        self, fam: ParametricFamily, theta, q: float, alpha0: float, x_grid
    ) -> list[CurvePoint]:
        """LIF(x) = phi(Phi^{-1}(1 - alpha0)) IF(x) / sqrt(int IF^2 dF)."""
        if not 0 < alpha0 < 1:
            raise DomainException(f"alpha0 must lie in (0, 1), got {alpha0}")
        x, influence, variance = self.__influence(fam, theta, q, x_grid)
        scale = stats.norm.pdf(stats.norm.ppf(1.0 - alpha0)) / math.sqrt(variance)
        return [CurvePoint(x=float(a), value=float(scale * b)) for a, b in zip(x, influence)]

    # ---- asymptotic null and alternative laws ----

    def null_alternative_overlay(
        self,
        matrices: SandwichMatrices,
        delta,
        n: int,
        x_grid,
        draws: int | None = None,
        seed: int | None = None,
    ) -> list[OverlayRow]:
        """Densities of the limiting D_q under H0 and under a shift of the tested block.

        D = (U + m)^T (B^{-1} - B*) (U + m) with U ~ N(0, A) and m = sqrt(n) B delta,
        smoothed by a Gaussian KDE reflected at 0.
        """
        draws = self._resolve(draws, OVERLAY_DRAWS)
        seed = self._resolve(seed, settings.DEFAULT_SEED)
        a, b = matrices.a, matrices.b
        p, r = a.shape[0], matrices.r
        shift = np.zeros(p)
        shift[:r] = np.broadcast_to(np.asarray(delta, dtype=float), (r,))
        mean = math.sqrt(n) * b @ shift
        middle = np.linalg.inv(b) - matrices.b_star
        w, v = np.linalg.eigh(a)
        a_half = v @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ v.T
        rng = SeedUtils.generator(seed, "overlay")
        u = rng.standard_normal((draws, p)) @ a_half.T
        null = np.einsum("ni,ij,nj->n", u, middle, u)
        alt = np.einsum("ni,ij,nj->n", u + mean, middle, u + mean)
        x = np.asarray(x_grid, dtype=float).reshape(-1)
        null_density = self.__reflected_kde(null, x)
        alt_density = self.__reflected_kde(alt, x)
        return [
            OverlayRow(x=float(a), null_density=float(b), alt_density=float(c))
            for a, b, c in zip(x, null_density, alt_density)
        ]

    @staticmethod
    def __reflected_kde(values: np.ndarray, x: np.ndarray) -> np.ndarray:
        kde = stats.gaussian_kde(values)
        density = kde(x) + kde(-x)
        return np.where(x < 0, 0.0, density)

    @staticmethod
    def eigen_bound(matrices: SandwichMatrices) -> float:
        """lambda_max(A) / lambda_min(B), an upper bound of the eigenvalues of AB^{-1}."""
        return float(np.linalg.eigvalsh(matrices.a)[-1] / np.linalg.eigvalsh(matrices.b)[0])
