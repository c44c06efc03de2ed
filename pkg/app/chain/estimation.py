from collections.abc import Mapping

import numpy as np

from app.chain import ChainBase
from app.core import lq
from app.core.config import settings
from app.core.family import ParametricFamily
from app.log import logger
from app.schemas.estimation import EstimationResult, ScoreSum
from app.schemas.exception import (
    ConvergenceException,
    DomainException,
    EstimationException,
    ScaleCollapseException,
)

# Relative slack accepted between successive Lq-likelihood values
ASCENT_SLACK = 1e-10
# Step halvings tried before an iterate is declared stationary
MAX_HALVINGS = 30


class EstimationChain(ChainBase):
    """Maximum Lq-likelihood estimation by iterative reweighting.

    Each step sets w_i = f(x_i; theta)^{1-q} and solves the weighted likelihood
    equation in closed form. A proposal that lowers the Lq-likelihood is pulled
    back toward the current iterate by step halving, so the recorded trace never
    decreases.
    """

    def mlqe(
        self,
        data,
        fam: ParametricFamily,
        q: float,
        init=None,
        multistart: bool | None = None,
        tol: float | None = None,
        max_iter: int | None = None,
    ) -> EstimationResult:
        """Unconstrained MLqE.

        :param data: observations, (n,) or (n, d)
        :param fam: assumed family
        :param q: tuning parameter in (0, 1]
        :param init: starting point, default median and MAD
        :param multistart: also start at init +- 2 MAD, default on for small q
        :return: EstimationResult
        """
        return self.mlqe_constrained(
            data, fam, q, {}, init=init, multistart=multistart, tol=tol, max_iter=max_iter
        )

    def mlqe_constrained(
        self,
        data,
        fam: ParametricFamily,
        q: float,
        fixed: Mapping[int, float],
        init=None,
        multistart: bool | None = None,
        tol: float | None = None,
        max_iter: int | None = None,
    ) -> EstimationResult:
        """MLqE with the coordinates in ``fixed`` held at the given values."""
        q = lq.check_q(q)
        conf = settings.CONF
        tol = self._resolve(tol, conf.tol)
        max_iter = self._resolve(max_iter, conf.max_iter)
        batch = self.__check_data(data, fam)
        fixed = self.__check_fixed(fixed, fam)

        if len(fixed) == fam.dim_theta:
            theta = fam.check_theta([fixed[j] for j in range(fam.dim_theta)])
            return self.__result(batch, fam, q, theta, fixed, iterations=0, trace=None)

        if init is None:
            init = fam.initial_theta(batch)
        init = np.array(fam.check_theta(init), dtype=float)
        for j, value in fixed.items():
            init[j] = value

        if multistart is None:
            multistart = q < settings.MULTISTART_Q_BELOW
        starts = self.__starting_points(batch, fam, init, fixed) if multistart else [init]

        best: EstimationResult | None = None
        first_error: EstimationException | None = None
        for start in starts:
            try:
                result = self.__solve(batch, fam, q, start, fixed, tol, max_iter)
            except EstimationException as err:
                first_error = first_error or err
                continue
            if best is None or result.lq_likelihood > best.lq_likelihood:
                best = result
        if best is None:
            # the q = 1 fit under the same constraint, wide enough to clear spikes
            fallback = np.array(
                fam.check_theta(fam.weighted_fit(batch, np.ones(batch.shape[0]), fixed)),
                dtype=float,
            )
            starts.append(fallback)
            logger.debug(f"every start failed ({first_error}), retrying from the q=1 fit")
            try:
                best = self.__solve(batch, fam, q, fallback, fixed, tol, max_iter)
            except EstimationException:
                raise first_error from None
        best.starts = len(starts)
        logger.debug(
            f"MLqE q={q:g} fixed={sorted(fixed)} theta={np.round(best.theta, 6).tolist()} "
            f"iterations={best.iterations} starts={len(starts)}"
        )
        return best

    @staticmethod
    def score_sum(data, theta, fam: ParametricFamily, q: float) -> ScoreSum:
        """S_n = sum_i psi_q(x_i; theta)."""
        batch, _ = fam.as_batch(data)
        s_n = lq.score_sum(batch, theta, fam, q)
        return ScoreSum(s_n=[float(v) for v in s_n], n=int(batch.shape[0]))

    @staticmethod
    def __check_data(data, fam: ParametricFamily) -> np.ndarray:
        batch, _ = fam.as_batch(data)
        if batch.shape[0] < fam.dim_theta + 1:
            raise DomainException(
                f"{fam.name} needs at least {fam.dim_theta + 1} observations, "
                f"got {batch.shape[0]}"
            )
        if not np.all(np.isfinite(batch)):
            raise DomainException("observations must be finite")
        low, high = fam.support
        if np.any(batch < low) or np.any(batch > high):
            raise DomainException(f"observations outside the support of {fam.name}")
        return batch

    @staticmethod
    def __check_fixed(fixed: Mapping[int, float], fam: ParametricFamily) -> dict[int, float]:
        checked = {}
        for j, value in (fixed or {}).items():
            if not 0 <= int(j) < fam.dim_theta:
                raise DomainException(f"{fam.name} has no coordinate {j}")
            checked[int(j)] = float(value)
        return checked

    @staticmethod
    def __starting_points(batch, fam, init, fixed) -> list[np.ndarray]:
        """init, then init shifted by +-2 MAD along each free location coordinate."""
        spread = fam.location_spread(batch)
        starts = [init]
        for coord, column in fam.location_coords.items():
            if coord in fixed or spread[column] <= 0:
                continue
            for sign in (-1.0, 1.0):
                start = init.copy()
                start[coord] += sign * 2.0 * spread[column]
                starts.append(start)
        return starts

    def __solve(self, batch, fam, q, theta, fixed, tol, max_iter) -> EstimationResult:
        free = [j for j in range(fam.dim_theta) if j not in fixed]
        value = lq.lq_likelihood(batch, theta, fam, q)
        trace = [value]
        for iteration in range(1, max_iter + 1):
            weights = lq.density_weights(fam.log_density(batch, theta), q)
            if not np.sum(weights) > 0:
                raise EstimationException(
                    "all weights underflowed", trace=trace, theta=theta.tolist()
                )
            proposal = fam.weighted_fit(batch, weights, fixed)
            proposal, proposal_value, stalled = self.__backtrack(
                batch, fam, q, theta, proposal, value
            )
            self.__check_scale(fam, proposal, trace)
            step = float(np.max(np.abs(proposal - theta)))
            theta, value = proposal, proposal_value
            trace.append(value)
            score_norm = float(np.max(np.abs(lq.score_sum(batch, theta, fam, q)[free])))
            if step <= tol or score_norm <= tol:
                converged = score_norm <= tol or not stalled
                if not converged:
                    logger.warning(
                        f"MLqE stalled with score norm {score_norm:.3g} (q={q:g})"
                    )
                return self.__result(
                    batch, fam, q, theta, fixed, iterations=iteration, trace=trace,
                    score_norm=score_norm, converged=converged,
                )
        logger.warning(f"MLqE did not converge in {max_iter} iterations (q={q:g})")
        raise ConvergenceException(
            f"no convergence after {max_iter} iterations", trace=trace, theta=theta.tolist()
        )

    @staticmethod
    def __backtrack(batch, fam, q, theta, proposal, value) -> tuple[np.ndarray, float, bool]:
        """Halves the step until the Lq-likelihood does not drop.

        :return: accepted point, its Lq-likelihood and whether no ascent was found
        """
        slack = ASCENT_SLACK * max(1.0, abs(value))
        step = proposal - theta
        candidate = proposal
        for _ in range(MAX_HALVINGS):
            candidate_value = lq.lq_likelihood(batch, candidate, fam, q)
            if candidate_value >= value - slack:
                return candidate, candidate_value, False
            step = step / 2.0
            candidate = theta + step
        # no ascent direction left, theta is stationary to working precision
        return theta, value, True

    @staticmethod
    def __check_scale(fam, theta, trace):
        if "sigma" in fam.param_names:
            sigma = theta[fam.param_names.index("sigma")]
            if sigma <= settings.SIGMA_FLOOR:
                raise ScaleCollapseException(
                    "scale collapse: the scale iterate reached its lower bound",
                    trace=trace,
                    theta=theta.tolist(),
                )

    @staticmethod
    def __result(
        batch, fam, q, theta, fixed, iterations, trace, score_norm=None, converged=True
    ):
        log_f = fam.log_density(batch, theta)
        value = float(np.sum(lq.lq_of_log(log_f, q)))
        if score_norm is None:
            free = [j for j in range(fam.dim_theta) if j not in fixed]
            s_n = lq.score_sum(batch, theta, fam, q)
            score_norm = float(np.max(np.abs(s_n[free]))) if free else 0.0
        return EstimationResult(
            theta_hat=[float(v) for v in theta],
            weights=[float(w) for w in lq.density_weights(log_f, q)],
            lq_likelihood=value,
            iterations=iterations,
            converged=converged,
            constraint_mask=sorted(fixed),
            trace=trace if trace is not None else [value],
            q=q,
            score_norm=score_norm,
        )
