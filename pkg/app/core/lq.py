"""The L_q transform and the score-like functions derived from it.

Everything here is evaluated in log space: a density that underflows to 0
still has a finite log density, so f^{1-q} = exp((1-q) log f) degrades to 0
instead of producing 0 * inf. When the log density itself is -inf (off the
support) the transform is clamped to its lower bound -1/(1-q), or to
``LOG_FLOOR`` at q = 1.
"""

from typing import TYPE_CHECKING

import numpy as np

from app.schemas.exception import DomainException

if TYPE_CHECKING:
    from app.core.family import ParametricFamily

# Stand-in for log(0) at q = 1
LOG_FLOOR = -1e300


def check_q(q: float) -> float:
    """Validates the tuning parameter, 0 < q <= 1."""
    q = float(q)
    if not 0.0 < q <= 1.0 or np.isnan(q):
        raise DomainException(f"q must lie in (0, 1], got {q}")
    return q


def lq_transform(u, q: float):
    """L_q(u) = (u^{1-q} - 1)/(1 - q), log u at q = 1.

    :param u: positive scalar or array
    :param q: tuning parameter in (0, 1]
    :return: same shape as ``u``
    """
    q = check_q(q)
    u_arr = np.asarray(u, dtype=float)
    if np.any(~(u_arr > 0)):
        raise DomainException("L_q is only defined for u > 0")
    result = lq_of_log(np.log(u_arr), q)
    return float(result) if np.ndim(result) == 0 else result


def lq_of_log(log_u, q: float):
    """L_q evaluated from log u, with the density floor policy applied."""
    log_u = np.asarray(log_u, dtype=float)
    if q == 1.0:
        return np.maximum(log_u, LOG_FLOOR)
    a = 1.0 - q
    with np.errstate(under="ignore"):
        # expm1 keeps the q -> 1 limit accurate
        return np.expm1(a * log_u) / a


def lq_lower_bound(q: float) -> float:
    """inf over u > 0 of L_q(u); -inf at q = 1."""
    q = check_q(q)
    return -np.inf if q == 1.0 else -1.0 / (1.0 - q)


def density_weights(log_density, q: float):
    """f^{1-q}, the MLqE weights."""
    with np.errstate(under="ignore"):
        return np.exp((1.0 - q) * np.asarray(log_density, dtype=float))


def lq_likelihood(data, theta, fam: "ParametricFamily", q: float) -> float:
    """Sum of L_q(f(x_i; theta))."""
    q = check_q(q)
    return float(np.sum(lq_of_log(fam.log_density(data, theta), q)))


def psi_q(x, theta, fam: "ParametricFamily", q: float) -> np.ndarray:
    """psi_q = d/dtheta L_q(f) = score * f^{1-q}.

    Accepts a single observation (returns a p-vector) or a batch (returns n x p).
    """
    q = check_q(q)
    batch, single = fam.as_batch(x)
    weights = density_weights(fam.log_density(batch, theta), q)
    values = fam.score(batch, theta) * weights[:, None]
    return values[0] if single else values


def psi_q_prime(x, theta, fam: "ParametricFamily", q: float) -> np.ndarray:
    """psi'_q = d^2/dtheta^2 L_q(f) = f^{1-q} [f''/f - q (f'/f)(f'/f)^T].

    With f''/f = H + s s^T (H the Hessian of log f) this is
    f^{1-q} [H + (1 - q) s s^T]. Returns p x p for one observation, n x p x p
    for a batch.
    """
    q = check_q(q)
    batch, single = fam.as_batch(x)
    weights = density_weights(fam.log_density(batch, theta), q)
    score = fam.score(batch, theta)
    hess = fam.log_density_hess(batch, theta)
    outer = np.einsum("ni,nj->nij", score, score)
    values = (hess + (1.0 - q) * outer) * weights[:, None, None]
    return values[0] if single else values


def score_sum(data, theta, fam: "ParametricFamily", q: float) -> np.ndarray:
    """S_n = sum_i psi_q(x_i; theta)."""
    return np.sum(psi_q(fam.as_batch(data)[0], theta, fam, q), axis=0)
