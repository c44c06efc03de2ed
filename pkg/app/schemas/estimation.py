import numpy as np
from pydantic import BaseModel, Field


class EstimationResult(BaseModel):
    """Output of the MLqE solver."""

    # Estimate, in the family's coordinate order
    theta_hat: list[float]
    # f(x_i; theta_hat)^{1-q}
    weights: list[float] = Field(default_factory=list)
    # sum of L_q(f(x_i; theta_hat))
    lq_likelihood: float
    # Reweighting steps taken
    iterations: int = 0
    # Stopping rule satisfied
    converged: bool = True
    # Coordinates held fixed (empty when unconstrained)
    constraint_mask: list[int] = Field(default_factory=list)
    # Lq-likelihood after each step, initial value first
    trace: list[float] = Field(default_factory=list)
    # Tuning parameter used
    q: float = 1.0
    # sup-norm of the score sum over the free coordinates
    score_norm: float = 0.0
    # Number of starting points tried
    starts: int = 1

    @property
    def theta(self) -> np.ndarray:
        return np.asarray(self.theta_hat, dtype=float)


class ScoreSum(BaseModel):
    """S_n = sum_i psi_q(x_i; theta)."""

    s_n: list[float]
    n: int

    @property
    def norm(self) -> float:
        return float(np.max(np.abs(self.s_n))) if self.s_n else 0.0
