import numpy as np
from pydantic import BaseModel, Field

from app.schemas.types import ExpectationMethod


class ExpectationMeta(BaseModel):
    """How the expectations under h were evaluated."""

    method: ExpectationMethod
    # Integration subintervals (quadrature)
    nodes: int | None = None
    # Sample size (Monte Carlo)
    draws: int | None = None
    seed: int | None = None


class SandwichMatrices(BaseModel):
    """A = E_h[psi psi^T], B = -E_h[psi'], B* and the distortion eigenvalues."""

    A: list[list[float]]
    B: list[list[float]]
    B_star: list[list[float]]
    # Size of the tested block
    r: int
    # Positive eigenvalues of A(B^{-1} - B*), descending
    lambdas: list[float]
    # Point the expectations were taken at
    theta: list[float]
    q: float
    epsilon: float = 0.0
    # 2-norm condition number of B
    condition_number: float
    expectation_meta: ExpectationMeta
    # Monte Carlo standard errors of the entries of A and B
    A_stderr: list[list[float]] | None = None
    B_stderr: list[list[float]] | None = None

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self.A, dtype=float)

    @property
    def b(self) -> np.ndarray:
        return np.asarray(self.B, dtype=float)

    @property
    def b_star(self) -> np.ndarray:
        return np.asarray(self.B_star, dtype=float)

    @property
    def ratio(self) -> float:
        """A/B on the first coordinate."""
        return self.A[0][0] / self.B[0][0]


class AsymptoticSummary(BaseModel):
    """Local power quantities for a scalar location test under symmetry."""

    q: float
    epsilon: float = 0.0
    # E[psi^2] / E[psi']^2 on the tested coordinate
    V_q: float
    # Expected MLqE at theta0 and its derivative
    u_q: float
    u_q_prime: float = 1.0
    # u'_q / sqrt(V_q)
    efficacy: float
    delta: float
    alpha: float
    # Phi(c_q delta - z_{1-alpha})
    limiting_power: float
    # V_1 / V_q
    relative_efficiency: float


class WeightedChiSquare(BaseModel):
    """Monte Carlo evaluation of the law of sum lambda_j Z_j^2."""

    lambdas: list[float]
    # Quantile or cdf value
    value: float
    # Standard error of the Monte Carlo estimate
    stderr: float
    draws: int
    seed: int


class SurfaceRow(BaseModel):
    eps: float
    q: float
    ratio: float


class EigenRow(BaseModel):
    eps: float
    q: float
    j: int
    value: float


class VqRow(BaseModel):
    eps: float
    q: float
    v_q: float


class CurvePoint(BaseModel):
    x: float
    value: float


class OverlayRow(BaseModel):
    x: float
    null_density: float
    alt_density: float


class OptimalQ(BaseModel):
    eps: float
    q: float
    v_q: float
    curve: list[VqRow] = Field(default_factory=list)
