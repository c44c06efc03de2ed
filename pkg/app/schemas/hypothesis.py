from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.family import ParametricFamily
from app.schemas.types import Alternative, TestMethod


class HypothesisSpec(BaseModel):
    """H0: the first r coordinates of theta equal theta0."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    # Assumed model
    family: ParametricFamily
    # Null values of the tested block, coordinates 0..r-1
    theta0: list[float]
    # Direction of H1
    alternative: Alternative = Alternative.TwoSided
    # Level
    alpha: float = 0.05

    @field_validator("alternative", mode="before")
    @classmethod
    def alternative_validator(cls, v: Any) -> Alternative:
        return Alternative.parse(v)

    @field_validator("alpha")
    @classmethod
    def alpha_validator(cls, v: float) -> float:
        if not 0 < v < 1:
            raise ValueError("alpha must lie in (0, 1)")
        return v

    @model_validator(mode="after")
    def block_validator(self) -> "HypothesisSpec":
        if not 1 <= len(self.theta0) <= self.family.dim_theta:
            raise ValueError(
                f"tested block must have between 1 and {self.family.dim_theta} "
                f"coordinates, got {len(self.theta0)}"
            )
        if self.alternative != Alternative.TwoSided and len(self.theta0) != 1:
            raise ValueError("one-sided alternatives need a single tested coordinate")
        return self

    @property
    def r(self) -> int:
        return len(self.theta0)

    @property
    def fixed(self) -> dict[int, float]:
        """Constraint map for the null fit."""
        return {j: float(v) for j, v in enumerate(self.theta0)}


class BootstrapMeta(BaseModel):
    """Provenance of a bootstrap calibration."""

    # Resamples kept
    B: int
    # Seed the replicate streams derive from
    seed: int
    # Centre used to shift the sample onto the null (theta_hat_q)
    theta_hat_centre: list[float]
    # Resamples redrawn after an estimation failure
    redraws: int = 0


class CriticalValueResult(BaseModel):
    """Bootstrap critical value and the draws behind it."""

    critical_value: float
    # D_q on each resample (signed roots for one-sided tests)
    bootstrap_draws: list[float]
    q: float
    alpha: float
    meta: BootstrapMeta


class QCurvePoint(BaseModel):
    q: float
    # Empirical asymptotic variance of the tested coordinate
    objective: float
    theta_hat: list[float] = Field(default_factory=list)


class QSelection(BaseModel):
    """Data-adaptive q."""

    q_hat: float
    curve: list[QCurvePoint]
    # Grid points whose fit failed
    excluded: list[float] = Field(default_factory=list)


class TestResult(BaseModel):
    """Outcome of any of the tests."""

    __test__ = False

    # Test statistic; oriented signed root for one-sided LqLR
    statistic: float
    # Rejection boundary on the statistic's scale, None for discrete tests
    critical_value: float | None = None
    p_value: float
    reject: bool
    # q used by the LqLR, None for the other methods
    q_used: float | None = None
    method: TestMethod
    alternative: Alternative = Alternative.TwoSided
    alpha: float = 0.05
    n: int
    seed: int | None = None
    bootstrap_meta: BootstrapMeta | None = None
    # Raw D_q behind a signed root
    d_q: float | None = None
    # q-selection curve when q was chosen adaptively
    q_selection: QSelection | None = None

    def to_output(self) -> dict[str, Any]:
        """Fixed-key document printed by the command line."""
        return {
            "statistic": self.statistic,
            "q": self.q_used,
            "critical_value": self.critical_value,
            "p_value": self.p_value,
            "reject": self.reject,
            "method": self.method.value,
            "seed": self.seed,
            "n": self.n,
        }
