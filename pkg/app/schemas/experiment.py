import math
import re
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, Field, field_validator, model_validator

from app.core.config import settings
from app.core.family import NormalKnownVariance, NormalLocationScale, ParametricFamily
from app.core.mixture import GrossErrorModel, NormalContamination
from app.schemas.types import (
    Alternative,
    ContaminationKind,
    FamilyName,
    OutputFormat,
    ResultKind,
    TestMethod,
)

MethodName = Literal["lqlr_fixed_q", "lqlr_adaptive", "lr_t", "wilcoxon", "sign", "huber"]

_TAG_PATTERN = re.compile(r"^\s*([a-z_]+)\s*(?:\(([^)]*)\))?\s*$")
_TAG_ALIASES = {"lqlr": "lqlr_fixed_q", "t": "lr_t", "adaptive": "lqlr_adaptive"}


class MethodSpec(BaseModel):
    """One test procedure of an experiment.

    Written either as a mapping or as a tag string such as ``lqlr(0.6)``,
    ``lqlr_adaptive``, ``lr_t``, ``wilcoxon``, ``sign`` or ``huber(0.1,10)``.
    """

    name: MethodName
    # Fixed q of lqlr_fixed_q
    q: float | None = None
    # Huber censoring bounds
    c_low: float | None = None
    c_high: float | None = None

    @model_validator(mode="before")
    @classmethod
    def tag_parser(cls, data: Any) -> Any:
        if not isinstance(data, str):
            return data
        match = _TAG_PATTERN.match(data.lower())
        if not match:
            raise ValueError(f"unknown method tag {data!r}")
        name = _TAG_ALIASES.get(match.group(1), match.group(1))
        args = [float(a) for a in (match.group(2) or "").split(",") if a.strip()]
        if name == "lqlr_fixed_q":
            if len(args) != 1:
                raise ValueError("lqlr_fixed_q takes exactly one q")
            return {"name": name, "q": args[0]}
        if name == "huber":
            if len(args) not in (0, 2):
                raise ValueError("huber takes no arguments or (c_low, c_high)")
            return {"name": name, "c_low": args[0], "c_high": args[1]} if args else {"name": name}
        if args:
            raise ValueError(f"{name} takes no arguments")
        return {"name": name}

    @model_validator(mode="after")
    def parameter_validator(self) -> "MethodSpec":
        if self.name == "lqlr_fixed_q":
            if self.q is None or not 0 < self.q <= 1:
                raise ValueError("lqlr_fixed_q needs q in (0, 1]")
        if self.name == "huber":
            low = self.c_low if self.c_low is not None else settings.HUBER_C_LOW
            high = self.c_high if self.c_high is not None else settings.HUBER_C_HIGH
            if not 0 < low < high:
                raise ValueError("huber needs 0 < c_low < c_high")
        return self

    @property
    def tag(self) -> str:
        """Stable label used in result rows and seed derivation."""
        if self.name == "lqlr_fixed_q":
            return f"lqlr_q{self.q:g}"
        if self.name == "huber" and (self.c_low is not None or self.c_high is not None):
            return f"huber_{self.low:g}_{self.high:g}"
        return self.name

    @property
    def low(self) -> float:
        return self.c_low if self.c_low is not None else settings.HUBER_C_LOW

    @property
    def high(self) -> float:
        return self.c_high if self.c_high is not None else settings.HUBER_C_HIGH

    @property
    def method(self) -> TestMethod:
        return {
            "lqlr_fixed_q": TestMethod.Lqlr,
            "lqlr_adaptive": TestMethod.Lqlr,
            "lr_t": TestMethod.LrT,
            "wilcoxon": TestMethod.Wilcoxon,
            "sign": TestMethod.Sign,
            "huber": TestMethod.Huber,
        }[self.name]


class ContaminationSpec(BaseModel):
    """The contaminating density g of an experiment."""

    kind: ContaminationKind = ContaminationKind.Normal
    # Centre of g, or offset from theta when centred
    mean: float = 0.0
    # Variance of g (ignored for point masses)
    variance: float = Field(default=50.0, gt=0)
    # g moves with the truth location theta
    centred: bool = True

    def build(self, theta: float) -> NormalContamination:
        centre = theta + self.mean if self.centred else self.mean
        if self.kind == ContaminationKind.PointMass:
            return NormalContamination.point_mass(centre)
        return NormalContamination(mean=centre, variance=self.variance)


class ExperimentSpec(BaseModel):
    """A size and power study over a contamination grid."""

    family: FamilyName = FamilyName.NormalLocationScale
    # Standard deviation of f
    sigma: float = Field(default=1.0, gt=0)
    theta_null: float = 0.0
    theta_alt: float = 0.34
    contamination: ContaminationSpec = Field(default_factory=ContaminationSpec)
    eps_grid: list[float] = Field(default_factory=lambda: [0.0, 0.1, 0.2])
    n: int = Field(default=50, ge=3)
    methods: list[MethodSpec]
    # Replicates per cell
    replicates: int = Field(default_factory=lambda: settings.SIM_REPLICATES, ge=100)
    alpha: float = Field(default_factory=lambda: settings.ALPHA, gt=0, lt=1)
    alternative: Alternative = Alternative.TwoSided
    base_seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    # Bootstrap size inside each replicate
    bootstrap: int = Field(default_factory=lambda: settings.SIM_BOOTSTRAP)
    # Grid for the adaptive method
    q_grid: list[float] = Field(default_factory=lambda: list(settings.Q_GRID))
    # Also report rates under critical values simulated from the null model
    oracle_critical_values: bool = False

    @field_validator("alternative", mode="before")
    @classmethod
    def alternative_validator(cls, v: Any) -> Alternative:
        return Alternative.parse(v)

    @field_validator("eps_grid")
    @classmethod
    def eps_grid_validator(cls, v: list[float]) -> list[float]:
        if not v:
            raise ValueError("eps_grid must not be empty")
        if any(not 0 <= e <= 0.5 for e in v):
            raise ValueError("eps_grid values must lie in [0, 0.5]")
        return v

    @field_validator("methods")
    @classmethod
    def methods_validator(cls, v: list[MethodSpec]) -> list[MethodSpec]:
        if not v:
            raise ValueError("at least one method is required")
        tags = [m.tag for m in v]
        if len(set(tags)) != len(tags):
            raise ValueError("duplicate method tags")
        return v

    @field_validator("bootstrap")
    @classmethod
    def bootstrap_validator(cls, v: int) -> int:
        if v < settings.BOOTSTRAP_MIN_SIZE:
            raise ValueError(f"bootstrap must be at least {settings.BOOTSTRAP_MIN_SIZE}")
        return v

    @model_validator(mode="after")
    def alternative_truth_validator(self) -> "ExperimentSpec":
        if self.theta_alt == self.theta_null:
            raise ValueError("theta_alt must differ from theta_null")
        return self

    def build_family(self) -> ParametricFamily:
        if self.family == FamilyName.NormalKnownVariance:
            return NormalKnownVariance(self.sigma)
        return NormalLocationScale()

    def truth(self, theta: float) -> list[float]:
        """Full parameter of f with location theta."""
        if self.family == FamilyName.NormalKnownVariance:
            return [theta]
        return [theta, self.sigma]

    def model(self, theta: float, epsilon: float) -> GrossErrorModel:
        return GrossErrorModel(
            self.build_family(),
            self.truth(theta),
            self.contamination.build(theta),
            epsilon,
        )


class ExperimentRow(BaseModel):
    """One line of the results table."""

    method: str
    # q of a fixed-q LqLR, empty otherwise
    q: float | None = None
    eps: float
    kind: ResultKind
    # Rejection rate
    estimate: float = Field(ge=0, le=1)
    # sqrt(p (1 - p) / M)
    stderr: float
    # Replicates the rate is based on
    M: int
    seed: int

    @field_validator("q", mode="before")
    @classmethod
    def q_validator(cls, v: Any) -> float | None:
        if v is None or v == "":
            return None
        if isinstance(v, float) and math.isnan(v):
            return None
        return v


class CellStatus(BaseModel):
    """Bookkeeping of one (method, eps, kind) cell."""

    method: str
    eps: float
    kind: ResultKind
    attempted: int
    failures: int = 0
    valid: bool = True
    # How the critical values of the cell were obtained
    calibration: str = ""


class QhatSample(BaseModel):
    eps: float
    values: list[float]


class ExperimentResult(BaseModel):
    """Results table plus spec echo."""

    spec: ExperimentSpec
    rows: list[ExperimentRow]
    cells: list[CellStatus] = Field(default_factory=list)
    qhat: list[QhatSample] = Field(default_factory=list)

    def row(self, method: str, eps: float, kind: ResultKind = ResultKind.Power) -> ExperimentRow:
        for row in self.rows:
            if row.method == method and row.eps == eps and row.kind == kind:
                return row
        raise KeyError(f"no row for {method} at eps={eps} ({kind.value})")


class RunConfig(BaseModel):
    """Options shared by the command line subcommands."""

    subcommand: str
    input: Path | None = None
    out: Path | None = None
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED, ge=0)
    format: OutputFormat = OutputFormat.Json

    @field_validator("input")
    @classmethod
    def input_validator(cls, v: Path | None) -> Path | None:
        if v is not None and not v.is_file():
            raise ValueError(f"input file {v} does not exist")
        return v
