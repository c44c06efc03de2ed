from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.utils.system import SystemUtils


class NumericsConfModel(BaseModel):
    """Resolved runtime resources for the numerical chains."""

    # Worker threads for bootstrap and simulation replicates
    workers: int = 1
    # Solver tolerance
    tol: float = 1e-8
    # Solver iteration cap
    max_iter: int = 500


class ConfigModel(BaseModel):
    model_config = ConfigDict(extra="ignore")

    CONFIG_DIR: str | None = None

    # ==================== Basic Application Configuration ====================
    # Project name
    PROJECT_NAME: str = "lqlr"
    # Seed used by randomized commands when none is given
    DEFAULT_SEED: int = 20240601
    # Worker threads, 0 means one per CPU
    WORKERS: int = 0

    # ==================== Testing Configuration ====================
    # Significance level
    ALPHA: float = 0.05
    # Bootstrap resamples
    BOOTSTRAP_SIZE: int = 1000
    # Smallest accepted bootstrap size
    BOOTSTRAP_MIN_SIZE: int = 100
    # Fraction of redrawn resamples above which the bootstrap fails
    BOOTSTRAP_REDRAW_LIMIT: float = 0.10
    # Smallest q the selection routine may return
    Q_FLOOR: float = 0.5
    # Adaptive q grid
    Q_GRID: list[float] = Field(
        default_factory=lambda: [round(0.5 + 0.05 * i, 2) for i in range(11)]
    )
    # Huber censoring bounds
    HUBER_C_LOW: float = 0.1
    HUBER_C_HIGH: float = 10.0
    # Largest signed-rank sample size handled by the exact distribution
    WILCOXON_EXACT_MAX_N: int = 25

    # ==================== Estimation Configuration ====================
    # Convergence tolerance (step and score sup-norm)
    MLQE_TOL: float = 1e-8
    # Iteration cap
    MLQE_MAX_ITER: int = 500
    # Lower bound for scale iterates
    SIGMA_FLOOR: float = 1e-6
    # Multi-start is switched on automatically below this q
    MULTISTART_Q_BELOW: float = 0.7

    # ==================== Asymptotics Configuration ====================
    # Absolute quadrature tolerance
    QUAD_TOL: float = 1e-8
    # Integration half width in units of the widest component scale
    QUAD_HALF_WIDTH: float = 40.0
    # Monte Carlo draws for expectations and weighted chi-square laws
    MC_DRAWS: int = 1_000_000
    # Eigenvalues below this are treated as the structural zeros
    EIGEN_ZERO_TOL: float = 1e-8

    # ==================== Simulation Configuration ====================
    # Replicates per cell
    SIM_REPLICATES: int = 1000
    # Bootstrap size inside replicates
    SIM_BOOTSTRAP: int = 400
    # Fraction of failed replicates that invalidates a cell
    SIM_CELL_FAILURE_LIMIT: float = 0.05

    @field_validator("ALPHA")
    @classmethod
    def alpha_validator(cls, v: float) -> float:
        if not 0 < v < 1:
            raise ValueError("ALPHA must lie in (0, 1)")
        return v

    @field_validator("Q_GRID")
    @classmethod
    def q_grid_validator(cls, v: list[float]) -> list[float]:
        if not v or any(not 0 < q <= 1 for q in v):
            raise ValueError("Q_GRID values must lie in (0, 1]")
        return sorted(set(v))


class Settings(BaseSettings, ConfigModel):
    model_config = SettingsConfigDict(
        case_sensitive=True,
        env_file=SystemUtils.get_env_path(),
        env_file_encoding="utf-8",
        extra="ignore",
    )

    @property
    def CONFIG_PATH(self) -> Path:
        if self.CONFIG_DIR:
            return Path(self.CONFIG_DIR)
        return self.ROOT_PATH / "config"

    @property
    def LOG_PATH(self) -> Path:
        return self.CONFIG_PATH / "logs"

    @property
    def ROOT_PATH(self) -> Path:
        return Path(__file__).parents[2]

    @property
    def CONF(self) -> NumericsConfModel:
        """Returns the resolved numerical resource model."""
        return NumericsConfModel(
            workers=self.WORKERS or SystemUtils.cpu_count(),
            tol=self.MLQE_TOL,
            max_iter=self.MLQE_MAX_ITER,
        )


settings = Settings()
