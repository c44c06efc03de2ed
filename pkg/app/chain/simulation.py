import json
from pathlib import Path

import numpy as np
import pandas as pd

from app.chain import ChainBase
from app.chain.competitor import CompetitorChain
from app.chain.lqlr import ADAPTIVE, LqlrChain
from app.core.config import settings
from app.log import logger
from app.schemas.exception import DomainException, LqlrException, SelectionException
from app.schemas.experiment import (
    CellStatus,
    ExperimentResult,
    ExperimentRow,
    ExperimentSpec,
    MethodSpec,
    QhatSample,
)
from app.schemas.hypothesis import HypothesisSpec, TestResult
from app.schemas.types import ResultKind
from app.utils.seed import SeedUtils
from app.utils.stats import StatsUtils
from app.utils.system import SystemUtils

CSV_COLUMNS = ["method", "q", "eps", "kind", "estimate", "stderr", "M", "seed"]

_CALIBRATION = {
    "lqlr_fixed_q": "shift-bootstrap",
    "lqlr_adaptive": "shift-bootstrap",
    "lr_t": "student-t",
    "wilcoxon": "signed-rank",
    "sign": "binomial",
    "huber": "shift-bootstrap, p1/p0 at the q=1 fits (interpretation)",
}


class SimulationChain(ChainBase):
    """Seeded Monte Carlo size and power studies.

    Replicate i of a (eps, kind) cell draws its sample from
    ``derive(base_seed, "data", eps_index, kind, i)``, so every method sees the
    same samples; randomness inside a method (its bootstrap) comes from
    ``derive(base_seed, method_tag, eps_index, kind, i)``.
    """

    def __init__(self, parallel: bool = True):
        super().__init__(parallel)
        self.lqlr = LqlrChain(parallel)
        self.competitor = CompetitorChain(parallel)

    @staticmethod
    def hypothesis(spec: ExperimentSpec) -> HypothesisSpec:
        return HypothesisSpec(
            family=spec.build_family(),
            theta0=[spec.theta_null],
            alternative=spec.alternative,
            alpha=spec.alpha,
        )

    def run_method(
        self, method: MethodSpec, sample: np.ndarray, spec: ExperimentSpec, seed: int
    ) -> TestResult:
        """One test of one method on one replicate sample."""
        hyp = self.hypothesis(spec)
        if method.name == "lqlr_fixed_q":
            return self.lqlr.lqlr_test(sample, hyp, q=method.q, B=spec.bootstrap, seed=seed)
        if method.name == "lqlr_adaptive":
            return self.lqlr.lqlr_test(
                sample, hyp, q=ADAPTIVE, B=spec.bootstrap, seed=seed, grid=spec.q_grid
            )
        if method.name == "lr_t":
            return self.competitor.t_test(sample, spec.theta_null, spec.alternative, spec.alpha)
        if method.name == "wilcoxon":
            return self.competitor.wilcoxon_signed_rank(
                sample, spec.theta_null, spec.alternative, spec.alpha
            )
        if method.name == "sign":
            return self.competitor.sign_test(
                sample, spec.theta_null, spec.alternative, spec.alpha
            )
        return self.competitor.huber_censored_lr(
            sample, hyp, method.low, method.high, B=spec.bootstrap, seed=seed
        )

    @staticmethod
    def __truth(spec: ExperimentSpec, kind: ResultKind) -> float:
        if kind in (ResultKind.Size, ResultKind.SizeOracle):
            return spec.theta_null
        return spec.theta_alt

    def __oracle_values(self, spec: ExperimentSpec) -> dict[tuple[str, int], float]:
        """Critical values of the fixed-q LqLR simulated from the null model."""
        hyp = self.hypothesis(spec)
        values = {}
        for method in spec.methods:
            if method.name != "lqlr_fixed_q":
                continue
            for eps_index, eps in enumerate(spec.eps_grid):
                values[(method.tag, eps_index)] = self.lqlr.oracle_critical_value(
                    spec.model(spec.theta_null, eps),
                    hyp,
                    method.q,
                    spec.n,
                    spec.replicates,
                    SeedUtils.derive(spec.base_seed, method.tag, eps_index, "oracle"),
                )
        return values

    def run_experiment(self, spec: ExperimentSpec) -> ExperimentResult:
        """Size and power of every method at every contamination level."""
        logger.info(
            f"experiment: {len(spec.methods)} methods x {len(spec.eps_grid)} eps x "
            f"{spec.replicates} replicates, n={spec.n}, B={spec.bootstrap}"
        )
        oracle = self.__oracle_values(spec) if spec.oracle_critical_values else {}
        rows: list[ExperimentRow] = []
        cells: list[CellStatus] = []
        qhat: list[QhatSample] = []

        for eps_index, eps in enumerate(spec.eps_grid):
            for kind in (ResultKind.Size, ResultKind.Power):
                model = spec.model(self.__truth(spec, kind), eps)

                def replicate(i: int, model=model, kind=kind, eps_index=eps_index):
                    sample = model.sample(
                        spec.n,
                        SeedUtils.derive(spec.base_seed, "data", eps_index, kind.value, i),
                    )
                    outcome = {}
                    for method in spec.methods:
                        seed = SeedUtils.derive(
                            spec.base_seed, method.tag, eps_index, kind.value, i
                        )
                        try:
                            outcome[method.tag] = self.run_method(method, sample, spec, seed)
                        except LqlrException as err:
                            logger.debug(f"{method.tag} replicate {i} failed: {err}")
                            outcome[method.tag] = None
                    return outcome

                outcomes = self.run_replicates(replicate, range(spec.replicates))
                for method in spec.methods:
                    results = [o[method.tag] for o in outcomes]
                    rows.append(self.__row(spec, method, eps, kind, results, cells))
                    key = (method.tag, eps_index)
                    if key in oracle:
                        oracle_kind = (
                            ResultKind.SizeOracle
                            if kind == ResultKind.Size
                            else ResultKind.PowerOracle
                        )
                        rows.append(
                            self.__oracle_row(
                                spec, method, eps, oracle_kind, results, oracle[key], cells
                            )
                        )
                    if method.name == "lqlr_adaptive" and kind == ResultKind.Size:
                        qhat.append(
                            QhatSample(
                                eps=eps,
                                values=[r.q_used for r in results if r is not None],
                            )
                        )
        memory = SystemUtils.memory_usage()
        logger.info(f"experiment done, {len(rows)} rows, rss {memory[0] >> 20} MiB")
        return ExperimentResult(spec=spec, rows=rows, cells=cells, qhat=qhat)

    @staticmethod
    def __cell(spec, method, eps, kind, attempted, failures, cells) -> CellStatus:
        valid = failures <= settings.SIM_CELL_FAILURE_LIMIT * attempted
        cell = CellStatus(
            method=method.tag,
            eps=eps,
            kind=kind,
            attempted=attempted,
            failures=failures,
            valid=valid,
            calibration="null-model simulation"
            if kind in (ResultKind.SizeOracle, ResultKind.PowerOracle)
            else _CALIBRATION[method.name],
        )
        if not valid:
            logger.warning(
                f"cell {method.tag} eps={eps:g} {kind.value} invalid: "
                f"{failures} of {attempted} replicates failed"
            )
        cells.append(cell)
        return cell

    def __row(self, spec, method, eps, kind, results, cells) -> ExperimentRow:
        done = [r for r in results if r is not None]
        self.__cell(spec, method, eps, kind, len(results), len(results) - len(done), cells)
        rate = float(np.mean([r.reject for r in done])) if done else 0.0
        logger.info(f"{method.tag} eps={eps:g} {kind.value}={rate:.4f} (M={len(done)})")
        return self.__make_row(spec, method, eps, kind, rate, len(done))

    def __oracle_row(self, spec, method, eps, kind, results, critical, cells) -> ExperimentRow:
        done = [r for r in results if r is not None]
        self.__cell(spec, method, eps, kind, len(results), len(results) - len(done), cells)
        rate = float(np.mean([r.statistic >= critical for r in done])) if done else 0.0
        return self.__make_row(spec, method, eps, kind, rate, len(done))

    @staticmethod
    def __make_row(spec, method, eps, kind, rate, m) -> ExperimentRow:
        return ExperimentRow(
            method=method.tag,
            q=method.q,
            eps=eps,
            kind=kind,
            estimate=rate,
            stderr=StatsUtils.rate_stderr(rate, m) if m else 0.0,
            M=m,
            seed=spec.base_seed,
        )

    def qhat_histogram(
        self, spec: ExperimentSpec, eps_grid: list[float] | None = None
    ) -> list[QhatSample]:
        """q_hat over the null replicates of each contamination level.

        Uses the same samples as the size cells of ``run_experiment``.
        """
        if not any(m.name == "lqlr_adaptive" for m in spec.methods):
            raise DomainException("qhat_histogram needs the lqlr_adaptive method")
        eps_grid = self._resolve(eps_grid, spec.eps_grid)
        hyp = self.hypothesis(spec)
        samples = []
        for eps in eps_grid:
            if eps not in spec.eps_grid:
                raise DomainException(
                    f"eps={eps:g} is not on the experiment grid {spec.eps_grid}"
                )
            eps_index = spec.eps_grid.index(eps)
            model = spec.model(spec.theta_null, eps)

            def replicate(i: int, model=model, eps_index=eps_index) -> float | None:
                sample = model.sample(
                    spec.n,
                    SeedUtils.derive(
                        spec.base_seed, "data", eps_index, ResultKind.Size.value, i
                    ),
                )
                try:
                    return self.lqlr.select_q(sample, hyp, spec.q_grid).q_hat
                except LqlrException:
                    return None

            values = [
                v
                for v in self.run_replicates(replicate, range(spec.replicates))
                if v is not None
            ]
            if not values:
                raise SelectionException(
                    f"q selection failed on every replicate at eps={eps:g}"
                )
            samples.append(
                QhatSample(eps=eps, values=[max(v, settings.Q_FLOOR) for v in values])
            )
            logger.info(f"q_hat at eps={eps:g}: median {np.median(values):.3f}")
        return samples

    # ---- persistence ----

    @staticmethod
    def rows_frame(rows: list[ExperimentRow]) -> pd.DataFrame:
        frame = pd.DataFrame([row.model_dump(mode="json") for row in rows], columns=CSV_COLUMNS)
        return frame

    def write_csv(self, result: ExperimentResult, path: Path) -> Path:
        """Results table; floats are written in their shortest exact form."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.rows_frame(result.rows).to_csv(path, index=False)
        return path

    @staticmethod
    def read_csv(path: Path) -> list[ExperimentRow]:
        frame = pd.read_csv(
            path, dtype={"method": str, "kind": str}, float_precision="round_trip"
        )
        # object dtype hands back plain Python scalars, empty q cells become None
        frame = frame.astype(object).where(frame.notna(), None)
        return [ExperimentRow(**record) for record in frame.to_dict(orient="records")]

    @staticmethod
    def write_json(result: ExperimentResult, path: Path) -> Path:
        """JSON mirror with the spec echo."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(result.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        return path
