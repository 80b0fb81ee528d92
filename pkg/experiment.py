"""
Monte-Carlo experiment harness: sweeps over scenario parameters, paired
channel realizations shared by every algorithm, CSV rows and a summary.
"""

import asyncio
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from beamforming import BeamformingSolver, ALGORITHMS
from beamforming.conic import InfeasibleError
from beamforming.mmf import FULL_JOINT, FIXED_PHASES
from beamforming.utils import write_csv
from channel import ClusterParams, sample_channels
from scenario import (SystemConfig, SolverConfig, RngSeed, ScenarioError, PhaseSet,
                      dbm_to_watts, watts_to_dbm, parse_bits)

logger = logging.getLogger(__name__)

SWEEP_AXES = ("sinr_target", "ris_elements", "ris_distance", "phase_bits", "none")

RESULT_HEADER = ["realization", "algorithm", "sweep_value", "power_dbm", "min_sinr_db", "feasible",
                 "status", "outer_iterations", "inner_iterations", "rcg_iterations"]
MMF_HEADER = ["realization", "mode", "budget_dbm", "min_ratio_db", "power_dbm", "probes", "feasible"]


def apply_sweep(system: SystemConfig, axis: str, value: Any) -> SystemConfig:
    """Scenario variant for one point of a sweep axis"""
    if axis == "none":
        return system
    try:
        if axis == "sinr_target":
            return system.replace(sinr_target_db=(float(value),))
        if axis == "ris_elements":
            elements = int(value)
            if elements % system.F1 != 0:
                raise ScenarioError(f"{elements} RIS elements do not fill rows of {system.F1}")
            return system.replace(F2=elements // system.F1)
        if axis == "ris_distance":
            return system.replace(ris_position=(float(value), system.ris_position[1]))
        if axis == "phase_bits":
            bits = parse_bits(value)
            return system.replace(Q1=bits, Q2=bits)
    except (TypeError, ValueError) as e:
        if isinstance(e, ScenarioError):
            raise
        raise ScenarioError(f"Invalid {axis} value {value!r}: {e}") from e
    raise ScenarioError(f"Unknown sweep axis: {axis}")


def value_label(axis: str, value: Any) -> str:
    if axis == "none":
        return ""
    if axis == "phase_bits":
        return PhaseSet(parse_bits(value)).label()
    return str(value)


@dataclass(frozen=True)
class ExperimentSpec:
    system: SystemConfig
    solver: SolverConfig
    params: ClusterParams = ClusterParams()
    algorithms: Tuple[str, ...] = ("penalty-joint-rcg",)
    axis: str = "none"
    values: Tuple[Any, ...] = ()
    realizations: int = 20
    seed: int = 0
    output: Optional[str] = None
    workers: int = 1
    record_timing: bool = False

    def __post_init__(self):
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown or not self.algorithms:
            raise ScenarioError(f"Unknown or missing algorithms: {unknown}")
        if self.axis not in SWEEP_AXES:
            raise ScenarioError(f"Unknown sweep axis '{self.axis}', expected one of {', '.join(SWEEP_AXES)}")
        if self.axis != "none" and not self.values:
            raise ScenarioError(f"Sweep over {self.axis} needs a nonempty value list")
        if self.realizations < 1:
            raise ScenarioError(f"At least one realization is required, got {self.realizations}")
        for value in self.points():
            apply_sweep(self.system, self.axis, value)

    def points(self) -> Tuple[Any, ...]:
        return self.values if self.axis != "none" else (None,)


@dataclass
class ResultRow:
    realization: int
    algorithm: str
    sweep_value: str
    power_dbm: float
    min_sinr_db: float
    feasible: bool
    status: str
    outer_iterations: int
    inner_iterations: int
    rcg_iterations: int
    wall_ms: float = 0.0

    def cells(self, record_timing: bool = False) -> List[Any]:
        cells = [self.realization, self.algorithm, self.sweep_value, self.power_dbm, self.min_sinr_db,
                 self.feasible, self.status, self.outer_iterations, self.inner_iterations, self.rcg_iterations]
        if record_timing:
            cells.append(self.wall_ms)
        return cells


@dataclass
class MMFRow:
    realization: int
    mode: str
    budget_dbm: float
    min_ratio_db: float
    power_dbm: float
    probes: int
    feasible: bool = True

    def cells(self) -> List[Any]:
        return [self.realization, self.mode, self.budget_dbm, self.min_ratio_db, self.power_dbm, self.probes,
                self.feasible]


@dataclass
class SummaryRow:
    algorithm: str
    sweep_value: str
    mean_dbm: float
    std_dbm: float
    feasible: int
    total: int


def run_realization(spec: ExperimentSpec, realization: int) -> List[ResultRow]:
    """Every (sweep value, algorithm) pair on one realization; channels depend only on the seed stream"""
    seed = RngSeed(spec.seed, realization)
    rows: List[ResultRow] = []
    for value in spec.points():
        system = apply_sweep(spec.system, spec.axis, value)
        channels = sample_channels(system, spec.params, seed)
        solver = BeamformingSolver(system, spec.solver)
        for algorithm in spec.algorithms:
            try:
                solution = solver.solve(channels, algorithm, seed)
            except Exception as e:
                logger.error(f"Error running {algorithm} on realization {realization}: {str(e)}")
                raise
            rows.append(ResultRow(
                realization=realization,
                algorithm=algorithm,
                sweep_value=value_label(spec.axis, value),
                power_dbm=solution.power_dbm,
                min_sinr_db=solution.min_sinr_db,
                feasible=solution.feasible,
                status=solution.status,
                outer_iterations=solution.outer_iterations,
                inner_iterations=solution.inner_iterations,
                rcg_iterations=solution.rcg_iterations,
                wall_ms=1000.0 * solution.wall_clock_s,
            ))
    logger.info(f"Realization {realization} done: {len(rows)} runs, "
                f"{sum(not r.feasible for r in rows)} infeasible")
    return rows


def run_mmf_realization(spec: ExperimentSpec, realization: int, budget_dbm: float, mode: str) -> MMFRow:
    seed = RngSeed(spec.seed, realization)
    channels = sample_channels(spec.system, spec.params, seed)
    try:
        solution = BeamformingSolver(spec.system, spec.solver).solve_mmf(channels, dbm_to_watts(budget_dbm), mode, seed)
    except InfeasibleError as e:
        logger.warning(f"Realization {realization}: {str(e)}")
        return MMFRow(realization, mode, budget_dbm, float("-inf"), float("inf"), 0, feasible=False)
    return MMFRow(realization, mode, budget_dbm, solution.ratio_db, watts_to_dbm(solution.power_w),
                  len(solution.trace))


def summarize(rows: List[ResultRow]) -> List[SummaryRow]:
    """Mean and standard deviation of the feasible powers per (algorithm, sweep value)"""
    groups: Dict[Tuple[str, str], List[ResultRow]] = {}
    for row in rows:
        groups.setdefault((row.algorithm, row.sweep_value), []).append(row)
    summary = []
    for (algorithm, value), members in groups.items():
        powers = np.array([r.power_dbm for r in members if r.feasible])
        mean = float(powers.mean()) if powers.size else float("nan")
        std = float(powers.std()) if powers.size else float("nan")
        summary.append(SummaryRow(algorithm, value, mean, std, int(powers.size), len(members)))
    return summary


def format_summary(summary: List[SummaryRow]) -> str:
    lines = [f"{'algorithm':<20} {'value':>12} {'power [dBm]':>20} {'feasible':>10}"]
    for s in summary:
        lines.append(f"{s.algorithm:<20} {s.sweep_value:>12} {s.mean_dbm:>10.2f} ± {s.std_dbm:<7.2f} "
                     f"{s.feasible:>5}/{s.total}")
    return "\n".join(lines)


class ExperimentRunner:
    """Dispatches realizations to a process pool and gathers rows in realization order"""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self.logger = logging.getLogger(__name__)
        self.rows: List[ResultRow] = []

    async def _dispatch(self, func, *args) -> List[Any]:
        realizations = range(self.spec.realizations)
        if self.spec.workers <= 1:
            return [func(self.spec, r, *args) for r in realizations]
        loop = asyncio.get_running_loop()
        with ProcessPoolExecutor(max_workers=self.spec.workers) as pool:
            futures = [loop.run_in_executor(pool, func, self.spec, r, *args) for r in realizations]
            return list(await asyncio.gather(*futures))

    async def run(self) -> List[ResultRow]:
        self.logger.info(f"Running {len(self.spec.algorithms)} algorithm(s) over {self.spec.realizations} "
                         f"realizations, sweep={self.spec.axis}")
        try:
            results = await self._dispatch(run_realization)
        except Exception as e:
            self.logger.error(f"Experiment failed: {str(e)}")
            raise
        self.rows = [row for rows in results for row in rows]
        if self.spec.output:
            self.write(self.spec.output)
        return self.rows

    async def run_mmf(self, budget_dbm: float, mode: str = FULL_JOINT) -> List[MMFRow]:
        if mode not in (FULL_JOINT, FIXED_PHASES):
            raise ValueError(f"Unknown MMF mode: {mode}")
        try:
            rows = await self._dispatch(run_mmf_realization, budget_dbm, mode)
        except Exception as e:
            self.logger.error(f"MMF experiment failed: {str(e)}")
            raise
        if self.spec.output:
            write_csv(self.spec.output, MMF_HEADER, (row.cells() for row in rows))
        return rows

    def write(self, path: str):
        header = RESULT_HEADER + (["wall_ms"] if self.spec.record_timing else [])
        write_csv(path, header, (row.cells(self.spec.record_timing) for row in self.rows))

    def summary(self) -> List[SummaryRow]:
        return summarize(self.rows)

    @property
    def any_infeasible(self) -> bool:
        return any(not row.feasible for row in self.rows)


def run_experiment(spec: ExperimentSpec) -> Tuple[List[ResultRow], List[SummaryRow]]:
    """Run a spec to completion; writes the CSV when spec.output is set"""
    runner = ExperimentRunner(spec)
    rows = asyncio.run(runner.run())
    return rows, runner.summary()
