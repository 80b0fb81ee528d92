"""
Max-min fairness under a total power budget, solved through its QoS
counterpart: bisection over a common scale s of the SINR targets, where a
probe at s is feasible when the QoS problem with targets s*gamma fits the
budget.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from channel import ChannelSet
from scenario import SolverConfig, SystemConfig, RngSeed, linear_to_db
from .conic import EffectiveChannels, InfeasibleError, solve_power_min
from .penalty import (QoSSolution, HybridBeamformer, RisResponse, PhaseMethod, run_qos,
                      CONVERGED)
from .utils import effective_rows, compute_sinr, write_csv

logger = logging.getLogger(__name__)

FULL_JOINT = "full-joint"
FIXED_PHASES = "fixed-phases"


@dataclass
class BisectionRecord:
    iteration: int
    scale: float
    power: float
    feasible: bool


@dataclass
class MMFSolution:
    beamformer: HybridBeamformer
    ris: RisResponse
    ratio: float
    power_w: float
    scale: float
    sinr: np.ndarray
    trace: List[BisectionRecord] = field(default_factory=list)

    @property
    def ratio_db(self) -> float:
        return linear_to_db(self.ratio)


# a probe returns (solution, power) or None when the scaled targets are unreachable
Probe = Callable[[float], Optional[Tuple[QoSSolution, float]]]


def _fixed_phases_probe(channels: ChannelSet, system: SystemConfig, solver: SolverConfig,
                        b: np.ndarray, x: np.ndarray) -> Probe:
    rows = effective_rows(channels.G, channels.H, b, x, system.N)

    def probe(scale: float):
        target = EffectiveChannels(rows, scale * system.gamma_array, system.sigma2_array, system.D)
        try:
            result = solve_power_min(target, power_cap=solver.power_cap, tol=solver.duality_tol,
                                     max_iters=solver.duality_max_iters)
        except InfeasibleError:
            return None
        solution = QoSSolution(beamformer=HybridBeamformer.from_vector(x, result.W, system.N),
                               ris=RisResponse(np.asarray(b, dtype=complex)), sinr=result.sinr,
                               power_w=result.power, feasible=True, status=CONVERGED,
                               gamma=scale * system.gamma_array)
        return solution, result.power

    return probe


def _full_joint_probe(channels: ChannelSet, system: SystemConfig, solver: SolverConfig,
                      method: Union[PhaseMethod, str], seed: RngSeed) -> Probe:
    warm: List[QoSSolution] = []

    def probe(scale: float):
        scaled = system.replace(sinr_target_db=tuple(v + linear_to_db(scale) for v in system.sinr_target_db))
        solution = run_qos(channels, scaled, solver, method, seed, warm_start=warm[-1] if warm else None)
        if not solution.feasible:
            return None
        warm.append(solution)
        return solution, solution.power_w

    return probe


def bisect_scale(probe: Probe, budget: float, solver: SolverConfig) -> Tuple[QoSSolution, float, List[BisectionRecord]]:
    """Largest target scale whose probe fits the budget, to the configured relative tolerance"""
    trace: List[BisectionRecord] = []

    def run(scale: float):
        outcome = probe(scale)
        fits = outcome is not None and outcome[1] <= budget
        trace.append(BisectionRecord(len(trace), scale, outcome[1] if outcome else float("inf"), fits))
        return outcome if fits else None

    lo = solver.bisection_floor
    best = run(lo)
    if best is None:
        raise InfeasibleError(f"Even the target scale {lo:g} does not fit the power budget {budget:g} W")

    hi = 1.0
    while hi <= solver.bisection_cap:
        outcome = run(hi)
        if outcome is None:
            break
        lo, best = hi, outcome
        hi *= 2.0
    else:
        logger.warning(f"Target scale reached the cap {solver.bisection_cap:g} within budget")
        return best[0], lo, trace

    while (hi - lo) / lo > solver.bisection_tol:
        mid = 0.5 * (lo + hi)
        outcome = run(mid)
        if outcome is None:
            hi = mid
        else:
            lo, best = mid, outcome
    return best[0], lo, trace


def solve_mmf(channels: ChannelSet, system: SystemConfig, solver: SolverConfig, budget_w: float,
              mode: str = FULL_JOINT, ris: Optional[np.ndarray] = None, analog: Optional[np.ndarray] = None,
              method: Union[PhaseMethod, str] = PhaseMethod.JOINT_RCG, seed: RngSeed = RngSeed(),
              trace_path: Optional[Union[str, Path]] = None) -> MMFSolution:
    """Maximize min_k SINR_k / gamma_k subject to transmit power <= budget_w"""
    if not budget_w > 0:
        raise ValueError(f"Power budget must be positive, got {budget_w}")
    channels.check(system)
    if mode == FIXED_PHASES:
        if ris is None or analog is None:
            raise ValueError("Fixed-phases mode needs both the RIS vector and the analog phases")
        probe = _fixed_phases_probe(channels, system, solver, np.asarray(ris), np.asarray(analog))
    elif mode == FULL_JOINT:
        probe = _full_joint_probe(channels, system, solver, method, seed)
    else:
        raise ValueError(f"Unknown MMF mode: {mode}")

    solution, scale, trace = bisect_scale(probe, budget_w, solver)
    rows = effective_rows(channels.G, channels.H, solution.ris.b, solution.beamformer.x, system.N)
    sinr = compute_sinr(rows, solution.beamformer.W, system.sigma2_array)
    ratio = float(np.min(sinr / system.gamma_array))
    logger.info(f"mmf/{mode}: scale={scale:.5g} min SINR ratio={linear_to_db(ratio):.2f} dB "
                f"power={solution.power_w:.4g} W after {len(trace)} probes")
    if trace_path is not None:
        write_bisection_trace(trace, trace_path)
    return MMFSolution(beamformer=solution.beamformer, ris=solution.ris, ratio=ratio,
                       power_w=solution.power_w, scale=scale, sinr=sinr, trace=trace)


def solve_mmf_fixed(channels: ChannelSet, system: SystemConfig, solver: SolverConfig, budget_w: float,
                    ris: np.ndarray, analog: np.ndarray) -> MMFSolution:
    return solve_mmf(channels, system, solver, budget_w, FIXED_PHASES, ris=ris, analog=analog)


def write_bisection_trace(trace: List[BisectionRecord], path: Union[str, Path]):
    write_csv(path, ["iter", "scale", "power", "feasible"],
              ([r.iteration, r.scale, r.power, r.feasible] for r in trace))
