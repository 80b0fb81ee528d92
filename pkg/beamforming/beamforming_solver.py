import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np

from channel import ChannelSet
from scenario import SolverConfig, SystemConfig, RngSeed, random_phases
from .mmf import MMFSolution, solve_mmf, FULL_JOINT, FIXED_PHASES
from .penalty import QoSSolution, PhaseMethod, run_qos
from .sequential import ris_maxmin_design, run_sequential

logger = logging.getLogger(__name__)

ALGORITHMS = (
    "penalty-alt",
    "penalty-joint-rcg",
    "penalty-joint-sca",
    "sequential",
    "random-theta",
    "sdr-theta",
    "fully-digital",
)

PENALTY_METHODS = {
    "penalty-alt": PhaseMethod.ALTERNATING_RCG,
    "penalty-joint-rcg": PhaseMethod.JOINT_RCG,
    "penalty-joint-sca": PhaseMethod.JOINT_SCA,
}


class BeamformingSolver:
    def __init__(self, system: SystemConfig, solver: SolverConfig):
        """Bind the scenario and solver settings shared by every algorithm"""
        self.system = system
        self.solver = solver

    def solve(self, channels: ChannelSet, algorithm: str, seed: RngSeed = RngSeed(),
              trace_path: Optional[Union[str, Path]] = None) -> QoSSolution:
        """Run one QoS algorithm on one channel realization"""
        if algorithm not in ALGORITHMS:
            raise ValueError(f"Unknown algorithm '{algorithm}', expected one of {', '.join(ALGORITHMS)}")
        logger.debug(f"Running {algorithm} on realization {seed.stream}")

        if algorithm in PENALTY_METHODS:
            return run_qos(channels, self.system, self.solver, PENALTY_METHODS[algorithm], seed,
                           trace_path=trace_path)
        if algorithm == "sequential":
            return run_sequential(channels, self.system, self.solver, seed)
        if algorithm == "random-theta":
            b = random_phases(seed.generator("baseline"), self.system.F, self.system.ris_phases)
            return self._fixed_ris(channels, b, seed, trace_path)
        if algorithm == "sdr-theta":
            ris, _ = ris_maxmin_design(channels, self.system, self.solver, seed)
            return self._fixed_ris(channels, ris.b, seed, trace_path)
        return self.fully_digital(channels, seed, trace_path)

    def _fixed_ris(self, channels: ChannelSet, b: np.ndarray, seed: RngSeed, trace_path) -> QoSSolution:
        return run_qos(channels, self.system, self.solver, PhaseMethod.JOINT_RCG, seed,
                       fixed_ris=b, trace_path=trace_path)

    def fully_digital(self, channels: ChannelSet, seed: RngSeed = RngSeed(),
                      trace_path: Optional[Union[str, Path]] = None) -> QoSSolution:
        """Penalty design with one RF chain per antenna"""
        system = self.system.replace(N=self.system.M)
        return run_qos(channels, system, self.solver, PhaseMethod.JOINT_RCG, seed, trace_path=trace_path)

    def solve_mmf(self, channels: ChannelSet, budget_w: float, mode: str = FULL_JOINT,
                  seed: RngSeed = RngSeed(), trace_path: Optional[Union[str, Path]] = None) -> MMFSolution:
        """Max-min fairness at a power budget; fixed-phases mode keeps the sequential design's Theta and V"""
        if mode == FIXED_PHASES:
            design = run_sequential(channels, self.system, self.solver, seed)
            return solve_mmf(channels, self.system, self.solver, budget_w, FIXED_PHASES,
                             ris=design.ris.b, analog=design.beamformer.x, trace_path=trace_path)
        return solve_mmf(channels, self.system, self.solver, budget_w, FULL_JOINT, seed=seed,
                         trace_path=trace_path)
