"""
Two-layer penalty solver for joint hybrid beamforming and RIS design under
per-user SINR targets.

The equalities t_kj = h_k^H Theta G V w_j are moved into the objective
D*|W|^2 + rho/2 * sum |h_k^H Theta G V w_j - t_kj|^2. The inner layer runs block
coordinate descent over W, the phases (Theta, V) and t; the outer layer grows
rho until the stopping indicator xi = max |h_k^H Theta G V w_j - t_kj|^2 is
below eps3. The final phases are projected onto their discrete sets and W is
re-solved exactly.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from channel import ChannelSet
from scenario import SolverConfig, SystemConfig, RngSeed, project_phases, random_phases, watts_to_dbm, PhaseSet
from .conic import EffectiveChannels, InfeasibleError, project_sinr_row, solve_power_min
from .manifold import ManifoldResult, SmoothProblem, rcg_minimize, sca_phase_minimize
from .utils import ScaledChannels, scale_channels, cascaded_rows, effective_rows, to_db, write_csv

logger = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
INFEASIBLE = "infeasible"
INFEASIBLE_AFTER_QUANTIZATION = "infeasible_after_quantization"


class PhaseMethod(str, Enum):
    ALTERNATING_RCG = "alternating-rcg"
    JOINT_RCG = "joint-rcg"
    JOINT_SCA = "joint-sca"


@dataclass
class HybridBeamformer:
    """Sub-connected hybrid beamformer: row n of V_blocks drives antennas nD..(n+1)D-1 of chain n"""
    V_blocks: np.ndarray
    W: np.ndarray

    @property
    def N(self) -> int:
        return self.V_blocks.shape[0]

    @property
    def D(self) -> int:
        return self.V_blocks.shape[1]

    @property
    def x(self) -> np.ndarray:
        return self.V_blocks.reshape(-1)

    @classmethod
    def from_vector(cls, x: np.ndarray, W: np.ndarray, N: int) -> "HybridBeamformer":
        return cls(V_blocks=np.asarray(x, dtype=complex).reshape(N, -1), W=np.asarray(W, dtype=complex))

    def full_V(self) -> np.ndarray:
        V = np.zeros((self.N * self.D, self.N), dtype=complex)
        for n in range(self.N):
            V[n * self.D:(n + 1) * self.D, n] = self.V_blocks[n]
        return V

    def transmit_power(self) -> float:
        return float(self.D * np.sum(np.abs(self.W) ** 2))


@dataclass
class RisResponse:
    """Reflection vector b with Theta = diag(conj(b))"""
    b: np.ndarray

    @property
    def F(self) -> int:
        return self.b.size

    def theta(self) -> np.ndarray:
        return np.diag(self.b.conj())


@dataclass
class TraceRecord:
    outer_iter: int
    inner_iter: int
    rho: float
    objective: float
    xi: float


@dataclass
class PenaltyState:
    b: np.ndarray
    x: np.ndarray
    W: np.ndarray
    t: np.ndarray
    rho: float
    trace: List[TraceRecord] = field(default_factory=list)
    steps: List[float] = field(default_factory=list)
    rcg_iterations: int = 0
    phase_trace: Optional[ManifoldResult] = None


@dataclass
class QoSSolution:
    beamformer: HybridBeamformer
    ris: RisResponse
    sinr: np.ndarray
    power_w: float
    feasible: bool
    status: str
    gamma: Optional[np.ndarray] = None
    outer_iterations: int = 0
    inner_iterations: int = 0
    rcg_iterations: int = 0
    wall_clock_s: float = 0.0
    xi: float = float("nan")
    trace: List[TraceRecord] = field(default_factory=list)
    diagnostics: Dict[str, float] = field(default_factory=dict)
    phase_trace: Optional[ManifoldResult] = None

    @property
    def power_dbm(self) -> float:
        return watts_to_dbm(self.power_w)

    @property
    def min_sinr_db(self) -> float:
        return float(np.min(to_db(self.sinr)))

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def digital_update(effective: np.ndarray, t: np.ndarray, rho: float, D: float) -> np.ndarray:
    """Minimizer of D*|W|^2 + rho/2 * |effective W - t|^2 over W"""
    N = effective.shape[1]
    gram = effective.conj().T @ effective
    A1 = 2.0 * D * np.eye(N) + rho * gram
    assert rho > 0 and D > 0
    return rho * np.linalg.solve(A1, effective.conj().T @ t)


def penalized_objective(effective: np.ndarray, W: np.ndarray, t: np.ndarray, rho: float, D: float) -> float:
    residual = effective @ W - t
    return float(D * np.sum(np.abs(W) ** 2) + 0.5 * rho * np.sum(np.abs(residual) ** 2))


def stopping_indicator(effective: np.ndarray, W: np.ndarray, t: np.ndarray) -> float:
    return float(np.max(np.abs(effective @ W - t) ** 2))


def sinr_cone_update(received: np.ndarray, gamma: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    """Project every row of the received-amplitude matrix onto its user's SINR cone"""
    t = np.empty_like(received, dtype=complex)
    for k in range(received.shape[0]):
        t[k] = project_sinr_row(received[k], k, float(gamma[k]), float(np.sqrt(sigma2[k])))
    return t


class PhaseObjective:
    """Residual sum_{k,j} |b^H c_kj x - t_kj|^2 with its Euclidean gradients in b and x"""

    def __init__(self, G: np.ndarray, H: np.ndarray, W: np.ndarray, t: np.ndarray, N: int):
        self.G = G
        self.H = H
        self.t = t
        self.N = N
        self.W_rep = np.repeat(W, G.shape[1] // N, axis=0)

    def received(self, b: np.ndarray, x: np.ndarray) -> np.ndarray:
        rows = cascaded_rows(self.G, self.H, b)
        return rows @ (x[:, None] * self.W_rep)

    def value(self, b: np.ndarray, x: np.ndarray) -> float:
        return float(np.sum(np.abs(self.received(b, x) - self.t) ** 2))

    def grad_b(self, b: np.ndarray, x: np.ndarray) -> np.ndarray:
        U = self.G @ (x[:, None] * self.W_rep)
        E = (self.H.conj() * b.conj()[None, :]) @ U - self.t
        return 2.0 * np.sum(self.H.conj().T * (U @ E.conj().T), axis=1)

    def grad_x(self, b: np.ndarray, x: np.ndarray) -> np.ndarray:
        R = cascaded_rows(self.G, self.H, b)
        E = R @ (x[:, None] * self.W_rep) - self.t
        return 2.0 * np.sum(self.W_rep.conj() * (R.conj().T @ E), axis=1)

    def problem(self, block: str, b: np.ndarray, x: np.ndarray) -> SmoothProblem:
        """Restrict to one block ("ris", "analog") or the stacked z = [b; x] ("joint")"""
        F = b.size
        if block == "ris":
            return SmoothProblem(lambda v: self.value(v, x), lambda v: self.grad_b(v, x))
        if block == "analog":
            return SmoothProblem(lambda v: self.value(b, v), lambda v: self.grad_x(b, v))
        if block == "joint":
            return SmoothProblem(
                lambda z: self.value(z[:F], z[F:]),
                lambda z: np.concatenate([self.grad_b(z[:F], z[F:]), self.grad_x(z[:F], z[F:])]))
        raise ValueError(f"Unknown phase block: {block}")


class PenaltySolver:
    """Penalty-based QoS solver on one channel realization.

    With fixed_ris the RIS block is held at the given vector. When D == 1 the
    analog block is the all-ones vector and is not optimized (fully digital).
    """

    def __init__(self, channels: ChannelSet, system: SystemConfig, solver: SolverConfig,
                 method: Union[PhaseMethod, str] = PhaseMethod.JOINT_RCG,
                 fixed_ris: Optional[np.ndarray] = None):
        channels.check(system)
        self.channels = channels
        self.system = system
        self.solver = solver
        self.method = PhaseMethod(method)
        self.scaled: ScaledChannels = scale_channels(channels, system.sigma2_array)
        self.gamma = system.gamma_array
        self.unit_noise = np.ones(system.K)
        self.fixed_ris = None if fixed_ris is None else np.asarray(fixed_ris, dtype=complex)
        self.fixed_analog = system.D == 1

    def effective(self, state: PenaltyState) -> np.ndarray:
        return effective_rows(self.scaled.G, self.scaled.H, state.b, state.x, self.system.N)

    def objective(self, state: PenaltyState) -> float:
        return penalized_objective(self.effective(state), state.W, state.t, state.rho, self.system.D)

    def xi(self, state: PenaltyState) -> float:
        return stopping_indicator(self.effective(state), state.W, state.t)

    def initial_state(self, seed: RngSeed, warm_start: Optional["QoSSolution"] = None) -> PenaltyState:
        rng = seed.generator("init")
        continuous = PhaseSet(None)
        b = random_phases(rng, self.system.F, continuous)
        x = random_phases(rng, self.system.M, continuous)
        t = (rng.standard_normal((self.system.K, self.system.K))
             + 1j * rng.standard_normal((self.system.K, self.system.K))) / np.sqrt(2.0)
        # t starts inside the SINR cones
        t = sinr_cone_update(t, self.gamma, self.unit_noise)
        if warm_start is not None:
            b = warm_start.ris.b.copy()
            x = warm_start.beamformer.x.copy()
        if self.fixed_ris is not None:
            b = self.fixed_ris.copy()
        if self.fixed_analog:
            x = np.ones(self.system.M, dtype=complex)
        state = PenaltyState(b=b, x=x, W=np.zeros((self.system.N, self.system.K), dtype=complex),
                             t=t, rho=self.solver.rho0)
        state.W = self.update_digital(state)
        return state

    def update_digital(self, state: PenaltyState) -> np.ndarray:
        return digital_update(self.effective(state), state.t, state.rho, self.system.D)

    def build_phase_problem(self, state: PenaltyState, block: str = "joint") -> SmoothProblem:
        objective = PhaseObjective(self.scaled.G, self.scaled.H, state.W, state.t, self.system.N)
        return objective.problem(block, state.b, state.x)

    def _blocks(self) -> List[str]:
        free_ris = self.fixed_ris is None
        free_analog = not self.fixed_analog
        if free_ris and free_analog:
            return ["ris", "analog"] if self.method is PhaseMethod.ALTERNATING_RCG else ["joint"]
        return (["ris"] if free_ris else []) + (["analog"] if free_analog else [])

    def update_phases(self, state: PenaltyState):
        """One phase-block update with W and t fixed; returns the new (b, x)"""
        b, x = state.b, state.x
        for block in self._blocks():
            problem = self.build_phase_problem(PenaltyState(b=b, x=x, W=state.W, t=state.t, rho=state.rho), block)
            init = {"ris": b, "analog": x, "joint": np.concatenate([b, x])}[block]
            if self.method is PhaseMethod.JOINT_SCA:
                result = sca_phase_minimize(problem, np.angle(init), self.solver)
            else:
                result = rcg_minimize(problem, init, tol=self.solver.eps1,
                                      max_iters=self.solver.max_rcg_iters, solver=self.solver)
            state.rcg_iterations += result.iterations
            if state.phase_trace is None:
                state.phase_trace = result
            if result.stalled:
                logger.debug(f"Phase update on block {block} stalled after {result.iterations} iterations")
            if block == "ris":
                b = result.point
            elif block == "analog":
                x = result.point
            else:
                b, x = result.point[:self.system.F], result.point[self.system.F:]
        return b, x

    def update_t(self, state: PenaltyState) -> np.ndarray:
        received = self.effective(state) @ state.W
        return sinr_cone_update(received, self.gamma, self.unit_noise)

    def inner_loop(self, state: PenaltyState, outer: int) -> int:
        previous = self.objective(state)
        inner = 0
        for inner in range(1, self.solver.max_inner + 1):
            state.W = self.update_digital(state)
            state.steps.append(self.objective(state))
            state.b, state.x = self.update_phases(state)
            state.steps.append(self.objective(state))
            state.t = self.update_t(state)
            current = self.objective(state)
            state.steps.append(current)
            state.trace.append(TraceRecord(outer, inner, state.rho, current, self.xi(state)))
            if previous - current < self.solver.eps2 * abs(previous):
                break
            previous = current
        return inner

    def run(self, seed: RngSeed = RngSeed(), warm_start: Optional["QoSSolution"] = None,
            trace_path: Optional[Union[str, Path]] = None) -> QoSSolution:
        started = time.perf_counter()
        state = self.initial_state(seed, warm_start)
        status = MAX_ITERATIONS
        inner_total = 0
        outer = 0
        xi = self.xi(state)
        for outer in range(1, self.solver.max_outer + 1):
            inner_total += self.inner_loop(state, outer)
            xi = self.xi(state)
            logger.debug(f"outer {outer}: rho={state.rho:.4g} objective={self.objective(state):.6g} xi={xi:.3e}")
            if xi < self.solver.eps3:
                status = CONVERGED
                break
            state.rho /= self.solver.c
        if status == MAX_ITERATIONS:
            logger.warning(f"Penalty loop stopped after {outer} outer iterations with xi={xi:.3e}")

        solution = self.finalize(state, status)
        solution.outer_iterations = outer
        solution.inner_iterations = inner_total
        solution.rcg_iterations = state.rcg_iterations
        solution.xi = xi
        solution.trace = state.trace
        solution.phase_trace = state.phase_trace
        solution.wall_clock_s = time.perf_counter() - started
        if trace_path is not None:
            write_trace(state.trace, trace_path)
        return solution

    def finalize(self, state: PenaltyState, status: str) -> QoSSolution:
        """Project phases onto their sets and re-solve W exactly on the physical channels"""
        b = project_phases(state.b, self.system.ris_phases)
        x = project_phases(state.x, self.system.analog_phases)
        try:
            return self.resolve(b, x, status)
        except InfeasibleError as e:
            quantized = not (self.system.ris_phases.is_continuous and self.system.analog_phases.is_continuous)
            if not quantized:
                logger.warning(f"Final digital re-solve infeasible: {str(e)}")
                return self.infeasible_solution(b, x)
            logger.warning(f"Re-solve infeasible after phase quantization, keeping continuous phases: {str(e)}")
        b = project_phases(state.b, PhaseSet(None))
        x = project_phases(state.x, PhaseSet(None))
        try:
            solution = self.resolve(b, x, INFEASIBLE_AFTER_QUANTIZATION)
        except InfeasibleError:
            return self.infeasible_solution(b, x)
        solution.feasible = False
        return solution

    def resolve(self, b: np.ndarray, x: np.ndarray, status: str) -> QoSSolution:
        return solve_fixed_phases(self.channels, self.system, b, x, status, self.solver)

    def infeasible_solution(self, b: np.ndarray, x: np.ndarray) -> QoSSolution:
        W = np.zeros((self.system.N, self.system.K), dtype=complex)
        return QoSSolution(beamformer=HybridBeamformer.from_vector(x, W, self.system.N), ris=RisResponse(b),
                           sinr=np.zeros(self.system.K), power_w=float("inf"), feasible=False,
                           status=INFEASIBLE, gamma=self.gamma)


def solve_fixed_phases(channels: ChannelSet, system: SystemConfig, b: np.ndarray, x: np.ndarray,
                       status: str = CONVERGED, solver: Optional[SolverConfig] = None) -> QoSSolution:
    """Optimal digital beamformer for fixed RIS and analog phases, in physical units"""
    solver = solver or SolverConfig()
    rows = effective_rows(channels.G, channels.H, b, x, system.N)
    result = solve_power_min(EffectiveChannels(rows, system.gamma_array, system.sigma2_array, system.D),
                             power_cap=solver.power_cap, tol=solver.duality_tol,
                             max_iters=solver.duality_max_iters)
    return QoSSolution(beamformer=HybridBeamformer.from_vector(x, result.W, system.N), ris=RisResponse(b),
                       sinr=result.sinr, power_w=result.power, feasible=True, status=status,
                       gamma=system.gamma_array)


def run_qos(channels: ChannelSet, system: SystemConfig, solver: SolverConfig,
            method: Union[PhaseMethod, str] = PhaseMethod.JOINT_RCG, seed: RngSeed = RngSeed(),
            fixed_ris: Optional[np.ndarray] = None, warm_start: Optional[QoSSolution] = None,
            trace_path: Optional[Union[str, Path]] = None) -> QoSSolution:
    """Run the penalty algorithm on one realization"""
    penalty = PenaltySolver(channels, system, solver, method, fixed_ris=fixed_ris)
    solution = penalty.run(seed, warm_start=warm_start, trace_path=trace_path)
    logger.info(f"penalty/{penalty.method.value}: status={solution.status} power={solution.power_dbm:.2f} dBm "
                f"outer={solution.outer_iterations} xi={solution.xi:.2e}")
    return solution


def write_trace(trace: List[TraceRecord], path: Union[str, Path]):
    write_csv(path, ["outer_iter", "inner_iter", "rho", "objective", "xi"],
              ([r.outer_iter, r.inner_iter, r.rho, r.objective, r.xi] for r in trace))
