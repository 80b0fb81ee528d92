"""
Low-complexity sequential design: RIS first, then the analog beamformer by OMP
over an overlapping codebook, then the optimal digital beamformer. No outer
iteration.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from scipy.special import logsumexp, softmax

from channel import ChannelSet, ArrayGeometry, upa_responses
from scenario import SolverConfig, SystemConfig, RngSeed, PhaseSet, project_phases, watts_to_dbm
from .conic import EffectiveChannels, InfeasibleError, PowerMinResult, solve_power_min
from .manifold import SmoothProblem, normalize, rcg_minimize
from .penalty import (QoSSolution, RisResponse, HybridBeamformer, solve_fixed_phases,
                      CONVERGED, INFEASIBLE)
from .utils import cascaded_rows, write_csv

logger = logging.getLogger(__name__)

SMOOTHING = 1e-9


def cascade_matrices(G: np.ndarray, H: np.ndarray) -> np.ndarray:
    """eta_k = diag(h_k^H) G stacked as K x F x M"""
    return H.conj()[:, :, None] * G[None, :, :]


def ris_maxmin_objective(G: np.ndarray, H: np.ndarray, b: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """min_k |h_k^H Theta G|^2 - gamma_k sum_{j!=k} |h_k^H Theta G G^H Theta^H h_j| for one b or columns of b"""
    b = np.asarray(b, dtype=complex)
    single = b.ndim == 1
    B = b[:, None] if single else b
    amplitudes = np.einsum("fc,kfm->kcm", B.conj(), cascade_matrices(G, H))
    power = np.sum(np.abs(amplitudes) ** 2, axis=2)
    cross = np.abs(np.einsum("kcm,jcm->kjc", amplitudes, amplitudes.conj()))
    K = H.shape[0]
    cross[np.arange(K), np.arange(K), :] = 0.0
    values = np.min(power - np.asarray(gamma, dtype=float)[:, None] * cross.sum(axis=1), axis=0)
    return float(values[0]) if single else values


class RelaxedMaxMin:
    """Smoothed max-min objective on a low-rank factor R (rows of unit norm) with B = R R^H"""

    def __init__(self, eta: np.ndarray, gamma: np.ndarray):
        self.eta = eta
        self.gamma = np.asarray(gamma, dtype=float)
        K = eta.shape[0]
        self.off_diagonal = ~np.eye(K, dtype=bool)
        self.temperature = 1.0

    def _terms(self, R: np.ndarray):
        P = np.einsum("kfm,fr->kmr", self.eta.conj(), R)
        C = np.einsum("kmr,jmr->kj", P.conj(), P)
        modulus = np.sqrt(np.abs(C) ** 2 + SMOOTHING ** 2)
        margins = np.real(np.diag(C)) - self.gamma * np.sum(np.where(self.off_diagonal, modulus, 0.0), axis=1)
        return P, C, modulus, margins

    def margins(self, R: np.ndarray) -> np.ndarray:
        return self._terms(R)[3]

    def objective(self, R: np.ndarray) -> float:
        margins = self.margins(R)
        return float(self.temperature * logsumexp(-margins / self.temperature))

    def gradient(self, R: np.ndarray) -> np.ndarray:
        P, C, modulus, margins = self._terms(R)
        weights = softmax(-margins / self.temperature)
        EP = np.einsum("kfm,jmr->kjfr", self.eta, P)
        grad = np.zeros_like(R)
        for k in range(len(margins)):
            g_k = 2.0 * EP[k, k]
            for j in np.flatnonzero(self.off_diagonal[k]):
                g_k = g_k - self.gamma[k] * (C[k, j].conj() * EP[k, j] + C[k, j] * EP[j, k]) / modulus[k, j]
            grad -= weights[k] * g_k
        return grad

    def problem(self) -> SmoothProblem:
        return SmoothProblem(self.objective, self.gradient)


def _relaxed_candidates(relaxed: RelaxedMaxMin, F: int, solver: SolverConfig, rng: np.random.Generator) -> np.ndarray:
    """One annealed relaxation solve followed by Gaussian randomization; columns are unprojected candidates"""
    rank = min(F, solver.relaxation_rank)
    R = normalize(rng.standard_normal((F, rank)) + 1j * rng.standard_normal((F, rank)))
    for temperature in np.geomspace(solver.softmin_start, solver.softmin_end, solver.softmin_stages):
        relaxed.temperature = float(temperature)
        R = rcg_minimize(relaxed.problem(), R, tol=solver.eps1, max_iters=solver.max_rcg_iters, solver=solver).point

    draws = (rng.standard_normal((rank, solver.randomizations))
             + 1j * rng.standard_normal((rank, solver.randomizations))) / np.sqrt(2.0)
    leading = np.linalg.svd(R, full_matrices=False)[0][:, :1]
    return np.concatenate([leading, R @ draws], axis=1)


def ris_maxmin_design(channels: ChannelSet, system: SystemConfig, solver: SolverConfig,
                      seed: RngSeed = RngSeed()) -> Tuple[RisResponse, float]:
    """RIS design maximizing the worst user's margin; returns the best randomized candidate and its value.

    With a discrete RIS alphabet every candidate is refined by coordinate ascent
    before the best one is picked.
    """
    rng = seed.generator("randomization")
    eta = cascade_matrices(channels.G, channels.H)
    F = channels.F
    spectral = np.linalg.norm(eta, ord=2, axis=(1, 2))
    eta = eta / np.sqrt(np.max(spectral) ** 2 * F)

    relaxed = RelaxedMaxMin(eta, system.gamma_array)
    candidates = np.concatenate([_relaxed_candidates(relaxed, F, solver, rng)
                                 for _ in range(solver.relaxation_restarts)], axis=1)
    candidates[candidates == 0] = 1.0
    candidates = project_phases(candidates, system.ris_phases)

    if system.ris_phases.is_continuous:
        values = ris_maxmin_objective(channels.G, channels.H, candidates, system.gamma_array)
    else:
        candidates, values = refine_discrete(channels.G, channels.H, candidates, system.gamma_array,
                                             system.ris_phases)
    best = int(np.argmax(values))
    logger.debug(f"RIS max-min: best of {candidates.shape[1]} candidates = {values[best]:.4e}")
    return RisResponse(candidates[:, best].copy()), float(values[best])


def refine_discrete(G: np.ndarray, H: np.ndarray, b: np.ndarray, gamma: np.ndarray, phase_set: PhaseSet,
                    max_passes: int = 10) -> Tuple[np.ndarray, Union[float, np.ndarray]]:
    """Coordinate ascent over single elements of discrete RIS vectors.

    b is one vector or a matrix whose columns are refined independently. A move
    is taken only when it raises the objective by more than a relative 1e-12.
    """
    B = np.array(b, dtype=complex, ndmin=2, copy=True)
    single = np.ndim(b) == 1
    if single:
        B = B.T
    values = ris_maxmin_objective(G, H, B, gamma)
    for _ in range(max_passes):
        improved = False
        for f in range(B.shape[0]):
            best_values = values.copy()
            best_points = B[f].copy()
            for point in phase_set.elements():
                trial = B.copy()
                trial[f] = point
                trial_values = ris_maxmin_objective(G, H, trial, gamma)
                better = trial_values > best_values + 1e-12 * np.abs(best_values)
                best_values = np.where(better, trial_values, best_values)
                best_points = np.where(better, point, best_points)
            improved = improved or bool(np.any(best_values > values))
            B[f], values = best_points, best_values
        if not improved:
            break
    if single:
        return B[:, 0], float(values[0])
    return B, values


def fully_digital_reference(channels: ChannelSet, ris: RisResponse, system: SystemConfig,
                            solver: SolverConfig = SolverConfig()) -> PowerMinResult:
    """Power-optimal fully digital beamformer W_opt (M x K) for the fixed RIS"""
    rows = cascaded_rows(channels.G, channels.H, ris.b)
    return solve_power_min(EffectiveChannels(rows, system.gamma_array, system.sigma2_array, 1.0),
                           power_cap=solver.power_cap, tol=solver.duality_tol,
                           max_iters=solver.duality_max_iters)


@dataclass
class Codebook:
    """Overlapping UPA codebook for a sub-connected array of N chains"""
    mu: int
    geometry: ArrayGeometry
    N: int
    columns: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 1 <= self.mu:
            raise ValueError(f"Overlapping coefficient must be a positive integer, got {self.mu}")
        if self.geometry.size % self.N != 0:
            raise ValueError(f"{self.geometry.size} antennas cannot be split over {self.N} chains")
        n_z, n_y = self.geometry.rows, self.geometry.cols
        azimuths = 2.0 * np.pi * np.arange(self.mu * n_y) / (self.mu * n_y)
        elevations = 2.0 * np.pi * np.arange(self.mu * n_z) / (self.mu * n_z)
        az, el = np.meshgrid(azimuths, elevations, indexing="ij")
        self.columns = upa_responses(az.reshape(-1), el.reshape(-1), self.geometry)

    @property
    def M(self) -> int:
        return self.geometry.size

    @property
    def D(self) -> int:
        return self.M // self.N

    def support(self, chain: int) -> slice:
        return slice(chain * self.D, (chain + 1) * self.D)

    def masked(self, chain: int) -> np.ndarray:
        """Sub-codebook of one chain: every column zeroed outside that chain's antennas"""
        A = np.zeros_like(self.columns)
        A[self.support(chain)] = self.columns[self.support(chain)]
        return A


@dataclass
class OmpResult:
    V_blocks: np.ndarray
    residual: float
    history: List[float]
    selected: List[int]


def omp_analog(W_opt: np.ndarray, codebook: Codebook, system: SystemConfig) -> OmpResult:
    """Greedy per-chain column selection with least-squares refit of the baseband matrix"""
    residual = W_opt.copy()
    chosen = np.zeros((codebook.M, 0), dtype=complex)
    selected: List[int] = []
    history = [float(np.linalg.norm(residual))]
    for chain in range(codebook.N):
        pool = codebook.masked(chain)
        scores = np.linalg.norm(pool.conj().T @ residual, axis=1)
        index = int(np.argmax(scores))
        selected.append(index)
        chosen = np.concatenate([chosen, pool[:, index:index + 1]], axis=1)
        gram = chosen.conj().T @ chosen + 1e-10 * np.eye(chosen.shape[1])
        baseband = np.linalg.solve(gram, chosen.conj().T @ W_opt)
        residual = W_opt - chosen @ baseband
        history.append(float(np.linalg.norm(residual)))

    blocks = np.stack([codebook.columns[codebook.support(n), index] * np.sqrt(codebook.M)
                       for n, index in enumerate(selected)])
    blocks = project_phases(blocks, system.analog_phases)
    return OmpResult(V_blocks=blocks, residual=history[-1], history=history, selected=selected)


def run_sequential(channels: ChannelSet, system: SystemConfig, solver: SolverConfig,
                   seed: RngSeed = RngSeed()) -> QoSSolution:
    """RIS max-min design, fully digital reference, OMP analog design and the final digital solve"""
    started = time.perf_counter()
    channels.check(system)
    ris, worst = ris_maxmin_design(channels, system, solver, seed)
    diagnostics = {"ris_maxmin": worst}
    try:
        reference = fully_digital_reference(channels, ris, system, solver)
    except InfeasibleError as e:
        logger.warning(f"Sequential design: fully digital reference infeasible: {str(e)}")
        return _infeasible(system, ris, diagnostics, started)
    diagnostics["fully_digital_power"] = reference.power

    geometry = ArrayGeometry(system.bs_rows, system.bs_cols)
    best = None
    for mu in solver.overlap_factors:
        omp = omp_analog(reference.W, Codebook(mu, geometry, system.N), system)
        diagnostics[f"omp_residual_mu{mu}"] = omp.residual
        try:
            candidate = solve_fixed_phases(channels, system, ris.b, omp.V_blocks.reshape(-1), CONVERGED, solver)
        except InfeasibleError:
            diagnostics[f"power_mu{mu}"] = float("inf")
            continue
        diagnostics[f"power_mu{mu}"] = candidate.power_w
        if best is None or candidate.power_w < best.power_w:
            best = candidate
            diagnostics["mu"] = mu
    if best is None:
        logger.warning("Sequential design: no overlapping coefficient gave a feasible hybrid beamformer")
        return _infeasible(system, ris, diagnostics, started)

    best.diagnostics = diagnostics
    best.wall_clock_s = time.perf_counter() - started
    logger.info(f"sequential: power={best.power_dbm:.2f} dBm (fully digital "
                f"{watts_to_dbm(reference.power):.2f} dBm, mu={diagnostics['mu']})")
    return best


def _infeasible(system: SystemConfig, ris: RisResponse, diagnostics, started: float) -> QoSSolution:
    W = np.zeros((system.N, system.K), dtype=complex)
    x = np.ones(system.M, dtype=complex)
    return QoSSolution(beamformer=HybridBeamformer.from_vector(x, W, system.N), ris=ris,
                       sinr=np.zeros(system.K), power_w=float("inf"), feasible=False, status=INFEASIBLE,
                       gamma=system.gamma_array, diagnostics=diagnostics,
                       wall_clock_s=time.perf_counter() - started)


def write_diagnostics(solution: QoSSolution, path: Union[str, Path]):
    write_csv(path, ["stage", "value"], sorted(solution.diagnostics.items()))
