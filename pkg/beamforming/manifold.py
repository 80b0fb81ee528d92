"""
Riemannian optimization on products of complex circles.

A point is a complex array whose entries have unit modulus. A 2-D array is
read as a stack of unit-norm rows (each row a point on a complex sphere); a
1-D array is the circle case with one entry per row. Euclidean gradients use
the convention grad = 2 * df/dconj(z), so the first-order change of f along d
is Re(<grad, d>).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Union

import numpy as np

from .utils import write_csv

logger = logging.getLogger(__name__)

UNIT_TOL = 1e-9

Objective = Callable[[np.ndarray], float]
Gradient = Callable[[np.ndarray], np.ndarray]
TraceCallback = Callable[[int, float, float], None]


@dataclass
class SmoothProblem:
    objective: Objective
    euclidean_gradient: Gradient

    def gradient_error(self, point: np.ndarray, h: float = 1e-6) -> float:
        """Relative error of the supplied gradient against central differences"""
        analytic = np.asarray(self.euclidean_gradient(point), dtype=complex)
        numeric = finite_difference_gradient(self.objective, point, h)
        scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-300)
        return float(np.linalg.norm(analytic - numeric) / scale)


def finite_difference_gradient(objective: Objective, point: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences on real and imaginary parts, packed as re + 1j*im"""
    point = np.asarray(point, dtype=complex)
    grad = np.zeros_like(point)
    for index in np.ndindex(point.shape):
        for unit in (1.0, 1j):
            step = np.zeros_like(point)
            step[index] = h * unit
            derivative = (objective(point + step) - objective(point - step)) / (2.0 * h)
            grad[index] += derivative * unit
    return grad


def _radial(values: np.ndarray, point: np.ndarray) -> np.ndarray:
    product = np.real(values * point.conj())
    if point.ndim == 1:
        return product
    return product.sum(axis=-1, keepdims=True)


def _check_shapes(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"Shape mismatch: {a.shape} vs {b.shape}")


def inner(a: np.ndarray, b: np.ndarray) -> float:
    """Real inner product Re(a^H b) used on every tangent space"""
    return float(np.real(np.vdot(a, b)))


def normalize(values: np.ndarray) -> np.ndarray:
    """Map onto the manifold (entrywise modulus or row norm)"""
    values = np.asarray(values, dtype=complex)
    if values.ndim == 1:
        return values / np.abs(values)
    return values / np.linalg.norm(values, axis=-1, keepdims=True)


def is_on_manifold(point: np.ndarray, atol: float = UNIT_TOL) -> bool:
    point = np.asarray(point)
    norms = np.abs(point) if point.ndim == 1 else np.linalg.norm(point, axis=-1)
    return bool(np.all(np.abs(norms - 1.0) <= atol))


def is_tangent(vector: np.ndarray, point: np.ndarray, atol: float = UNIT_TOL) -> bool:
    return bool(np.all(np.abs(_radial(vector, point)) <= atol))


def riemannian_grad(egrad: np.ndarray, point: np.ndarray) -> np.ndarray:
    """Project a Euclidean gradient onto the tangent space at point"""
    egrad = np.asarray(egrad, dtype=complex)
    point = np.asarray(point, dtype=complex)
    _check_shapes(egrad, point)
    return egrad - _radial(egrad, point) * point


def transport(tangent: np.ndarray, new_point: np.ndarray) -> np.ndarray:
    """Move a tangent vector into the tangent space at new_point"""
    tangent = np.asarray(tangent, dtype=complex)
    new_point = np.asarray(new_point, dtype=complex)
    _check_shapes(tangent, new_point)
    return tangent - _radial(tangent, new_point) * new_point


def retract(point: np.ndarray, direction: np.ndarray, step: float, retries: int = 30) -> np.ndarray:
    """Step along a tangent direction and renormalize back onto the manifold"""
    if not step > 0:
        raise ValueError(f"Retraction step must be positive, got {step}")
    point = np.asarray(point, dtype=complex)
    direction = np.asarray(direction, dtype=complex)
    _check_shapes(point, direction)
    for _ in range(retries + 1):
        moved = point + step * direction
        norms = np.abs(moved) if moved.ndim == 1 else np.linalg.norm(moved, axis=-1)
        if np.all(norms > 0):
            return normalize(moved)
        step *= 0.5
    raise FloatingPointError("Retraction hit a zero entry after repeated step halving")


@dataclass
class ManifoldResult:
    point: np.ndarray
    trace: List[float] = field(default_factory=list)
    grad_norms: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    stalled: bool = False
    phases: Optional[np.ndarray] = None

    @property
    def objective(self) -> float:
        return self.trace[-1]


def _finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise FloatingPointError(f"Non-finite {what} encountered during manifold optimization")
    return value


def rcg_minimize(problem: SmoothProblem, init: np.ndarray, tol: float = 1e-7, max_iters: int = 200,
                 solver=None, callback: Optional[TraceCallback] = None) -> ManifoldResult:
    """Riemannian conjugate gradient with Polak-Ribiere+ directions and Armijo backtracking.

    solver supplies the Armijo constants (armijo_c1, armijo_contraction,
    armijo_step, armijo_max_halvings, retraction_retries); defaults are used
    when it is None. The first trial step moves the largest entry of the
    search direction by armijo_step.
    """
    c1 = getattr(solver, "armijo_c1", 1e-4)
    contraction = getattr(solver, "armijo_contraction", 0.5)
    initial_step = getattr(solver, "armijo_step", 1.0)
    max_halvings = getattr(solver, "armijo_max_halvings", 50)
    retries = getattr(solver, "retraction_retries", 30)

    point = normalize(init)
    if not is_on_manifold(init, 1e-6):
        logger.debug("rcg_minimize: initial point renormalized onto the manifold")
    value = _finite(float(problem.objective(point)), "objective")
    grad = riemannian_grad(problem.euclidean_gradient(point), point)
    grad_norm = _finite(float(np.linalg.norm(grad)), "gradient")
    direction = -grad
    restart_every = point.size
    result = ManifoldResult(point=point, trace=[value], grad_norms=[grad_norm])
    if callback:
        callback(0, value, grad_norm)

    since_restart = 0
    for iteration in range(1, max_iters + 1):
        if grad_norm <= tol:
            result.converged = True
            break
        slope = inner(grad, direction)
        if slope >= 0:
            direction = -grad
            slope = -grad_norm ** 2
            since_restart = 0

        step = initial_step / np.max(np.abs(direction))
        accepted = False
        for _ in range(max_halvings):
            candidate = retract(point, direction, step, retries)
            candidate_value = float(problem.objective(candidate))
            if np.isfinite(candidate_value) and candidate_value <= value + c1 * step * slope:
                accepted = True
                break
            step *= contraction

        if not accepted:
            if since_restart == 0:
                logger.debug(f"rcg_minimize: Armijo stalled at iteration {iteration}, |grad|={grad_norm:.3e}")
                result.stalled = True
                break
            direction = -grad
            since_restart = 0
            continue

        new_grad = riemannian_grad(problem.euclidean_gradient(candidate), candidate)
        new_norm = _finite(float(np.linalg.norm(new_grad)), "gradient")
        moved_grad = transport(grad, candidate)
        moved_direction = transport(direction, candidate)
        since_restart += 1
        if since_restart >= restart_every:
            mix = 0.0
            since_restart = 0
        else:
            mix = max(0.0, inner(new_grad, new_grad - moved_grad) / max(grad_norm ** 2, 1e-300))
        direction = -new_grad + mix * moved_direction

        assert is_on_manifold(candidate)
        point, value, grad, grad_norm = candidate, candidate_value, new_grad, new_norm
        result.trace.append(value)
        result.grad_norms.append(grad_norm)
        result.iterations = iteration
        if callback:
            callback(iteration, value, grad_norm)
    else:
        result.converged = grad_norm <= tol

    result.point = point
    return result


@dataclass
class PhaseProblem:
    """Objective of a circle-manifold problem read as a function of the phase vector"""
    problem: SmoothProblem

    def objective(self, phases: np.ndarray) -> float:
        return float(self.problem.objective(np.exp(1j * phases)))

    def gradient(self, phases: np.ndarray) -> np.ndarray:
        z = np.exp(1j * phases)
        egrad = np.asarray(self.problem.euclidean_gradient(z), dtype=complex)
        return -np.imag(egrad.conj() * z)


def sca_phase_minimize(problem: SmoothProblem, init: np.ndarray, solver=None,
                       callback: Optional[TraceCallback] = None) -> ManifoldResult:
    """Successive convex approximation over phases: gradient steps with Armijo-chosen kappa.

    Each step is phi <- phi - kappa * grad, kappa the largest of beta * kappa0**i
    with f(phi) - f(phi_new) >= zeta * kappa * |grad|^2. Stops when the decrease
    falls below eps2, the gradient vanishes, or after sca_max_iters.
    """
    zeta = getattr(solver, "sca_zeta", 0.1)
    beta = getattr(solver, "sca_beta", 1.0)
    kappa0 = getattr(solver, "sca_kappa0", 0.5)
    max_trials = getattr(solver, "armijo_max_halvings", 50)
    max_iters = getattr(solver, "sca_max_iters", 200)
    eps2 = getattr(solver, "eps2", 1e-4)
    eps1 = getattr(solver, "eps1", 1e-7)

    phase_problem = PhaseProblem(problem)
    phases = np.asarray(init, dtype=float).copy()
    if not np.all(np.isfinite(phases)):
        raise FloatingPointError("SCA initial phases must be finite")
    value = _finite(phase_problem.objective(phases), "objective")
    result = ManifoldResult(point=np.exp(1j * phases), trace=[value])

    for iteration in range(1, max_iters + 1):
        grad = phase_problem.gradient(phases)
        squared = float(grad @ grad)
        grad_norm = _finite(np.sqrt(squared), "gradient")
        result.grad_norms.append(grad_norm)
        if grad_norm <= eps1:
            result.converged = True
            break

        kappa = beta
        accepted = False
        for _ in range(max_trials):
            candidate = phases - kappa * grad
            candidate_value = phase_problem.objective(candidate)
            if np.isfinite(candidate_value) and value - candidate_value >= zeta * kappa * squared:
                accepted = True
                break
            kappa *= kappa0
        if not accepted:
            logger.debug(f"sca_phase_minimize: Armijo failed at iteration {iteration}")
            result.stalled = True
            break

        decrease = value - candidate_value
        phases, value = candidate, candidate_value
        result.trace.append(value)
        result.iterations = iteration
        if callback:
            callback(iteration, value, grad_norm)
        if decrease < eps2:
            result.converged = True
            break

    result.point = np.exp(1j * phases)
    result.phases = phases
    return result


def write_rcg_trace(result: ManifoldResult, path: Union[str, Path]):
    """One row per recorded iterate; grad_norm is the Riemannian gradient norm at that iterate"""
    rows = []
    for iteration, value in enumerate(result.trace):
        grad_norm = result.grad_norms[iteration] if iteration < len(result.grad_norms) else float("nan")
        rows.append([iteration, value, grad_norm])
    write_csv(path, ["iteration", "objective", "grad_norm"], rows)
