"""
Convex subproblems: optimal power-minimizing digital beamforming under SINR
targets (uplink-downlink duality) and the per-user SINR cone projection.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.optimize import brentq

from .utils import compute_sinr

logger = logging.getLogger(__name__)


class InfeasibleError(RuntimeError):
    """The SINR targets cannot be met (or not within the configured power cap)"""


@dataclass
class EffectiveChannels:
    """Row k is the effective channel h_k^H Theta G V (length N); power is reported as D * sum |w_k|^2"""
    rows: np.ndarray
    gamma: np.ndarray
    sigma2: np.ndarray
    D: float = 1.0

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=complex))
        K = self.rows.shape[0]
        self.gamma = np.broadcast_to(np.asarray(self.gamma, dtype=float), (K,)).copy()
        self.sigma2 = np.broadcast_to(np.asarray(self.sigma2, dtype=float), (K,)).copy()
        if K < 1:
            raise ValueError("At least one user is required")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("Effective channels must be finite")
        if np.any(self.gamma <= 0) or np.any(self.sigma2 <= 0) or self.D <= 0:
            raise ValueError("SINR targets, noise powers and D must be positive")

    @property
    def K(self) -> int:
        return self.rows.shape[0]

    @property
    def N(self) -> int:
        return self.rows.shape[1]

    def normalized(self) -> np.ndarray:
        """Channel vectors c_k = conj(row_k) / sigma_k as rows, so row_k w = c_k^H w / sigma_k"""
        return self.rows.conj() / np.sqrt(self.sigma2)[:, None]


@dataclass
class PowerMinResult:
    W: np.ndarray
    power: float
    sinr: np.ndarray
    iterations: int = 0


def _outer_sum(C: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.eye(C.shape[1], dtype=complex) + C.T @ (weights[:, None] * C.conj())


def balance_powers(channels: EffectiveChannels, directions: np.ndarray) -> np.ndarray:
    """Per-user powers that make every SINR exactly tight for fixed unit beam directions (columns)"""
    C = channels.normalized()
    gains = np.abs(C.conj() @ directions) ** 2
    psi = -gains
    psi[np.diag_indices_from(psi)] = np.diag(gains) / channels.gamma
    try:
        powers = np.linalg.solve(psi, np.ones(channels.K))
    except np.linalg.LinAlgError as e:
        raise InfeasibleError("Singular power-balancing system") from e
    if not np.all(np.isfinite(powers)) or np.any(powers <= 0):
        raise InfeasibleError("Targets not reachable with these beam directions")
    return powers


def solve_power_min(channels: EffectiveChannels, power_cap: float = 1e6, tol: float = 1e-10,
                    max_iters: int = 10000) -> PowerMinResult:
    """Minimize D * sum |w_k|^2 subject to SINR_k >= gamma_k.

    Uplink power fixed point lambda_k = gamma_k / c_k^H (I + sum_{j!=k} lambda_j c_j c_j^H)^-1 c_k
    on noise-normalized channels, then MMSE directions and tight downlink powers.
    """
    C = channels.normalized()
    K = channels.K
    norms = np.sum(np.abs(C) ** 2, axis=1)
    if np.any(norms <= 0):
        raise InfeasibleError("A user has an all-zero effective channel")
    reference = float(np.sum(channels.gamma / norms))
    limit = power_cap * reference

    lam = channels.gamma / norms
    iterations = 0
    for iterations in range(1, max_iters + 1):
        total = _outer_sum(C, lam)
        updated = np.empty(K)
        for k in range(K):
            c = C[k]
            others = total - lam[k] * np.outer(c, c.conj())
            quad = float(np.real(c.conj() @ linalg.solve(others, c, assume_a="her")))
            updated[k] = channels.gamma[k] / quad
        change = np.max(np.abs(updated - lam) / updated)
        lam = updated
        if not np.all(np.isfinite(lam)) or lam.sum() > limit:
            logger.debug(f"solve_power_min: uplink powers exceeded the cap after {iterations} iterations")
            raise InfeasibleError(f"Uplink power exceeded {power_cap:g} x the interference-free power")
        if change < tol:
            break
    else:
        raise InfeasibleError(f"Duality fixed point did not converge in {max_iters} iterations")

    directions = linalg.solve(_outer_sum(C, lam), C.T, assume_a="her")
    directions /= np.linalg.norm(directions, axis=0, keepdims=True)
    powers = balance_powers(channels, directions)
    W = directions * np.sqrt(powers)[None, :]
    sinr = compute_sinr(channels.rows, W, channels.sigma2)
    power = float(channels.D * np.sum(powers))
    return PowerMinResult(W=W, power=power, sinr=sinr, iterations=iterations)


def mrt_power(channels: EffectiveChannels) -> Optional[float]:
    """Power needed with matched-filter directions, or None when they cannot meet the targets"""
    C = channels.normalized()
    directions = (C / np.linalg.norm(C, axis=1, keepdims=True)).T
    try:
        return float(channels.D * np.sum(balance_powers(channels, directions)))
    except InfeasibleError:
        return None


def project_sinr_row(a: np.ndarray, k: int, gamma: float, sigma: float) -> np.ndarray:
    """Euclidean projection of a onto {t : |t_k| >= sqrt(gamma) * ||(t_{-k}, sigma)||}.

    This cone is equivalent to the SINR constraint of user k when row k of the
    auxiliary matrix stands for the received amplitudes h_k w_j.
    """
    if not gamma > 0:
        raise ValueError(f"SINR target must be positive, got {gamma}")
    a = np.asarray(a, dtype=complex)
    x = abs(a[k])
    rotation = a[k] / x if x > 0 else 1.0
    y = np.delete(a, k)
    y_norm = float(np.linalg.norm(y))
    root_gamma = np.sqrt(gamma)

    boundary = root_gamma * np.hypot(y_norm, sigma)
    # points within rounding of the boundary count as inside
    if x >= boundary * (1.0 - 1e-12):
        return a.copy()

    if y_norm == 0.0:
        u = y
        tau = max(x, sigma * root_gamma)
    elif x == 0.0:
        u = y / (1.0 + gamma)
        tau = root_gamma * np.hypot(np.linalg.norm(u), sigma)
    else:
        def gap(nu):
            return x / (1.0 - nu) - root_gamma * np.hypot(y_norm / (1.0 + gamma * nu), sigma)

        upper = 1.0 - x / boundary
        if gap(upper) <= 0.0:
            nu = upper
        else:
            nu = brentq(gap, 0.0, upper, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        u = y / (1.0 + gamma * nu)
        tau = root_gamma * np.hypot(np.linalg.norm(u), sigma)

    t = np.insert(u, k, tau * rotation)
    return t
