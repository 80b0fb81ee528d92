"""
Scenario configuration: system and solver parameters, phase sets, seeding and
unit conversions. Everything else in RisBeam consumes the types defined here.
"""

import logging
import math
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Dict, Any, Optional, Tuple, Union

import numpy as np
import yaml

logger = logging.getLogger(__name__)

CONTINUOUS = "continuous"
THERMAL_NOISE_DBM_PER_HZ = -174.0


class ScenarioError(ValueError):
    """Raised when a scenario document is malformed or inconsistent"""


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def linear_to_db(value: float) -> float:
    return 10.0 * math.log10(value)


def dbm_to_watts(value_dbm: float) -> float:
    return 10.0 ** ((value_dbm - 30.0) / 10.0)


def watts_to_dbm(value_w: float) -> float:
    if value_w <= 0:
        return float("-inf")
    return 10.0 * math.log10(value_w) + 30.0


def noise_dbm_from_bandwidth(bandwidth_hz: float) -> float:
    """Thermal noise floor over the given bandwidth"""
    return THERMAL_NOISE_DBM_PER_HZ + 10.0 * math.log10(bandwidth_hz)


@dataclass(frozen=True)
class PhaseSet:
    """Discrete phase alphabet with 2**bits points, or continuous when bits is None"""
    bits: Optional[int] = None

    def __post_init__(self):
        if self.bits is not None and (int(self.bits) != self.bits or self.bits < 1):
            raise ScenarioError(f"Phase bits must be a positive integer or continuous, got {self.bits}")

    @property
    def is_continuous(self) -> bool:
        return self.bits is None

    @property
    def size(self) -> int:
        return 0 if self.bits is None else 2 ** self.bits

    @property
    def step(self) -> float:
        return 0.0 if self.bits is None else 2.0 * np.pi / self.size

    def elements(self) -> np.ndarray:
        if self.bits is None:
            raise ValueError("A continuous phase set has no finite element list")
        return np.exp(1j * self.step * np.arange(self.size))

    def contains(self, values, atol: float = 1e-12) -> bool:
        values = np.ravel(np.asarray(values, dtype=complex))
        if not np.allclose(np.abs(values), 1.0, atol=atol):
            return False
        if self.bits is None:
            return True
        distance = np.abs(values[:, None] - self.elements()[None, :]).min(axis=1)
        return bool(np.all(distance <= atol))

    def label(self) -> str:
        return CONTINUOUS if self.bits is None else str(self.bits)


def _grid_index(angles: np.ndarray, phase_set: PhaseSet) -> np.ndarray:
    # nearest grid point; exact midpoints go to the lower index
    q = np.mod(angles, 2.0 * np.pi) / phase_set.step
    return np.mod(np.ceil(q - 0.5), phase_set.size).astype(int)


def phase_project(value: complex, phase_set: PhaseSet) -> complex:
    """Project a unit-modulus scalar onto the nearest point of the phase set"""
    value = complex(value)
    magnitude = abs(value)
    if magnitude == 0.0:
        raise ValueError("Cannot project zero onto a phase set: angle is undefined")
    if abs(magnitude - 1.0) > 1e-9:
        raise ValueError(f"phase_project expects a unit-modulus value, got |v|={magnitude}")
    value = value / magnitude
    if phase_set.is_continuous:
        return value
    index = int(_grid_index(np.array([np.angle(value)]), phase_set)[0])
    return complex(phase_set.elements()[index])


def project_phases(values: np.ndarray, phase_set: PhaseSet) -> np.ndarray:
    """Entrywise projection of nonzero complex values onto a phase set (only the angle is used)"""
    values = np.asarray(values, dtype=complex)
    magnitude = np.abs(values)
    if np.any(magnitude == 0.0):
        raise ValueError("Cannot project zero entries onto a phase set")
    if phase_set.is_continuous:
        return values / magnitude
    return phase_set.elements()[_grid_index(np.angle(values), phase_set)]


def random_phases(rng: np.random.Generator, size: int, phase_set: PhaseSet) -> np.ndarray:
    """Uniformly random points of the phase set"""
    if phase_set.is_continuous:
        return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size))
    return phase_set.elements()[rng.integers(0, phase_set.size, size)]


@dataclass(frozen=True)
class RngSeed:
    """Seed plus stream id; (seed, stream, purpose) fully determines a generator"""
    seed: int = 0
    stream: int = 0

    PURPOSES = {"channel": 0, "init": 1, "randomization": 2, "baseline": 3, "geometry": 4}

    def generator(self, purpose: str = "channel") -> np.random.Generator:
        if purpose not in self.PURPOSES:
            raise ValueError(f"Unknown random stream purpose: {purpose}")
        sequence = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream, self.PURPOSES[purpose]])
        return np.random.Generator(np.random.PCG64(sequence))

    def with_stream(self, stream: int) -> "RngSeed":
        return RngSeed(self.seed, stream)


@dataclass(frozen=True)
class SystemConfig:
    M: int = 36
    N: int = 6
    K: int = 3
    bs_rows: int = 6
    bs_cols: int = 6
    F1: int = 6
    F2: int = 6
    Q1: Optional[int] = None
    Q2: Optional[int] = None
    sinr_target_db: Tuple[float, ...] = (10.0,)
    noise_dbm: Tuple[float, ...] = ()
    bandwidth_hz: float = 251.1886e6
    carrier_hz: float = 28e9
    bs_position: Tuple[float, float] = (0.0, 0.0)
    ris_position: Tuple[float, float] = (50.0, 10.0)
    user_center: Tuple[float, float] = (100.0, 0.0)
    user_radius: float = 5.0
    gamma: Tuple[float, ...] = field(init=False, repr=False)
    sigma2: Tuple[float, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if self.M < 1 or self.N < 1 or self.K < 1:
            raise ScenarioError(f"M, N and K must be positive (M={self.M}, N={self.N}, K={self.K})")
        if self.M % self.N != 0:
            raise ScenarioError(f"M={self.M} is not divisible by the RF-chain count N={self.N}")
        if self.bs_rows * self.bs_cols != self.M:
            raise ScenarioError(f"BS array {self.bs_rows}x{self.bs_cols} does not hold M={self.M} antennas")
        if self.F1 < 1 or self.F2 < 1:
            raise ScenarioError(f"RIS dimensions must be positive (F1={self.F1}, F2={self.F2})")
        PhaseSet(self.Q1)
        PhaseSet(self.Q2)

        targets = _per_user(self.sinr_target_db, self.K, "sinr_target_db")
        if not self.noise_dbm:
            noise = (noise_dbm_from_bandwidth(self.bandwidth_hz),) * self.K
        else:
            noise = _per_user(self.noise_dbm, self.K, "noise_dbm")
        gamma = tuple(db_to_linear(v) for v in targets)
        sigma2 = tuple(dbm_to_watts(v) for v in noise)
        for name, values in (("SINR target", gamma), ("noise power", sigma2)):
            if not all(math.isfinite(v) and v > 0 for v in values):
                raise ScenarioError(f"Every {name} must be positive and finite, got {values}")

        object.__setattr__(self, "sinr_target_db", targets)
        object.__setattr__(self, "noise_dbm", noise)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "sigma2", sigma2)
        if self.K > self.N:
            logger.warning(f"K={self.K} users exceed N={self.N} RF chains; the QoS problem may be infeasible")

    @property
    def D(self) -> int:
        return self.M // self.N

    @property
    def F(self) -> int:
        return self.F1 * self.F2

    @property
    def analog_phases(self) -> PhaseSet:
        return PhaseSet(self.Q1)

    @property
    def ris_phases(self) -> PhaseSet:
        return PhaseSet(self.Q2)

    @property
    def gamma_array(self) -> np.ndarray:
        return np.asarray(self.gamma, dtype=float)

    @property
    def sigma2_array(self) -> np.ndarray:
        return np.asarray(self.sigma2, dtype=float)

    def replace(self, **changes) -> "SystemConfig":
        """Copy with some init fields changed; per-user lists are re-broadcast when K changes"""
        values = {f.name: getattr(self, f.name) for f in fields(self) if f.init}
        values.update(changes)
        if "K" in changes and "sinr_target_db" not in changes:
            values["sinr_target_db"] = (self.sinr_target_db[0],)
        if ("K" in changes or "bandwidth_hz" in changes) and "noise_dbm" not in changes:
            values["noise_dbm"] = ()
        return SystemConfig(**values)


@dataclass(frozen=True)
class SolverConfig:
    rho0: float = 1e-3
    c: float = 0.9
    eps1: float = 1e-7
    eps2: float = 1e-4
    eps3: float = 1e-7
    max_outer: int = 300
    max_inner: int = 50
    max_rcg_iters: int = 200
    armijo_c1: float = 1e-4
    armijo_contraction: float = 0.5
    armijo_step: float = 1.0
    armijo_max_halvings: int = 50
    retraction_retries: int = 30
    sca_zeta: float = 0.1
    sca_beta: float = 1.0
    sca_kappa0: float = 0.5
    sca_max_iters: int = 200
    randomizations: int = 200
    relaxation_rank: int = 8
    relaxation_restarts: int = 1
    softmin_start: float = 1.0
    softmin_end: float = 0.01
    softmin_stages: int = 5
    overlap_factors: Tuple[int, ...] = (1, 2, 3, 4)
    bisection_tol: float = 1e-3
    bisection_cap: float = 2.0 ** 20
    bisection_floor: float = 1e-3
    power_cap: float = 1e6
    duality_tol: float = 1e-10
    duality_max_iters: int = 10000

    def __post_init__(self):
        if not 0.0 < self.c < 1.0:
            raise ScenarioError(f"Penalty scaling c must lie in (0, 1), got {self.c}")
        if self.rho0 <= 0:
            raise ScenarioError(f"Initial penalty rho0 must be positive, got {self.rho0}")
        if not 0.0 < self.sca_zeta < 0.5:
            raise ScenarioError(f"SCA zeta must lie in (0, 0.5), got {self.sca_zeta}")
        if not 0.0 < self.sca_kappa0 < 1.0 or self.sca_beta <= 0:
            raise ScenarioError("SCA parameters need beta > 0 and kappa0 in (0, 1)")
        if self.randomizations < 1 or self.relaxation_rank < 1 or self.relaxation_restarts < 1:
            raise ScenarioError("Randomization count, relaxation rank and restarts must be positive")
        object.__setattr__(self, "overlap_factors", tuple(int(m) for m in self.overlap_factors))

    def replace(self, **changes) -> "SolverConfig":
        values = asdict(self)
        values.update(changes)
        return SolverConfig(**values)


def _per_user(value, K: int, name: str) -> Tuple[float, ...]:
    if isinstance(value, (int, float)):
        return (float(value),) * K
    values = tuple(float(v) for v in value)
    if len(values) == 1:
        return values * K
    if len(values) != K:
        raise ScenarioError(f"{name} needs 1 or K={K} entries, got {len(values)}")
    return values


def parse_bits(value) -> Optional[int]:
    if value is None:
        return None
    if isinstance(value, str):
        if value.strip().lower() in (CONTINUOUS, "inf", "infinite", "none"):
            return None
        value = int(value)
    if isinstance(value, float) and math.isinf(value):
        return None
    return int(value)


def _flatten(document: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat = {}
    for key, value in document.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def parse_document(text: str) -> Dict[str, Any]:
    """Parse a YAML scenario document into a flat dotted-key mapping"""
    try:
        document = yaml.safe_load(text) if text else {}
    except yaml.YAMLError as e:
        raise ScenarioError(f"Error parsing scenario document: {e}") from e
    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise ScenarioError("Scenario document must be a mapping of sections")
    nested = _flatten({k: v for k, v in document.items() if "." not in str(k)})
    dotted = {k: v for k, v in document.items() if "." in str(k)}
    nested.update(dotted)
    return nested


_SYSTEM_KEYS = {
    "system.M": "M", "system.N": "N", "system.K": "K",
    "system.bs_rows": "bs_rows", "system.bs_cols": "bs_cols",
    "system.ris_rows": "F1", "system.ris_cols": "F2",
    "system.sinr_target_db": "sinr_target_db", "system.noise_dbm": "noise_dbm",
    "system.bandwidth_hz": "bandwidth_hz", "system.carrier_hz": "carrier_hz",
    "geometry.bs_position": "bs_position", "geometry.ris_position": "ris_position",
    "geometry.user_center": "user_center", "geometry.user_radius": "user_radius",
}


def _build_system(flat: Dict[str, Any]) -> SystemConfig:
    values: Dict[str, Any] = {}
    for key, name in _SYSTEM_KEYS.items():
        if key in flat and flat[key] is not None:
            values[name] = flat[key]
    for key in ("Q1", "Q2"):
        if f"system.{key}" in flat:
            values[key] = parse_bits(flat[f"system.{key}"])
    for name in ("bs_position", "ris_position", "user_center"):
        if name in values:
            values[name] = tuple(float(v) for v in values[name])
    for name in ("bandwidth_hz", "carrier_hz", "user_radius"):
        if name in values:
            values[name] = float(values[name])
    for name in ("M", "N", "K", "bs_rows", "bs_cols", "F1", "F2"):
        if name in values:
            values[name] = int(values[name])
    if "M" in values and "bs_rows" not in values and "bs_cols" not in values:
        side = int(round(math.sqrt(values["M"])))
        if side * side == values["M"]:
            values["bs_rows"] = values["bs_cols"] = side
        else:
            values["bs_rows"], values["bs_cols"] = 1, values["M"]
    K = int(values.get("K", SystemConfig.K))
    values["sinr_target_db"] = _per_user(values.get("sinr_target_db", 10.0), K, "sinr_target_db")
    if "noise_dbm" in values:
        values["noise_dbm"] = _per_user(values["noise_dbm"], K, "noise_dbm")
    return SystemConfig(**values)


def _build_solver(flat: Dict[str, Any]) -> SolverConfig:
    defaults = asdict(SolverConfig())
    values = {}
    for key, value in flat.items():
        if key.startswith("solver."):
            name = key[len("solver."):]
            if name not in defaults:
                raise ScenarioError(f"Unknown solver option: {name}")
            kind = type(defaults[name])
            # YAML 1.1 reads 1e-3 as a string
            values[name] = tuple(int(v) for v in value) if kind is tuple else kind(value)
    return SolverConfig(**values)


def load_scenario(text: str) -> Tuple[SystemConfig, SolverConfig]:
    """Parse and validate a scenario document"""
    flat = parse_document(text)
    try:
        system = _build_system(flat)
        solver = _build_solver(flat)
    except ScenarioError:
        raise
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"Invalid scenario value: {e}") from e
    logger.debug(f"Loaded scenario M={system.M} N={system.N} K={system.K} F={system.F}")
    return system, solver


def load_scenario_file(path: Union[str, Path]) -> Tuple[SystemConfig, SolverConfig]:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        logger.error(f"Scenario file {path} not found")
        raise
    return load_scenario(text)


def dump_scenario(system: SystemConfig, solver: Optional[SolverConfig] = None,
                  params=None) -> str:
    """Serialize configs back into a scenario document"""
    document: Dict[str, Any] = {
        "system": {
            "M": system.M, "N": system.N, "K": system.K,
            "bs_rows": system.bs_rows, "bs_cols": system.bs_cols,
            "ris_rows": system.F1, "ris_cols": system.F2,
            "Q1": PhaseSet(system.Q1).label() if system.Q1 is None else system.Q1,
            "Q2": PhaseSet(system.Q2).label() if system.Q2 is None else system.Q2,
            "sinr_target_db": list(system.sinr_target_db),
            "noise_dbm": list(system.noise_dbm),
            "bandwidth_hz": system.bandwidth_hz,
            "carrier_hz": system.carrier_hz,
        },
        "geometry": {
            "bs_position": list(system.bs_position),
            "ris_position": list(system.ris_position),
            "user_center": list(system.user_center),
            "user_radius": system.user_radius,
        },
    }
    if solver is not None:
        values = asdict(solver)
        values["overlap_factors"] = list(solver.overlap_factors)
        document["solver"] = values
    if params is not None:
        document["channel"] = params.to_dict()
    return yaml.safe_dump(document, sort_keys=False)
