"""
Clustered mmWave channel generator for the BS -> RIS -> user links.
"""

import csv
import logging
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, Any, List, Tuple, Union

import numpy as np

from scenario import SystemConfig, RngSeed, ScenarioError, parse_document

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ArrayGeometry:
    rows: int
    cols: int
    spacing: float = 0.5

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"Array dimensions must be positive, got {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class ClusterParams:
    clusters_bs_ris: int = 5
    rays_bs_ris: int = 10
    clusters_ris_user: int = 5
    rays_ris_user: int = 10
    angle_spread_deg: float = 10.0
    pathloss_a: float = 72.0
    pathloss_b: float = 2.92
    shadowing_db: float = 8.7
    element_spacing: float = 0.5

    def __post_init__(self):
        counts = (self.clusters_bs_ris, self.rays_bs_ris, self.clusters_ris_user, self.rays_ris_user)
        if min(counts) < 1:
            raise ScenarioError(f"Cluster and ray counts must be positive, got {counts}")
        if self.angle_spread_deg < 0 or self.shadowing_db < 0:
            raise ScenarioError("Angle spread and shadowing deviation must be nonnegative")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def load_channel_params(text: str) -> ClusterParams:
    """Read the channel section of a scenario document"""
    flat = parse_document(text)
    values = {k[len("channel."):]: v for k, v in flat.items() if k.startswith("channel.")}
    try:
        return ClusterParams(**values)
    except TypeError as e:
        raise ScenarioError(f"Invalid channel section: {e}") from e


@dataclass
class ChannelSet:
    """One realization: G is F x M (BS -> RIS), row k of H is h_k (RIS -> user k)"""
    G: np.ndarray
    H: np.ndarray
    user_positions: np.ndarray = None

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=complex)
        self.H = np.atleast_2d(np.asarray(self.H, dtype=complex))
        if self.G.ndim != 2 or self.H.shape[1] != self.G.shape[0]:
            raise ValueError(f"Channel shapes do not match: G {self.G.shape}, H {self.H.shape}")
        if not (np.all(np.isfinite(self.G)) and np.all(np.isfinite(self.H))):
            raise ValueError("Channel entries must be finite")

    @property
    def F(self) -> int:
        return self.G.shape[0]

    @property
    def M(self) -> int:
        return self.G.shape[1]

    @property
    def K(self) -> int:
        return self.H.shape[0]

    def h(self, k: int) -> np.ndarray:
        return self.H[k]

    def check(self, system: SystemConfig):
        if (self.F, self.M, self.K) != (system.F, system.M, system.K):
            raise ValueError(
                f"Channel dimensions F={self.F}, M={self.M}, K={self.K} do not match "
                f"scenario F={system.F}, M={system.M}, K={system.K}")


def upa_response(azimuth: float, elevation: float, geometry: ArrayGeometry) -> np.ndarray:
    """Unit-norm UPA steering vector, entry (o, p) stored at index o*cols + p"""
    o = np.arange(geometry.rows)[:, None]
    p = np.arange(geometry.cols)[None, :]
    phase = 2.0 * np.pi * geometry.spacing * (
        o * np.sin(azimuth) * np.sin(elevation) + p * np.cos(elevation))
    return (np.exp(1j * phase) / np.sqrt(geometry.size)).reshape(-1)


def upa_responses(azimuths: np.ndarray, elevations: np.ndarray, geometry: ArrayGeometry) -> np.ndarray:
    """Steering vectors for many angle pairs, one per column"""
    o = np.repeat(np.arange(geometry.rows), geometry.cols)[:, None]
    p = np.tile(np.arange(geometry.cols), geometry.rows)[:, None]
    azimuths = np.asarray(azimuths, dtype=float)[None, :]
    elevations = np.asarray(elevations, dtype=float)[None, :]
    phase = 2.0 * np.pi * geometry.spacing * (
        o * np.sin(azimuths) * np.sin(elevations) + p * np.cos(elevations))
    return np.exp(1j * phase) / np.sqrt(geometry.size)


def path_loss_db(distance: float, params: ClusterParams) -> float:
    """Mean path loss in dB, shadowing excluded"""
    if not distance > 0:
        raise ValueError(f"Path-loss distance must be positive, got {distance}")
    return params.pathloss_a + 10.0 * params.pathloss_b * math.log10(distance)


def _laplacian(rng: np.random.Generator, scale: float, size) -> np.ndarray:
    # inverse CDF; scale = spread / sqrt(2) so the standard deviation equals the spread
    u = rng.uniform(-0.5, 0.5, size)
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def _reflect_elevation(angles: np.ndarray) -> np.ndarray:
    angles = np.mod(angles, 2.0 * np.pi)
    return np.where(angles > np.pi, 2.0 * np.pi - angles, angles)


def _ray_angles(rng: np.random.Generator, clusters: int, rays: int, spread: float) -> Tuple[np.ndarray, np.ndarray]:
    center_az = rng.uniform(0.0, 2.0 * np.pi, clusters)
    center_el = rng.uniform(0.0, np.pi, clusters)
    scale = spread / np.sqrt(2.0)
    az = np.mod(center_az[:, None] + _laplacian(rng, scale, (clusters, rays)), 2.0 * np.pi)
    el = _reflect_elevation(center_el[:, None] + _laplacian(rng, scale, (clusters, rays)))
    return az.reshape(-1), el.reshape(-1)


def _complex_normal(rng: np.random.Generator, variance: float, size) -> np.ndarray:
    return np.sqrt(variance / 2.0) * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def sample_user_positions(system: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """Area-uniform user drops in the configured disc"""
    radius = system.user_radius * np.sqrt(rng.uniform(0.0, 1.0, system.K))
    angle = rng.uniform(0.0, 2.0 * np.pi, system.K)
    center = np.asarray(system.user_center, dtype=float)
    return center[None, :] + np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)


def link_gain_variance(distance: float, params: ClusterParams, rng: np.random.Generator) -> float:
    shadowing = rng.normal(0.0, params.shadowing_db) if params.shadowing_db > 0 else 0.0
    return 10.0 ** (-0.1 * (path_loss_db(distance, params) + shadowing))


def sample_channels(system: SystemConfig, params: ClusterParams, seed: RngSeed) -> ChannelSet:
    """Draw one clustered channel realization for the scenario"""
    geometry_rng = seed.generator("geometry")
    rng = seed.generator("channel")
    bs_array = ArrayGeometry(system.bs_rows, system.bs_cols, params.element_spacing)
    ris_array = ArrayGeometry(system.F1, system.F2, params.element_spacing)
    if bs_array.size != system.M or ris_array.size != system.F:
        raise ValueError("Array geometry does not match the scenario dimensions")
    spread = np.deg2rad(params.angle_spread_deg)

    users = sample_user_positions(system, geometry_rng)
    ris = np.asarray(system.ris_position, dtype=float)
    d_bs_ris = float(np.linalg.norm(ris - np.asarray(system.bs_position, dtype=float)))
    d_ris_users = np.linalg.norm(users - ris[None, :], axis=1)

    paths = params.clusters_bs_ris * params.rays_bs_ris
    variance = link_gain_variance(d_bs_ris, params, rng)
    alpha = _complex_normal(rng, variance, paths)
    ris_az, ris_el = _ray_angles(rng, params.clusters_bs_ris, params.rays_bs_ris, spread)
    bs_az, bs_el = _ray_angles(rng, params.clusters_bs_ris, params.rays_bs_ris, spread)
    a_ris = upa_responses(ris_az, ris_el, ris_array)
    a_bs = upa_responses(bs_az, bs_el, bs_array)
    G = np.sqrt(system.M * system.F / paths) * (a_ris * alpha[None, :]) @ a_bs.conj().T

    paths = params.clusters_ris_user * params.rays_ris_user
    H = np.empty((system.K, system.F), dtype=complex)
    for k in range(system.K):
        variance = link_gain_variance(float(d_ris_users[k]), params, rng)
        beta = _complex_normal(rng, variance, paths)
        az, el = _ray_angles(rng, params.clusters_ris_user, params.rays_ris_user, spread)
        H[k] = np.sqrt(system.F / paths) * upa_responses(az, el, ris_array) @ beta

    logger.debug(f"Sampled channels stream={seed.stream}: |G|_F={np.linalg.norm(G):.3e}, "
                 f"d_BR={d_bs_ris:.1f} m")
    return ChannelSet(G=G, H=H, user_positions=users)


def dump_channels_csv(channels: ChannelSet, path: Union[str, Path]):
    """Write G and every h_k as matrix,row,col,re,im rows"""
    rows: List[Tuple] = []
    for (r, c), value in np.ndenumerate(channels.G):
        rows.append(("G", r, c, repr(float(value.real)), repr(float(value.imag))))
    for (k, f), value in np.ndenumerate(channels.H):
        rows.append((f"h{k}", f, 0, repr(float(value.real)), repr(float(value.imag))))
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["matrix", "row", "col", "re", "im"])
            writer.writerows(rows)
        logger.info(f"Channel realization written to {path}")
    except OSError as e:
        logger.error(f"Error writing channel dump: {str(e)}")
        raise


def load_channels_csv(path: Union[str, Path]) -> ChannelSet:
    """Read a channel dump written by dump_channels_csv"""
    entries: Dict[str, Dict[Tuple[int, int], complex]] = {}
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            entries.setdefault(row["matrix"], {})[(int(row["row"]), int(row["col"]))] = \
                complex(float(row["re"]), float(row["im"]))
    g_entries = entries.pop("G")
    F = 1 + max(r for r, _ in g_entries)
    M = 1 + max(c for _, c in g_entries)
    G = np.zeros((F, M), dtype=complex)
    for (r, c), value in g_entries.items():
        G[r, c] = value
    users = sorted(entries, key=lambda name: int(name[1:]))
    H = np.zeros((len(users), F), dtype=complex)
    for k, name in enumerate(users):
        for (f, _), value in entries[name].items():
            H[k, f] = value
    return ChannelSet(G=G, H=H)
