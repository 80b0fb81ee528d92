import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from channel import ChannelSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScaledChannels:
    """Channels with h_k divided by sigma_k (unit noise) and G multiplied by a common gain scale.

    A beamformer W designed on these channels serves the physical ones as
    gain_scale * W, so physical power = gain_scale**2 * scaled power.
    """
    G: np.ndarray
    H: np.ndarray
    gain_scale: float

    @property
    def power_scale(self) -> float:
        return self.gain_scale ** 2


def scale_channels(channels: ChannelSet, sigma2: np.ndarray) -> ScaledChannels:
    H = channels.H / np.sqrt(np.asarray(sigma2, dtype=float))[:, None]
    gain = np.mean(np.sum(np.abs(H) ** 2, axis=1)) * np.linalg.norm(channels.G) ** 2 / channels.F
    if not gain > 0:
        raise ValueError("Channel realization has zero gain")
    scale = 1.0 / np.sqrt(gain)
    return ScaledChannels(G=channels.G * scale, H=H, gain_scale=float(scale))


def cascaded_rows(G: np.ndarray, H: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row k is h_k^H Theta G with Theta = diag(conj(b)), shape K x M"""
    return (H.conj() * b.conj()[None, :]) @ G


def effective_rows(G: np.ndarray, H: np.ndarray, b: np.ndarray, x: np.ndarray, N: int) -> np.ndarray:
    """Row k is h_k^H Theta G V for the sub-connected analog vector x, shape K x N"""
    K = H.shape[0]
    weighted = cascaded_rows(G, H, b) * x[None, :]
    return weighted.reshape(K, N, -1).sum(axis=2)


def compute_sinr(effective: np.ndarray, W: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    """SINR of every user for effective rows (K x N) and digital beamformer (N x K)"""
    gains = np.abs(effective @ W) ** 2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    return signal / (interference + np.asarray(sigma2, dtype=float))


def to_db(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(values)


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence]):
    """Write rows to a CSV file with a header line, creating the parent directory"""
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(list(header))
            for row in rows:
                writer.writerow([_format_cell(v) for v in row])
        logger.info(f"Wrote {path}")
    except OSError as e:
        logger.error(f"Error writing {path}: {str(e)}")
        raise


def _format_cell(value):
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.10g}"
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    return value
