import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

# Degenerate placements closer than this are clamped
D_MIN = 1.0

SPEED_OF_LIGHT = 299792458.0


def dbm_to_watts(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts):
    return 10.0 * np.log10(watts) + 30.0


@dataclass(frozen=True)
class PathModel:
    """Simplified two-ray ground reflection model with unit antenna gains."""

    tx_power_dbm: float = 10.0
    antenna_height: float = 1.2

    def __post_init__(self):
        if self.antenna_height <= 0:
            raise ValueError("antenna_height must be strictly positive")
        if not math.isfinite(self.tx_power_dbm):
            raise ValueError("tx_power_dbm must be finite")

    @property
    def tx_power_w(self):
        return dbm_to_watts(self.tx_power_dbm)

    def path_gain(self, d):
        """
        Linear power gain (h_t * h_r)^2 / d^4.

        Distances below D_MIN are clamped to D_MIN; the first clamp of a
        process is logged.
        """
        if d < D_MIN:
            _warn_clamp(d)
            d = D_MIN
        h = self.antenna_height
        return (h * h) ** 2 / d ** 4

    def received_power_w(self, d):
        return self.tx_power_w * self.path_gain(d)

    def received_power_dbm(self, d):
        return float(watts_to_dbm(self.received_power_w(d)))

    def distance_for_power(self, power_w):
        """Inverse of received_power_w: distance at which the mean power equals power_w."""
        if power_w <= 0:
            raise ValueError("power_w must be positive")
        h = self.antenna_height
        return (self.tx_power_w * (h * h) ** 2 / power_w) ** 0.25


_clamp_logged = False


def _warn_clamp(d):
    global _clamp_logged
    if not _clamp_logged:
        logger.warning("distance %.3f m below d_min, clamped to %.1f m", d, D_MIN)
        _clamp_logged = True


@dataclass(frozen=True)
class PowerMatrix:
    """
    Received power of one transmitted frame at one receiver.

    entries[i, j] is the power (W) at receive antenna i from transmit
    antenna j. One instance is drawn per (frame, receiver) and held fixed
    for the whole reception.
    """

    entries: np.ndarray
    source: int = -1
    frame_id: int = -1

    @property
    def n_rx(self):
        return self.entries.shape[0]

    @property
    def n_tx(self):
        return self.entries.shape[1] if self.entries.ndim == 2 else 0

    def antenna_power(self, i=0):
        """Power collected by receive antenna i from all transmit antennas."""
        return float(self.entries[i].sum())

    def scaled(self, factor):
        return PowerMatrix(self.entries * factor, self.source, self.frame_id)


def frobenius_power(pm):
    """Sum of all p_ij: (P_t/M) * G_path * ||H||_F^2 for the drawn H."""
    if pm.entries.size == 0:
        return 0.0
    return float(pm.entries.sum())


def draw_power_matrix(path_model, distance, n_tx, n_rx, rng, source=-1, frame_id=-1):
    """
    Draw one N x M received-power matrix.

    Each entry is (P_t/M) * G_path(d) * e_ij, e_ij i.i.d. unit-mean
    exponential (|h_ij|^2 of a Rayleigh channel).
    """
    if n_tx < 1 or n_rx < 1:
        raise ValueError(f"antenna counts must be >= 1, got M={n_tx}, N={n_rx}")
    mean = path_model.tx_power_w / n_tx * path_model.path_gain(distance)
    fading = rng.standard_exponential((n_rx, n_tx))
    return PowerMatrix(mean * fading, source, frame_id)


def propagation_delay(distance):
    return distance / SPEED_OF_LIGHT


class Channel:
    """Large-scale geometry of a topology plus per-frame Rayleigh draws."""

    def __init__(self, path_model, positions):
        self.path_model = path_model
        self.positions = dict(positions)

    def distance(self, a, b):
        xa, ya = self.positions[a]
        xb, yb = self.positions[b]
        return math.hypot(xa - xb, ya - yb)

    def mean_power_w(self, source, dest):
        return self.path_model.received_power_w(self.distance(source, dest))

    def draw_power_matrix(self, source, dest, n_tx, n_rx, frame_id, rng):
        return draw_power_matrix(
            self.path_model, self.distance(source, dest), n_tx, n_rx, rng,
            source=source, frame_id=frame_id,
        )
