"""
MIMO link abstraction.

Effective SINR per scheme, BER curves, chunk-segmented packet error rate,
clear channel assessment and the per-node reception state machine.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import comb

from core.channel import dbm_to_watts, frobenius_power

logger = logging.getLogger(__name__)

THERMAL_NOISE_DBM_HZ = -174.0


class MimoScheme(Enum):
    SISO = "siso"
    ALAMOUTI = "alamouti"
    VBLAST = "vblast"


# CTS mode byte values of the three joint-operation modes
MODE_FULL_DIVERSITY = 0
MODE_MUX_WITH_DIVERSITY = 1
MODE_FULL_MUX = 2


@dataclass(frozen=True)
class MimoMode:
    scheme: MimoScheme
    n_tx: int
    n_rx: int

    def __post_init__(self):
        if self.n_rx < 1:
            raise ValueError(f"N must be >= 1, got {self.n_rx}")
        if self.scheme is MimoScheme.ALAMOUTI and self.n_tx != 2:
            raise ValueError("Alamouti requires exactly M = 2 transmit antennas")
        if self.scheme is MimoScheme.VBLAST and not 1 <= self.n_tx <= self.n_rx:
            raise ValueError(f"V-BLAST requires 1 <= M <= N, got {self.n_tx}x{self.n_rx}")
        if self.scheme is MimoScheme.SISO and self.n_tx != 1:
            raise ValueError("SISO transmits from a single antenna")

    @classmethod
    def siso(cls, n_rx=1):
        return cls(MimoScheme.SISO, 1, n_rx)

    @classmethod
    def alamouti(cls, n_rx):
        return cls(MimoScheme.ALAMOUTI, 2, n_rx)

    @classmethod
    def vblast(cls, n_tx, n_rx):
        return cls(MimoScheme.VBLAST, n_tx, n_rx)

    @property
    def m_eff(self):
        """Multiplexing factor applied to the frame body bit rate."""
        return self.n_tx if self.scheme is MimoScheme.VBLAST else 1

    @property
    def label(self):
        if self.scheme is MimoScheme.SISO:
            return "siso"
        prefix = "al" if self.scheme is MimoScheme.ALAMOUTI else "vb"
        return f"{prefix}{self.n_tx}x{self.n_rx}"

    def to_byte(self):
        """CTS mode byte; only the three joint-operation modes are encodable."""
        n = self.n_rx
        if self.scheme is MimoScheme.ALAMOUTI:
            return MODE_FULL_DIVERSITY
        if self.scheme is MimoScheme.VBLAST and self.n_tx == n - 1:
            return MODE_MUX_WITH_DIVERSITY
        if self.scheme is MimoScheme.VBLAST and self.n_tx == n:
            return MODE_FULL_MUX
        raise ValueError(f"{self.label} has no CTS mode byte")

    @classmethod
    def from_byte(cls, value, n_rx):
        if value == MODE_FULL_DIVERSITY:
            return cls.alamouti(n_rx)
        if value == MODE_MUX_WITH_DIVERSITY:
            return cls.vblast(n_rx - 1, n_rx)
        if value == MODE_FULL_MUX:
            return cls.vblast(n_rx, n_rx)
        raise ValueError(f"reserved CTS mode byte {value}")


class CcaMethod(Enum):
    SUM = "sum"
    AVERAGE = "average"


class CcaState(Enum):
    IDLE = "idle"
    BUSY = "busy"


@dataclass(frozen=True)
class PhyParams:
    bandwidth: float = 22e6
    noise_figure_db: float = 7.0
    bit_rate: float = 1e6
    ed_threshold_dbm: float = -73.8764
    cca_threshold_dbm: float = -80.9201
    cca_method: CcaMethod = CcaMethod.AVERAGE
    # PLCP preamble + header, always sent at the base rate
    plcp_duration: float = 192e-6

    def __post_init__(self):
        if self.bandwidth <= 0 or self.bit_rate <= 0:
            raise ValueError("bandwidth and bit_rate must be positive")
        if self.ed_threshold_dbm <= self.cca_threshold_dbm:
            raise ValueError("ed_threshold must exceed cca_threshold")

    @property
    def noise_power_dbm(self):
        return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(self.bandwidth) + self.noise_figure_db

    @property
    def noise_power_w(self):
        return dbm_to_watts(self.noise_power_dbm)

    @property
    def ed_threshold_w(self):
        return dbm_to_watts(self.ed_threshold_dbm)

    @property
    def cca_threshold_w(self):
        return dbm_to_watts(self.cca_threshold_dbm)


def noise_power_w(params):
    return params.noise_power_w


# ── SINR ──

def sinr_siso(signal_power, interferer_powers, noise):
    return signal_power / (noise + sum(interferer_powers))


def sinr_alamouti(signal, interferers, noise):
    """
    Post-combining SINR of a 2xN Alamouti link.

    The per-antenna power split P_t/M is already inside each matrix, which
    realises the E_s/2 factor for signal and interference alike.
    """
    if signal.n_tx != 2:
        raise ValueError(f"Alamouti signal matrix needs 2 columns, got {signal.n_tx}")
    return frobenius_power(signal) / (noise + sum(frobenius_power(pm) for pm in interferers))


def sinr_vblast(signal, interferers, noise, n_rx):
    """Branch-averaged before-processing SINR, the gamma_0 input of the V-BLAST BER model."""
    interference = sum(frobenius_power(pm) for pm in interferers) / n_rx
    return (frobenius_power(signal) / n_rx) / (noise + interference)


def link_sinr(mode, signal, interferers, noise):
    """SINR seen by a receiver decoding `signal` in `mode`."""
    if mode.scheme is MimoScheme.SISO:
        # Single receive chain: antenna 0 only
        return sinr_siso(signal.antenna_power(0), [pm.antenna_power(0) for pm in interferers], noise)
    if mode.scheme is MimoScheme.ALAMOUTI:
        return sinr_alamouti(signal, interferers, noise)
    return sinr_vblast(signal, interferers, noise, mode.n_rx)


# ── BER / PER ──

def dbpsk_ber(sinr):
    return 0.5 * np.exp(-sinr)


def vblast_first_step_ber(n_tx, n_rx, gamma0):
    """P_e1 ~ C(2(N-M)+1, N-M+1) / (4 gamma0)^(N-M+1)."""
    d = n_rx - n_tx + 1
    return comb(2 * (n_rx - n_tx) + 1, d, exact=True) / (4.0 * gamma0) ** d


def ber(mode, sinr, calibration=None):
    """
    Bit error probability for `mode` at linear `sinr`.

    SISO and Alamouti use the DBPSK curve on the (post-combining) SINR.
    V-BLAST uses a_t * P_e1 with a_t from the calibration table, clamped
    at 1/2.
    """
    if sinr <= 0:
        return 0.5
    if mode.scheme is not MimoScheme.VBLAST:
        return float(dbpsk_ber(sinr))
    if calibration is None:
        raise ValueError("V-BLAST BER needs a calibration table")
    a_t = calibration.a_t(mode.n_tx, mode.n_rx)
    return min(0.5, a_t * vblast_first_step_ber(mode.n_tx, mode.n_rx, sinr))


@dataclass(frozen=True)
class Segment:
    """Part of a frame sent at one bit rate (PLCP header or MAC body)."""
    start: float
    end: float
    bit_rate: float


def frame_segments(start, plcp_duration, base_rate, body_bits, m_eff):
    body_rate = base_rate * m_eff
    plcp_end = start + plcp_duration
    return (
        Segment(start, plcp_end, base_rate),
        Segment(plcp_end, plcp_end + body_bits / body_rate, body_rate),
    )


@dataclass
class Chunk:
    start: float
    end: float
    interferers: frozenset
    sinr: float
    n_bits: int
    # Inside the PLCP preamble/header, sent single-stream at the base rate
    plcp: bool = False

    @property
    def duration(self):
        return self.end - self.start


def _bits(duration, rate):
    # Guard against float residue turning an exact bit count into count + 1
    return int(math.ceil(duration * rate - 1e-9)) if duration > 0 else 0


def chunk_timeline(reception, overlapping, sinr_of):
    """
    Split a reception into constant-interference chunks.

    `reception` is an Arrival, `overlapping` the arrivals that may overlap
    it and `sinr_of(list_of_arrivals)` evaluates the SINR for a given
    interferer set. Boundaries fall on every interference start/end and on
    the PLCP/body boundary inside the reception.
    """
    start, end = reception.start, reception.end
    others = [a for a in overlapping if a.uid != reception.uid and a.start < end and a.end > start]
    cuts = {start, end}
    for a in others:
        if start < a.start < end:
            cuts.add(a.start)
        if start < a.end < end:
            cuts.add(a.end)
    for seg in reception.segments:
        if start < seg.end < end:
            cuts.add(seg.end)
    bounds = sorted(cuts)
    header = reception.segments[0] if len(reception.segments) > 1 else None

    chunks = []
    for t0, t1 in zip(bounds[:-1], bounds[1:]):
        if t1 <= t0:
            continue
        active = [a for a in others if a.start < t1 and a.end > t0]
        mid = 0.5 * (t0 + t1)
        rate = next((s.bit_rate for s in reception.segments if s.start <= mid < s.end),
                    reception.segments[-1].bit_rate)
        chunks.append(Chunk(
            start=t0,
            end=t1,
            interferers=frozenset(a.uid for a in active),
            sinr=sinr_of(active),
            n_bits=_bits(t1 - t0, rate),
            plcp=header is not None and mid < header.end,
        ))
    return chunks


def packet_error_rate(chunks, mode, calibration=None):
    """
    PER = 1 - prod_i (1 - BER_i)^(n_bits_i).

    PLCP chunks are scored with the DBPSK curve whatever the body mode.
    """
    log_success = 0.0
    for chunk in chunks:
        if chunk.n_bits == 0:
            continue
        if chunk.plcp:
            p = 0.5 if chunk.sinr <= 0 else float(dbpsk_ber(chunk.sinr))
        else:
            p = ber(mode, chunk.sinr, calibration)
        if p >= 1.0:
            return 1.0
        log_success += chunk.n_bits * math.log1p(-p)
    return float(-math.expm1(log_success))


def mean_sinr_db(chunks):
    """Chunk-duration-weighted mean SINR (linear average), in dB."""
    total = sum(c.duration for c in chunks)
    if total <= 0:
        return float("-inf")
    avg = sum(c.sinr * c.duration for c in chunks) / total
    return 10.0 * math.log10(avg) if avg > 0 else float("-inf")


# ── CCA ──

def cca_state(ambient, params, n_rx=None):
    """
    Clear channel assessment over the matrices currently on air.

    SUM compares the aggregate power over all antennas with the CCA
    threshold; AVERAGE divides that aggregate by N first.
    """
    if not ambient:
        return CcaState.IDLE
    n = n_rx if n_rx is not None else ambient[0].n_rx
    return cca_from_aggregate(sum(frobenius_power(pm) for pm in ambient), params, n)


def cca_from_aggregate(aggregate_w, params, n_rx):
    """CCA decision for an already summed on-air power (all antennas)."""
    if params.cca_method is CcaMethod.AVERAGE:
        aggregate_w /= n_rx
    return CcaState.BUSY if aggregate_w >= params.cca_threshold_w else CcaState.IDLE


def effective_sensing_range(path_model, params, n_rx):
    """
    Distance up to which one transmitter's mean power keeps CCA busy.

    Every receive antenna collects the full transmit power on average, so
    the SUM aggregate is N times the single-antenna power while AVERAGE
    stays at the single-antenna power.
    """
    threshold = params.cca_threshold_w
    if params.cca_method is CcaMethod.SUM:
        threshold /= n_rx
    return path_model.distance_for_power(threshold)


# ── Reception state machine ──

class DropCause(Enum):
    COLLISION_CAPTURE = "collision-capture"
    CHANNEL_ERROR = "channel-error"
    BELOW_ED = "below-ED"
    TRANSMITTING = "transmitting"


@dataclass(eq=False)
class Arrival:
    """One frame as seen at one receiver."""
    uid: int
    frame: object
    mode: object
    pm: object
    start: float
    end: float
    segments: tuple
    drop_cause: DropCause = None


@dataclass
class RxOutcome:
    frame: object
    delivered: bool
    mean_sinr_db: float = float("-inf")
    per: float = 1.0
    cause: DropCause = None
    chunks: list = field(default_factory=list)


class ReceiverPhy:
    """
    Reception state of one node.

    The receiver locks onto the first arrival whose per-antenna power
    reaches the ED threshold; everything else on air is interference until
    the lock ends.
    """

    def __init__(self, node_id, n_rx, params, calibration, rng):
        self.node_id = node_id
        self.n_rx = n_rx
        self.params = params
        self.calibration = calibration
        self.rng = rng
        self.noise = params.noise_power_w
        self.on_air = {}
        self.lock = None
        self._history = []
        self.transmitting = False
        # Running sum of frobenius_power over on_air
        self._on_air_w = {}
        self._aggregate_w = 0.0

    def cca(self):
        if not self.on_air:
            return CcaState.IDLE
        return cca_from_aggregate(self._aggregate_w, self.params, self.n_rx)

    @property
    def ambient_power_w(self):
        return self._aggregate_w

    @property
    def receiving(self):
        return self.lock is not None

    def arrival_start(self, arrival):
        self.on_air[arrival.uid] = arrival
        total = frobenius_power(arrival.pm)
        self._on_air_w[arrival.uid] = total
        self._aggregate_w += total
        if self.lock is not None:
            self._history.append(arrival)
        power = total / self.n_rx
        if self.transmitting:
            arrival.drop_cause = DropCause.TRANSMITTING
        elif power < self.params.ed_threshold_w:
            arrival.drop_cause = DropCause.BELOW_ED
        elif self.lock is not None:
            arrival.drop_cause = DropCause.COLLISION_CAPTURE
        else:
            self.lock = arrival
            self._history = [a for a in self.on_air.values() if a is not arrival]

    def arrival_end(self, arrival):
        """Retire an arrival; returns the RxOutcome for it."""
        self.on_air.pop(arrival.uid, None)
        self._aggregate_w -= self._on_air_w.pop(arrival.uid, 0.0)
        if not self.on_air:
            # Clear float residue once the medium is empty
            self._aggregate_w = 0.0
        if arrival is not self.lock:
            return RxOutcome(arrival.frame, False, cause=arrival.drop_cause or DropCause.COLLISION_CAPTURE)
        self.lock = None
        history, self._history = self._history, []
        return self._decode(arrival, history)

    def _decode(self, arrival, history):
        def sinr_of(active):
            return link_sinr(arrival.mode, arrival.pm, [a.pm for a in active], self.noise)

        chunks = chunk_timeline(arrival, history, sinr_of)
        per = packet_error_rate(chunks, arrival.mode, self.calibration)
        msinr = mean_sinr_db(chunks)
        if self.rng.random() < per:
            return RxOutcome(arrival.frame, False, msinr, per, DropCause.CHANNEL_ERROR, chunks)
        return RxOutcome(arrival.frame, True, msinr, per, None, chunks)

    def start_transmission(self):
        """Half-duplex: an ongoing lock is lost when the node starts to transmit."""
        self.transmitting = True
        if self.lock is not None:
            self.lock.drop_cause = DropCause.TRANSMITTING
            self.lock = None
            self._history = []

    def end_transmission(self):
        self.transmitting = False
