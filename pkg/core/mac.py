"""
IEEE 802.11 DCF with RTS/CTS, extended for MIMO data frames.

Control frames always go out in SISO. The DATA frame uses the MIMO mode the
receiver announced in its CTS (joint policies) or the configured scheme.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum

from core.scheduler import EventKind
from core.phy import CcaState, MimoMode, MimoScheme

logger = logging.getLogger(__name__)


class FrameKind(Enum):
    RTS = "RTS"
    CTS = "CTS"
    DATA = "DATA"
    ACK = "ACK"


class MimoPolicy(Enum):
    SISO = "siso"
    ALAMOUTI = "alamouti"
    VBLAST = "vblast"
    HYB_A = "hyb-a"
    HYB_B = "hyb-b"
    HYB_C = "hyb-c"

    @property
    def is_joint(self):
        return self in (MimoPolicy.HYB_A, MimoPolicy.HYB_B, MimoPolicy.HYB_C)


@dataclass(frozen=True)
class DcfTiming:
    """802.11 DSSS timing and frame sizes."""
    slot: float = 20e-6
    sifs: float = 10e-6
    difs: float = 50e-6
    cw_min: int = 31
    cw_max: int = 1023
    short_retry_limit: int = 7
    long_retry_limit: int = 4
    rts_bytes: int = 20
    cts_bytes: int = 14
    ack_bytes: int = 14
    mac_header_bytes: int = 28
    payload_bytes: int = 1412
    # Margin added to response timeouts for propagation
    max_propagation: float = 10e-6

    def __post_init__(self):
        if not 0 < self.cw_min <= self.cw_max:
            raise ValueError("need 0 < cw_min <= cw_max")

    @property
    def payload_bits(self):
        return self.payload_bytes * 8

    @property
    def data_bits(self):
        return (self.mac_header_bytes + self.payload_bytes) * 8


@dataclass(frozen=True)
class Packet:
    seq: int
    enqueue_time: float
    bits: int


@dataclass(frozen=True)
class Frame:
    kind: FrameKind
    source: int
    destination: int
    duration_us: int
    bits: int
    mimo_mode_byte: int = None
    packet: Packet = None

    def __post_init__(self):
        if self.duration_us < 0:
            raise ValueError("duration field must be >= 0")
        if self.mimo_mode_byte is not None:
            if self.kind is not FrameKind.CTS:
                raise ValueError("only CTS frames carry a MIMO mode byte")
            if self.mimo_mode_byte not in (0, 1, 2):
                raise ValueError(f"reserved MIMO mode byte {self.mimo_mode_byte}")

    @property
    def exchange(self):
        return frozenset((self.source, self.destination))


def select_mimo_mode(mean_sinr_db, sinr_min_db, sinr_max_db, n_rx):
    """Receiver-side choice among the three joint-operation modes."""
    if n_rx < 3:
        raise ValueError(f"joint MIMO operation needs N >= 3, got {n_rx}")
    if not sinr_min_db < sinr_max_db:
        raise ValueError("sinr_min must be below sinr_max")
    if mean_sinr_db < sinr_min_db:
        return MimoMode.alamouti(n_rx)
    if mean_sinr_db < sinr_max_db:
        return MimoMode.vblast(n_rx - 1, n_rx)
    return MimoMode.vblast(n_rx, n_rx)


def airtime(bits, phy_params, m_eff=1):
    return phy_params.plcp_duration + bits / (phy_params.bit_rate * m_eff)


def _us(seconds):
    return int(math.ceil(seconds * 1e6 - 1e-6))


def duration_field(kind, timing, phy_params, data_mode=None, cts_bits=None):
    """
    Duration field (microseconds) covering the rest of the handshake.

    RTS always announces a SISO DATA frame; CTS and DATA use the negotiated
    mode. Only the DATA body is multiplexed, so m_eff = M for V-BLAST and 1
    otherwise.
    """
    cts_bits = cts_bits if cts_bits is not None else timing.cts_bytes * 8
    ack = airtime(timing.ack_bytes * 8, phy_params)
    if kind is FrameKind.RTS:
        cts = airtime(cts_bits, phy_params)
        data = airtime(timing.data_bits, phy_params)
        return _us(3 * timing.sifs + cts + data + ack)
    if kind is FrameKind.CTS:
        m_eff = data_mode.m_eff if data_mode is not None else 1
        data = airtime(timing.data_bits, phy_params, m_eff)
        return _us(2 * timing.sifs + data + ack)
    if kind is FrameKind.DATA:
        return _us(timing.sifs + ack)
    return 0


class MacState(Enum):
    CONTEND = "contend"
    TRANSMITTING = "transmitting"
    WAIT_CTS = "wait-cts"
    WAIT_ACK = "wait-ack"
    WAIT_DATA = "wait-data"
    RESPONDING = "responding"


class DcfMac:
    """
    DCF state machine of one node.

    `radio` is the node's attachment to the medium: it provides
    `transmit(frame, mode, duration)` and the scheduling helpers; all
    timers go through the run's EventScheduler.
    """

    def __init__(self, node_id, peer, config, scheduler, radio, phy, rng, stats, metrics):
        self.node_id = node_id
        self.peer = peer
        self.config = config
        self.timing = config.timing
        self.phy_params = config.phy
        self.scheduler = scheduler
        self.radio = radio
        self.phy = phy
        self.rng = rng
        self.stats = stats
        self.metrics = metrics
        self.n_rx = config.n_rx

        self.queue = deque()
        self.state = MacState.CONTEND
        self.cw = self.timing.cw_min
        self.failures = 0
        self.short_retry = 0
        self.long_retry = 0
        self.backoff = None
        self.nav_until = 0.0
        self._nav_exchange = None
        self._nav_timer = None
        self._access_timer = None
        self._countdown_start = None
        self._timeout = None
        self._peer = None
        self._data_mode = None
        self._tx_frame = None
        self._seq = 0
        self._last_seq = {}
        self.cw_history = [self.cw]

    # ── queue ──

    def enqueue(self, now):
        """Append a fresh packet; returns False on tail drop."""
        if len(self.queue) >= self.config.queue_capacity:
            self.stats.dropped_queue += 1
            return False
        self._seq += 1
        self.queue.append(Packet(self._seq, now, self.timing.payload_bits))
        self.stats.enqueued += 1
        self.try_access()
        return True

    # ── medium access ──

    def _medium_idle(self):
        now = self.scheduler.now
        return (now >= self.nav_until and not self.phy.transmitting
                and self.phy.cca() is CcaState.IDLE)

    def _draw_backoff(self):
        self.backoff = int(self.rng.integers(0, self.cw + 1))

    def try_access(self):
        """Start or freeze the DIFS + backoff countdown according to medium state."""
        if self.state is not MacState.CONTEND or not self.queue:
            self._freeze()
            return
        if not self._medium_idle():
            self._freeze()
            return
        if self._access_timer is not None:
            return
        if self.backoff is None:
            self._draw_backoff()
        now = self.scheduler.now
        self._countdown_start = now + self.timing.difs
        fire = self._countdown_start + self.backoff * self.timing.slot
        self._access_timer = self.scheduler.call_at(fire, self.node_id, EventKind.TIMER_EXPIRY,
                                                    self._on_access, "access")

    def _freeze(self):
        if self._access_timer is None:
            return
        self._access_timer.cancel()
        self._access_timer = None
        elapsed = self.scheduler.now - self._countdown_start
        if elapsed > 0 and self.backoff:
            slots = int(math.floor(elapsed / self.timing.slot + 1e-9))
            self.backoff = max(0, self.backoff - slots)

    def _on_access(self, _event):
        self._access_timer = None
        if self.state is not MacState.CONTEND or not self.queue or not self._medium_idle():
            self.backoff = 0
            self.try_access()
            return
        self.backoff = None
        packet = self.queue[0]
        self._peer = self.peer
        rts = Frame(FrameKind.RTS, self.node_id, self._peer,
                    duration_field(FrameKind.RTS, self.timing, self.phy_params,
                                   cts_bits=self._cts_bits()),
                    self.timing.rts_bytes * 8, packet=packet)
        self._send(rts, self._control_mode())

    # ── transmission ──

    def _control_mode(self):
        return MimoMode.siso(self.n_rx)

    def _cts_carries_mode(self):
        policy = self.config.policy
        if policy is MimoPolicy.SISO:
            return False
        return policy.is_joint or _mode_byte(self.config.data_mode) is not None

    def _cts_bits(self):
        extra = 8 if self._cts_carries_mode() else 0
        return self.timing.cts_bytes * 8 + extra

    def _send(self, frame, mode):
        now = self.scheduler.now
        if frame.kind is not FrameKind.ACK and now < self.nav_until:
            raise RuntimeError(f"node {self.node_id} emitting {frame.kind.value} under NAV")
        self.state = MacState.TRANSMITTING
        self._tx_frame = frame
        duration = airtime(frame.bits, self.phy_params, mode.m_eff)
        if frame.kind is FrameKind.DATA:
            self.stats.mode_usage[mode.label] += 1
            self.stats.data_attempts += 1
        self.scheduler.record("tx", self.node_id, frame.kind.value, self.nav_until)
        self.radio.transmit(frame, mode, duration)

    def on_tx_end(self, _event=None):
        frame = self._tx_frame
        self._tx_frame = None
        self.phy.end_transmission()
        t = self.timing
        if frame.kind is FrameKind.RTS:
            self.state = MacState.WAIT_CTS
            wait = t.sifs + airtime(self._cts_bits(), self.phy_params) + t.slot + 2 * t.max_propagation
            self._arm_timeout(wait)
        elif frame.kind is FrameKind.CTS:
            self.state = MacState.WAIT_DATA
            data = airtime(t.data_bits, self.phy_params, self._data_mode.m_eff)
            self._arm_timeout(t.sifs + data + t.slot + 2 * t.max_propagation)
        elif frame.kind is FrameKind.DATA:
            self.state = MacState.WAIT_ACK
            wait = t.sifs + airtime(t.ack_bytes * 8, self.phy_params) + t.slot + 2 * t.max_propagation
            self._arm_timeout(wait)
        else:
            self.state = MacState.CONTEND
            self.try_access()

    def _arm_timeout(self, delay):
        self._timeout = self.scheduler.call_at(self.scheduler.now + delay, self.node_id,
                                               EventKind.TIMER_EXPIRY, self._on_timeout, "timeout")

    def _cancel_timeout(self):
        if self._timeout is not None:
            self._timeout.cancel()
            self._timeout = None

    def _after_sifs(self, action):
        self.state = MacState.RESPONDING
        self.scheduler.call_at(self.scheduler.now + self.timing.sifs, self.node_id,
                               EventKind.TIMER_EXPIRY, lambda _e: action(), "sifs")

    # ── reception ──

    def on_rx(self, outcome):
        """Handle a PHY outcome (delivered or dropped frame) at arrival end."""
        frame = outcome.frame
        if not outcome.delivered:
            if frame.destination == self.node_id:
                self.stats.count_drop(outcome.cause)
            return
        if frame.destination != self.node_id:
            self._update_nav(frame)
            return
        if frame.kind is FrameKind.RTS:
            self.on_rts_received(frame, outcome.mean_sinr_db)
        elif frame.kind is FrameKind.CTS:
            self._on_cts(frame)
        elif frame.kind is FrameKind.DATA:
            self._on_data(frame)
        elif frame.kind is FrameKind.ACK:
            self._on_ack(frame)

    def _update_nav(self, frame):
        now = self.scheduler.now
        until = now + frame.duration_us * 1e-6
        if frame.exchange == self._nav_exchange and now < self.nav_until:
            # Later frames of the same handshake refine the announcement
            self.nav_until = until
        elif until > self.nav_until:
            self.nav_until = until
            self._nav_exchange = frame.exchange
        else:
            return
        if self._nav_timer is not None:
            self._nav_timer.cancel()
        self._freeze()
        self._nav_timer = self.scheduler.call_at(max(now, self.nav_until), self.node_id,
                                                 EventKind.TIMER_EXPIRY, self._on_nav_expiry, "nav")

    def _on_nav_expiry(self, _event):
        self._nav_timer = None
        self.try_access()

    def on_cca_update(self, _event=None):
        self.try_access()

    def on_rts_received(self, rts, mean_sinr_db):
        """Answer an RTS with a CTS after SIFS; returns the CTS, or None when busy or under NAV."""
        if self.state is not MacState.CONTEND or self.scheduler.now < self.nav_until:
            return None
        self._freeze()
        mode = self.choose_data_mode(mean_sinr_db)
        self._data_mode = mode
        self._peer = rts.source
        mode_byte = _mode_byte(mode) if self._cts_carries_mode() else None
        cts = Frame(FrameKind.CTS, self.node_id, rts.source,
                    duration_field(FrameKind.CTS, self.timing, self.phy_params, data_mode=mode),
                    self._cts_bits(), mimo_mode_byte=mode_byte)
        if self.config.policy.is_joint:
            self.stats.mode_selections[mode.label] += 1
        self._after_sifs(lambda: self._respond(cts))
        return cts

    def _respond(self, frame):
        if frame.kind is not FrameKind.ACK and self.scheduler.now < self.nav_until:
            self.state = MacState.CONTEND
            self.try_access()
            return
        self._send(frame, self._control_mode())

    def choose_data_mode(self, mean_sinr_db):
        cfg = self.config
        if cfg.policy.is_joint:
            return select_mimo_mode(mean_sinr_db, cfg.effective_sinr_min, cfg.effective_sinr_max, self.n_rx)
        return cfg.data_mode

    def _on_cts(self, cts):
        if self.state is not MacState.WAIT_CTS or cts.source != self._peer:
            return
        self._cancel_timeout()
        if cts.mimo_mode_byte is not None:
            mode = MimoMode.from_byte(cts.mimo_mode_byte, self.n_rx)
        else:
            mode = self.config.data_mode
        self._data_mode = mode
        packet = self.queue[0]
        data = Frame(FrameKind.DATA, self.node_id, self._peer,
                     duration_field(FrameKind.DATA, self.timing, self.phy_params, data_mode=mode),
                     self.timing.data_bits, packet=packet)
        self._after_sifs(lambda: self._send_data(data, mode))

    def _send_data(self, data, mode):
        if self.scheduler.now < self.nav_until:
            self.state = MacState.CONTEND
            self._fail(long=False)
            return
        self._send(data, mode)

    def _on_data(self, data):
        if self.state not in (MacState.CONTEND, MacState.WAIT_DATA):
            return
        if self.state is MacState.WAIT_DATA and data.source != self._peer:
            return
        self._cancel_timeout()
        self._freeze()
        packet = data.packet
        if self._last_seq.get(data.source) != packet.seq:
            self._last_seq[data.source] = packet.seq
            self.metrics.record_delivery(data.source, self.node_id, packet.seq,
                                         packet.enqueue_time, self.scheduler.now, packet.bits)
        ack = Frame(FrameKind.ACK, self.node_id, data.source,
                    duration_field(FrameKind.ACK, self.timing, self.phy_params),
                    self.timing.ack_bytes * 8)
        self._after_sifs(lambda: self._respond(ack))

    def _on_ack(self, ack):
        if self.state is not MacState.WAIT_ACK or ack.source != self._peer:
            return
        self._cancel_timeout()
        self.queue.popleft()
        self.stats.acked += 1
        self.failures = 0
        self.short_retry = 0
        self.long_retry = 0
        self._set_cw(self.timing.cw_min)
        self.state = MacState.CONTEND
        self._draw_backoff()
        self.radio.on_dequeue()
        self.try_access()

    # ── failures ──

    def _on_timeout(self, _event):
        self._timeout = None
        state = self.state
        self.state = MacState.CONTEND
        if state is MacState.WAIT_CTS:
            self._fail(long=False)
        elif state is MacState.WAIT_ACK:
            self._fail(long=True)
        else:
            self.try_access()

    def _fail(self, long):
        """Binary exponential backoff; drops the head frame past the retry limit."""
        if long:
            self.long_retry += 1
            exhausted = self.long_retry >= self.timing.long_retry_limit
        else:
            self.short_retry += 1
            exhausted = self.short_retry >= self.timing.short_retry_limit
        if exhausted:
            self.queue.popleft()
            self.stats.dropped_retry += 1
            logger.debug("node %d dropped frame after retry limit at %.6f", self.node_id, self.scheduler.now)
            self.failures = 0
            self.short_retry = 0
            self.long_retry = 0
            self._set_cw(self.timing.cw_min)
            self._draw_backoff()
            self.radio.on_dequeue()
        else:
            self.failures += 1
            self._set_cw(min(self.timing.cw_min * 2 ** self.failures, self.timing.cw_max))
            self._draw_backoff()
        self.try_access()

    def _set_cw(self, cw):
        self.cw = cw
        self.cw_history.append(cw)

    # ── engine dispatch ──

    def step(self, event):
        """Dispatch an engine event addressed to this MAC."""
        if event.kind is EventKind.CCA_UPDATE:
            self.on_cca_update(event)
        elif event.kind is EventKind.APP_PACKET_READY:
            self.enqueue(self.scheduler.now)
        elif event.handler is not None:
            event.handler(event)


def _mode_byte(mode):
    try:
        return mode.to_byte()
    except ValueError:
        return None


def data_mode_for(policy, n_tx, n_rx):
    """DATA mode of a single-scheme policy."""
    if policy is MimoPolicy.SISO:
        return MimoMode.siso(n_rx)
    if policy is MimoPolicy.ALAMOUTI:
        return MimoMode.alamouti(n_rx)
    if policy is MimoPolicy.VBLAST:
        return MimoMode(MimoScheme.VBLAST, n_tx, n_rx)
    return None
