"""
Simulation run: configuration, node wiring and the event loop.

A node is a traffic source feeding a DcfMac, which transmits through the
shared medium; every transmitted frame becomes one Arrival per receiving
node with its own Rayleigh draw and propagation delay.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from core.calibration import CalibrationTable
from core.channel import Channel, PathModel, propagation_delay
from core.mac import DcfMac, DcfTiming, MimoPolicy, data_mode_for
from core.metrics import MetricsCollector, NodeStats
from core.phy import Arrival, PhyParams, ReceiverPhy, frame_segments
from core.scheduler import Event, EventHandle, EventKind, EventScheduler, SchedulingError  # noqa: F401

logger = logging.getLogger(__name__)

# Substream tags of the per-run random stream
STREAM_BACKOFF = 1
STREAM_DECODE = 2
STREAM_FADING = 3
STREAM_TRAFFIC = 4


@dataclass
class SimConfig:
    duration: float = 10.0
    seed: int = 1
    policy: MimoPolicy = MimoPolicy.SISO
    n_tx: int = 1
    n_rx: int = 1
    sinr_min: float = 5.0
    sinr_max: float = 23.0
    queue_capacity: int = 400
    # 0 = saturated source; otherwise CBR packet interval in seconds
    traffic_interval: float = 0.0
    warmup: float = 0.0
    # Arrivals whose mean power is this far below the noise floor are not
    # put on air at all; None keeps every node-to-node link
    interference_floor_db: float = -10.0
    timing: DcfTiming = field(default_factory=DcfTiming)
    phy: PhyParams = field(default_factory=PhyParams)
    path: PathModel = field(default_factory=PathModel)
    calibration: CalibrationTable = None
    trace_events: bool = False

    @property
    def cca_method(self):
        return self.phy.cca_method

    @property
    def data_mode(self):
        """Fixed DATA mode of single-scheme policies; None for joint policies."""
        return data_mode_for(self.policy, self.n_tx, self.n_rx)

    @property
    def effective_sinr_min(self):
        return -math.inf if self.policy is MimoPolicy.HYB_B else self.sinr_min

    @property
    def effective_sinr_max(self):
        return math.inf if self.policy is MimoPolicy.HYB_A else self.sinr_max

    @property
    def saturated(self):
        return self.traffic_interval <= 0

    def vblast_configs(self):
        """(M, N) pairs whose a_t must be known before the run starts."""
        n = self.n_rx
        if self.policy is MimoPolicy.VBLAST:
            return {(self.n_tx, n)}
        if self.policy is MimoPolicy.HYB_A:
            return {(n - 1, n)}
        if self.policy in (MimoPolicy.HYB_B, MimoPolicy.HYB_C):
            return {(n - 1, n), (n, n)}
        return set()

    def calibration_table(self):
        if self.calibration is None:
            self.calibration = CalibrationTable.load()
        return self.calibration

    def validate(self):
        if not self.duration > 0:
            raise ValueError(f"duration must be > 0, got {self.duration}")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if self.n_rx < 1 or self.n_tx < 1:
            raise ValueError(f"antenna counts must be >= 1, got M={self.n_tx}, N={self.n_rx}")
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        if not 0 <= self.warmup < self.duration:
            raise ValueError("warmup must lie in [0, duration)")
        if self.policy.is_joint:
            if self.n_rx < 3:
                raise ValueError(f"{self.policy.value} needs N >= 3 antennas, got {self.n_rx}")
            if not self.effective_sinr_min < self.effective_sinr_max:
                raise ValueError(f"sinr_min ({self.sinr_min}) must be below sinr_max ({self.sinr_max})")
        elif self.policy is MimoPolicy.SISO and self.n_tx != 1:
            raise ValueError("SISO transmits from a single antenna (M = 1)")
        elif self.policy is MimoPolicy.ALAMOUTI and self.n_tx != 2:
            raise ValueError("Alamouti requires M = 2")
        else:
            # MimoMode validates M <= N for V-BLAST
            _ = self.data_mode
        configs = self.vblast_configs()
        if configs:
            self.calibration_table().require(configs)
        return self

    def snapshot(self):
        """Plain dict of every setting, used for result snapshots and config hashes."""
        table = self.calibration
        return {
            "duration": self.duration,
            "seed": self.seed,
            "policy": self.policy.value,
            "n_tx": self.n_tx,
            "n_rx": self.n_rx,
            "sinr_min": self.sinr_min,
            "sinr_max": self.sinr_max,
            "queue_capacity": self.queue_capacity,
            "traffic_interval": self.traffic_interval,
            "warmup": self.warmup,
            "interference_floor_db": self.interference_floor_db,
            "timing": dict(vars(self.timing)),
            "phy": {**vars(self.phy), "cca_method": self.phy.cca_method.value},
            "path": dict(vars(self.path)),
            "calibration": ({f"{m}x{n}": a for (m, n), a in sorted(table.entries.items())}
                            if table is not None else None),
        }


class Node:
    """One station: receiver state, DCF MAC and its traffic source."""

    def __init__(self, sim, node_id, peer):
        self.sim = sim
        self.node_id = node_id
        self.peer = peer
        cfg = sim.config
        self.stats = NodeStats()
        self.phy = ReceiverPhy(node_id, cfg.n_rx, cfg.phy, sim.calibration,
                               sim.substream(STREAM_DECODE, node_id))
        self.mac = DcfMac(node_id, peer, cfg, sim.scheduler, self, self.phy,
                          sim.substream(STREAM_BACKOFF, node_id), self.stats, sim.metrics)

    def start(self):
        if self.peer is None:
            return
        cfg = self.sim.config
        if cfg.saturated:
            for _ in range(cfg.queue_capacity):
                self.mac.enqueue(0.0)
        else:
            rng = self.sim.substream(STREAM_TRAFFIC, self.node_id)
            first = float(rng.uniform(0.0, cfg.traffic_interval))
            self.sim.scheduler.call_at(first, self.node_id, EventKind.APP_PACKET_READY, self._on_packet_ready)

    def _on_packet_ready(self, event):
        self.mac.step(event)
        nxt = self.sim.scheduler.now + self.sim.config.traffic_interval
        if nxt < self.sim.config.duration:
            self.sim.scheduler.call_at(nxt, self.node_id, EventKind.APP_PACKET_READY, self._on_packet_ready)

    # ── radio interface used by DcfMac ──

    def transmit(self, frame, mode, duration):
        self.sim.transmit(self, frame, mode, duration)

    def on_dequeue(self):
        if self.sim.config.saturated:
            self.mac.enqueue(self.sim.scheduler.now)


class Simulation:
    """Single run over one topology; owns the scheduler, medium and nodes."""

    def __init__(self, config, topology):
        self.config = config.validate()
        self.topology = topology
        self.calibration = config.calibration_table() if config.vblast_configs() else config.calibration
        self.scheduler = EventScheduler(trace=config.trace_events)
        self.channel = Channel(config.path, topology.positions())
        self.metrics = MetricsCollector(topology.node_ids(), warmup=config.warmup)
        self._streams = {}
        self._arrival_ids = itertools.count()
        self._frame_ids = itertools.count()
        self._floor_w = (config.phy.noise_power_w * 10.0 ** (config.interference_floor_db / 10.0)
                         if config.interference_floor_db is not None else 0.0)
        self.nodes = {nid: Node(self, nid, topology.peer_of(nid)) for nid in topology.node_ids()}
        self._audible = self._audible_links()

    def substream(self, tag, *keys):
        """Independent generator keyed by (seed, tag, keys)."""
        key = (tag, *keys)
        rng = self._streams.get(key)
        if rng is None:
            rng = np.random.default_rng([self.config.seed, *key])
            self._streams[key] = rng
        return rng

    def _audible_links(self):
        links = {}
        for src in self.nodes:
            links[src] = [
                dst for dst in self.nodes
                if dst != src and self.channel.mean_power_w(src, dst) >= self._floor_w
            ]
        return links

    @property
    def trace(self):
        return self.scheduler.trace

    # ── medium ──

    def transmit(self, node, frame, mode, duration):
        sched = self.scheduler
        now = sched.now
        node.phy.start_transmission()
        frame_id = next(self._frame_ids)
        for dst in self._audible[node.node_id]:
            receiver = self.nodes[dst]
            pm = self.channel.draw_power_matrix(
                node.node_id, dst, mode.n_tx, self.config.n_rx, frame_id,
                self.substream(STREAM_FADING, node.node_id, dst),
            )
            start = now + propagation_delay(self.channel.distance(node.node_id, dst))
            arrival = Arrival(
                uid=next(self._arrival_ids),
                frame=frame,
                mode=mode,
                pm=pm,
                start=start,
                end=start + duration,
                segments=frame_segments(start, self.config.phy.plcp_duration, self.config.phy.bit_rate,
                                        frame.bits, mode.m_eff),
            )
            sched.call_at(arrival.start, dst, EventKind.FRAME_ARRIVAL_START, self._on_arrival_start,
                          (receiver, arrival))
            sched.call_at(arrival.end, dst, EventKind.FRAME_ARRIVAL_END, self._on_arrival_end,
                          (receiver, arrival))
        sched.call_at(now + duration, node.node_id, EventKind.TX_END, node.mac.on_tx_end, frame)

    def _on_arrival_start(self, event):
        receiver, arrival = event.payload
        before = receiver.phy.cca()
        receiver.phy.arrival_start(arrival)
        self._cca_changed(receiver, before)

    def _on_arrival_end(self, event):
        receiver, arrival = event.payload
        before = receiver.phy.cca()
        outcome = receiver.phy.arrival_end(arrival)
        receiver.mac.on_rx(outcome)
        self._cca_changed(receiver, before)

    def _cca_changed(self, receiver, before):
        if receiver.phy.cca() is not before:
            self.scheduler.call_at(self.scheduler.now, receiver.node_id, EventKind.CCA_UPDATE,
                                   receiver.mac.step)

    # ── run ──

    def run(self):
        cfg = self.config
        logger.debug("run seed=%d policy=%s M=%d N=%d nodes=%d duration=%.3fs",
                     cfg.seed, cfg.policy.value, cfg.n_tx, cfg.n_rx, len(self.nodes), cfg.duration)
        for nid in sorted(self.nodes):
            self.nodes[nid].start()
        self.scheduler.run(cfg.duration)
        queued = {nid: [p.enqueue_time for p in node.mac.queue] for nid, node in self.nodes.items()}
        report = self.metrics.report(cfg.duration, {nid: n.stats for nid, n in self.nodes.items()}, queued)
        logger.debug("run seed=%d finished: %d events, %d frames delivered",
                     cfg.seed, self.scheduler.processed, len(report.delay_samples))
        return report


def run(config, topology):
    """Run one simulation and return its MetricsReport."""
    return Simulation(config, topology).run()
