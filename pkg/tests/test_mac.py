import math
import unittest

import numpy as np

from core.engine import SimConfig, Simulation
from core.mac import (
    DcfMac, DcfTiming, Frame, FrameKind, MacState, MimoPolicy, airtime, data_mode_for, duration_field,
    select_mimo_mode,
)
from core.metrics import MetricsCollector, NodeStats
from core.phy import DropCause, MimoMode, PhyParams, ReceiverPhy, RxOutcome
from core.scheduler import EventScheduler
from core.topology import Topology


class RecordingRadio:
    def __init__(self):
        self.sent = []
        self.dequeued = 0

    def transmit(self, frame, mode, duration):
        self.sent.append((frame, mode, duration))

    def on_dequeue(self):
        self.dequeued += 1


def make_mac(config=None, node_id=0, peer=1):
    config = config or SimConfig()
    sched = EventScheduler(trace=True)
    radio = RecordingRadio()
    phy = ReceiverPhy(node_id, config.n_rx, config.phy, None, np.random.default_rng(1))
    mac = DcfMac(node_id, peer, config, sched, radio, phy, np.random.default_rng(2), NodeStats(),
                 MetricsCollector([node_id, peer]))
    return mac, sched, radio


class ModeSelectionTestCase(unittest.TestCase):
    def test_thresholds(self):
        self.assertEqual(select_mimo_mode(4.9, 5.0, 23.0, 4), MimoMode.alamouti(4))
        self.assertEqual(select_mimo_mode(5.0, 5.0, 23.0, 4), MimoMode.vblast(3, 4))
        self.assertEqual(select_mimo_mode(22.9, 5.0, 23.0, 4), MimoMode.vblast(3, 4))
        self.assertEqual(select_mimo_mode(23.0, 5.0, 23.0, 4), MimoMode.vblast(4, 4))

    def test_disabled_thresholds(self):
        self.assertEqual(select_mimo_mode(40.0, 8.0, math.inf, 3), MimoMode.vblast(2, 3))
        self.assertEqual(select_mimo_mode(-5.0, -math.inf, 20.0, 3), MimoMode.vblast(2, 3))

    def test_preconditions(self):
        with self.assertRaises(ValueError):
            select_mimo_mode(10.0, 5.0, 23.0, 2)
        with self.assertRaises(ValueError):
            select_mimo_mode(10.0, 23.0, 5.0, 3)

    def test_single_scheme_policies(self):
        self.assertEqual(data_mode_for(MimoPolicy.SISO, 1, 1), MimoMode.siso(1))
        self.assertEqual(data_mode_for(MimoPolicy.ALAMOUTI, 2, 3), MimoMode.alamouti(3))
        self.assertEqual(data_mode_for(MimoPolicy.VBLAST, 3, 4), MimoMode.vblast(3, 4))
        self.assertIsNone(data_mode_for(MimoPolicy.HYB_C, 4, 4))


class DurationFieldTestCase(unittest.TestCase):
    def setUp(self):
        self.timing = DcfTiming()
        self.phy = PhyParams()

    def test_airtime(self):
        self.assertAlmostEqual(airtime(112, self.phy), 304e-6)
        self.assertAlmostEqual(airtime(self.timing.data_bits, self.phy, 3), 192e-6 + 11520e-6 / 3)

    def test_rts_assumes_siso_data(self):
        self.assertEqual(duration_field(FrameKind.RTS, self.timing, self.phy), 30 + 304 + 11712 + 304)

    def test_cts_uses_negotiated_mode(self):
        d = duration_field(FrameKind.CTS, self.timing, self.phy, data_mode=MimoMode.vblast(3, 4))
        self.assertEqual(d, 20 + 192 + 3840 + 304)
        alamouti = duration_field(FrameKind.CTS, self.timing, self.phy, data_mode=MimoMode.alamouti(4))
        self.assertEqual(alamouti, 20 + 11712 + 304)

    def test_data_and_ack(self):
        self.assertEqual(duration_field(FrameKind.DATA, self.timing, self.phy), 314)
        self.assertEqual(duration_field(FrameKind.ACK, self.timing, self.phy), 0)

    def test_overhearing_node_is_covered_until_ack_end(self):
        t, sifs = self.timing, self.timing.sifs
        cts_bits = t.cts_bytes * 8 + 8
        cts = airtime(cts_bits, self.phy)
        ack = airtime(t.ack_bytes * 8, self.phy)
        for mode in (MimoMode.alamouti(4), MimoMode.vblast(3, 4), MimoMode.vblast(4, 4)):
            data = airtime(t.data_bits, self.phy, mode.m_eff)
            # Exchange timeline as seen by a third node, zero at the end of the RTS
            cts_end = sifs + cts
            data_end = cts_end + sifs + data
            ack_end = data_end + sifs + ack
            cts_nav = cts_end + duration_field(FrameKind.CTS, self.timing, self.phy, data_mode=mode) * 1e-6
            data_nav = data_end + duration_field(FrameKind.DATA, self.timing, self.phy, data_mode=mode) * 1e-6
            self.assertGreaterEqual(cts_nav, ack_end - 1e-12)
            self.assertLess(cts_nav, ack_end + 1e-6)
            self.assertGreaterEqual(data_nav, ack_end - 1e-12)
            self.assertLess(data_nav, ack_end + 1e-6)
        # The RTS announces a SISO DATA frame, the longest the exchange can take
        rts_nav = duration_field(FrameKind.RTS, self.timing, self.phy, cts_bits=cts_bits) * 1e-6
        siso_end = 3 * sifs + cts + airtime(t.data_bits, self.phy) + ack
        self.assertGreaterEqual(rts_nav, siso_end - 1e-12)
        self.assertLess(rts_nav, siso_end + 1e-6)


class FrameTestCase(unittest.TestCase):
    def test_mode_byte_only_on_cts(self):
        Frame(FrameKind.CTS, 1, 0, 100, 120, mimo_mode_byte=2)
        with self.assertRaises(ValueError):
            Frame(FrameKind.RTS, 0, 1, 100, 160, mimo_mode_byte=0)
        with self.assertRaises(ValueError):
            Frame(FrameKind.CTS, 1, 0, 100, 120, mimo_mode_byte=3)
        with self.assertRaises(ValueError):
            Frame(FrameKind.ACK, 1, 0, -1, 112)

    def test_exchange_is_unordered(self):
        self.assertEqual(Frame(FrameKind.RTS, 0, 1, 1, 1).exchange, Frame(FrameKind.CTS, 1, 0, 1, 1).exchange)


class DcfMacTestCase(unittest.TestCase):
    def test_queue_tail_drop(self):
        mac, _, _ = make_mac(SimConfig(queue_capacity=2))
        self.assertTrue(mac.enqueue(0.0))
        self.assertTrue(mac.enqueue(0.0))
        self.assertFalse(mac.enqueue(0.0))
        self.assertEqual(mac.stats.dropped_queue, 1)
        self.assertEqual(len(mac.queue), 2)

    def test_backoff_expiry_sends_rts_to_peer(self):
        mac, sched, radio = make_mac()
        mac.enqueue(0.0)
        sched.run(0.01)
        frame, mode, duration = radio.sent[0]
        self.assertIs(frame.kind, FrameKind.RTS)
        self.assertEqual(frame.destination, 1)
        self.assertEqual(mode, MimoMode.siso(1))
        self.assertAlmostEqual(duration, 192e-6 + 160e-6)
        self.assertIs(mac.state, MacState.TRANSMITTING)
        self.assertLessEqual(sched.trace[-1][0], 50e-6 + 31 * 20e-6 + 1e-12)

    def test_binary_exponential_backoff_and_retry_limit(self):
        mac, _, radio = make_mac()
        mac.enqueue(0.0)
        for _ in range(7):
            mac._fail(long=False)
        self.assertEqual(mac.cw_history, [31, 62, 124, 248, 496, 992, 1023, 31])
        self.assertEqual(mac.stats.dropped_retry, 1)
        self.assertEqual(radio.dequeued, 1)
        self.assertEqual(len(mac.queue), 0)

    def test_long_retry_limit(self):
        mac, _, _ = make_mac()
        mac.enqueue(0.0)
        for _ in range(3):
            mac._fail(long=True)
        self.assertEqual(mac.stats.dropped_retry, 0)
        mac._fail(long=True)
        self.assertEqual(mac.stats.dropped_retry, 1)
        self.assertEqual(mac.cw, 31)

    def test_nav_grows_and_same_exchange_refines(self):
        mac, _, _ = make_mac()
        mac._update_nav(Frame(FrameKind.RTS, 5, 6, 1000, 160))
        self.assertAlmostEqual(mac.nav_until, 1e-3)
        mac._update_nav(Frame(FrameKind.RTS, 7, 8, 400, 160))
        self.assertAlmostEqual(mac.nav_until, 1e-3)
        mac._update_nav(Frame(FrameKind.CTS, 6, 5, 500, 112))
        self.assertAlmostEqual(mac.nav_until, 5e-4)

    def test_rts_under_nav_is_ignored(self):
        mac, sched, _ = make_mac()
        mac._update_nav(Frame(FrameKind.RTS, 5, 6, 1000, 160))
        self.assertIsNone(mac.on_rts_received(Frame(FrameKind.RTS, 1, 0, 500, 160), 20.0))
        self.assertIs(mac.state, MacState.CONTEND)

    def test_rts_answered_with_mode_byte(self):
        mac, sched, radio = make_mac(SimConfig(policy=MimoPolicy.HYB_C, n_tx=3, n_rx=3))
        cts = mac.on_rts_received(Frame(FrameKind.RTS, 1, 0, 500, 160), 30.0)
        self.assertEqual(cts.destination, 1)
        self.assertEqual(MimoMode.from_byte(cts.mimo_mode_byte, 3), MimoMode.vblast(3, 3))
        self.assertEqual(mac.stats.mode_selections["vb3x3"], 1)
        sched.run(1e-3)
        self.assertIs(radio.sent[0][0], cts)
        self.assertEqual(cts.bits, 15 * 8)

    def test_cts_without_mode_byte_keeps_base_size(self):
        mac, _, _ = make_mac(SimConfig(policy=MimoPolicy.VBLAST, n_tx=2, n_rx=4))
        cts = mac.on_rts_received(Frame(FrameKind.RTS, 1, 0, 500, 160), 30.0)
        self.assertIsNone(cts.mimo_mode_byte)
        self.assertEqual(cts.bits, 14 * 8)
        self.assertEqual(mac._cts_bits(), 14 * 8)
        mac, _, _ = make_mac(SimConfig(policy=MimoPolicy.VBLAST, n_tx=3, n_rx=4))
        cts = mac.on_rts_received(Frame(FrameKind.RTS, 1, 0, 500, 160), 30.0)
        self.assertEqual(cts.mimo_mode_byte, 1)
        self.assertEqual(cts.bits, 15 * 8)

    def test_undelivered_frames_counted_by_cause(self):
        mac, _, _ = make_mac()
        to_me = Frame(FrameKind.DATA, 1, 0, 314, 11488)
        for cause in (DropCause.BELOW_ED, DropCause.COLLISION_CAPTURE, DropCause.TRANSMITTING,
                      DropCause.CHANNEL_ERROR, DropCause.CHANNEL_ERROR):
            mac.on_rx(RxOutcome(to_me, False, cause=cause))
        mac.on_rx(RxOutcome(Frame(FrameKind.DATA, 2, 3, 314, 11488), False, cause=DropCause.CHANNEL_ERROR))
        stats = mac.stats
        self.assertEqual(stats.dropped_channel, 2)
        self.assertEqual(stats.dropped_below_ed, 1)
        self.assertEqual(stats.dropped_collision, 1)
        self.assertEqual(stats.dropped_half_duplex, 1)


class HiddenTerminalTestCase(unittest.TestCase):
    """A-B and C-D pairs on a line; A and C cannot sense each other but both reach B."""

    def setUp(self):
        nodes = [(0, 100.0, 500.0), (1, 240.0, 500.0), (2, 380.0, 500.0), (3, 520.0, 500.0)]
        self.topology = Topology(1000.0, 1000.0, nodes, [(0, 1), (2, 3)])
        self.config = SimConfig(duration=2.0, seed=7, trace_events=True)

    def test_nav_safety_and_backoff_laws(self):
        sim = Simulation(self.config, self.topology)
        report = sim.run()
        self.assertGreater(report.total_delivered_bits, 0)

        tx = [entry for entry in sim.trace if entry[1] == "tx"]
        self.assertTrue(tx)
        for time, _, node, kind, nav_until in tx:
            if kind != "ACK":
                self.assertGreaterEqual(time, nav_until, f"node {node} sent {kind} under NAV")

        timing = self.config.timing
        for node in sim.nodes.values():
            history = node.mac.cw_history
            for before, after in zip(history, history[1:]):
                self.assertIn(after, (timing.cw_min, min(2 * before, timing.cw_max)))

    def test_hyb_a_is_hyb_c_without_upper_threshold(self):
        common = dict(duration=0.5, seed=3, trace_events=True, n_tx=3, n_rx=3, sinr_min=8.0)
        hyb_a = Simulation(SimConfig(policy=MimoPolicy.HYB_A, sinr_max=20.0, **common), self.topology)
        hyb_c = Simulation(SimConfig(policy=MimoPolicy.HYB_C, sinr_max=math.inf, **common), self.topology)
        r_a, r_c = hyb_a.run(), hyb_c.run()
        self.assertTrue(hyb_a.trace)
        self.assertEqual(hyb_a.trace, hyb_c.trace)
        self.assertEqual(repr(r_a), repr(r_c))
        self.assertNotIn("vb3x3", r_a.mode_selections)

    def test_replay_is_identical(self):
        first = Simulation(self.config, self.topology)
        r1 = first.run()
        second = Simulation(self.config, self.topology)
        r2 = second.run()
        self.assertEqual(repr(r1), repr(r2))
        self.assertEqual(first.trace, second.trace)


if __name__ == "__main__":
    unittest.main()
