import csv
import math
import os
import tempfile
import unittest

import numpy.testing as npt

from core.metrics import (NODE_CSV_HEADER, MetricsCollector, NodeStats, confidence_interval, jain_index,
                          summarize, write_node_csv, write_summary_csv)
from core.phy import DropCause


class JainIndexTestCase(unittest.TestCase):
    def test_uneven(self):
        npt.assert_allclose(jain_index([2.0, 1.0, 1.0]), 16.0 / 18.0)

    def test_equal_shares(self):
        npt.assert_allclose(jain_index([5.0, 5.0, 5.0, 5.0]), 1.0)

    def test_single_winner(self):
        npt.assert_allclose(jain_index([0.0, 0.0, 7.0, 0.0]), 0.25)

    def test_undefined(self):
        self.assertIsNone(jain_index([0.0, 0.0]))
        self.assertIsNone(jain_index([]))


class CollectorTestCase(unittest.TestCase):
    def test_delay_sample(self):
        m = MetricsCollector([0, 1])
        self.assertTrue(m.record_delivery(0, 1, 0, enqueue_time=1.0, deliver_time=1.5, bits=11296))
        report = m.report(2.0, {0: NodeStats(), 1: NodeStats()})
        self.assertEqual(report.delay_samples, [0.5])
        self.assertEqual(report.nodes[0].delivered_bits, 11296)
        npt.assert_allclose(report.nodes[0].throughput_bps, 5648.0)
        self.assertEqual(report.nodes[1].frames_delivered, 0)
        self.assertTrue(math.isnan(report.nodes[1].mean_delay_s))

    def test_duplicate_delivery_counted_once(self):
        m = MetricsCollector([0, 1])
        self.assertTrue(m.record_delivery(0, 1, 4, 0.0, 0.1, 100))
        self.assertFalse(m.record_delivery(0, 1, 4, 0.0, 0.2, 100))
        report = m.report(1.0, {})
        self.assertEqual(report.nodes[0].frames_delivered, 1)
        self.assertEqual(report.delay_samples, [0.1])

    def test_delivery_before_enqueue(self):
        with self.assertRaises(ValueError):
            MetricsCollector([0]).record_delivery(0, 1, 0, 1.0, 0.5, 100)

    def test_warmup_and_queued_frames(self):
        m = MetricsCollector([0], warmup=1.0)
        m.record_delivery(0, 1, 0, 0.0, 0.5, 1000)
        m.record_delivery(0, 1, 1, 0.5, 1.5, 1000)
        report = m.report(2.0, {0: NodeStats()}, queued={0: [1.0]})
        node = report.nodes[0]
        npt.assert_allclose(node.throughput_bps, 1000.0)
        npt.assert_allclose(node.throughput_warm_bps, 1000.0)
        npt.assert_allclose(node.mean_delay_s, 0.75)
        # still queued since t=1.0: censored at the end of the run
        npt.assert_allclose(node.mean_delay_with_queued_s, (0.5 + 1.0 + 1.0) / 3.0)

    def test_drop_causes_reach_the_report(self):
        stats = NodeStats()
        for cause in (DropCause.CHANNEL_ERROR, DropCause.COLLISION_CAPTURE, DropCause.COLLISION_CAPTURE,
                      DropCause.BELOW_ED):
            stats.count_drop(cause)
        node = MetricsCollector([0]).report(1.0, {0: stats}).nodes[0]
        self.assertEqual((node.dropped_channel, node.dropped_collision, node.dropped_below_ed,
                          node.dropped_half_duplex), (1, 2, 1, 0))

    def test_mode_counters_are_merged(self):
        a, b = NodeStats(), NodeStats()
        a.mode_usage["vb3x3"] += 2
        b.mode_usage["vb3x3"] += 1
        b.mode_usage["al2x3"] += 4
        report = MetricsCollector([0, 1]).report(1.0, {0: a, 1: b})
        self.assertEqual(report.mode_usage, {"al2x3": 4, "vb3x3": 3})


class ConfidenceIntervalTestCase(unittest.TestCase):
    def test_two_values(self):
        est = confidence_interval([100.0, 200.0])
        npt.assert_allclose(est.mean, 150.0)
        # t(0.975, 1) * s / sqrt(2) with s = 70.71
        npt.assert_allclose(est.half_width, 12.7062047 * 50.0, rtol=1e-6)
        self.assertTrue(est.has_ci)

    def test_single_run(self):
        est = confidence_interval([3.0])
        self.assertEqual(est.mean, 3.0)
        self.assertFalse(est.has_ci)

    def test_identical_runs(self):
        est = confidence_interval([4.0, 4.0, 4.0])
        self.assertEqual(est.half_width, 0.0)

    def test_nan_values_skipped(self):
        est = confidence_interval([float("nan"), 2.0, 4.0])
        self.assertEqual(est.n, 2)


class OutputTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        m = MetricsCollector([0, 1])
        m.record_delivery(0, 1, 0, 0.0, 0.25, 500)
        m.record_delivery(1, 0, 0, 0.0, 0.5, 500)
        self.report = m.report(1.0, {})

    def test_node_csv(self):
        path = write_node_csv(os.path.join(self.tmp.name, "nodes.csv"), [(7, self.report)])
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], NODE_CSV_HEADER)
        self.assertEqual(rows[1][:2], ["7", "0"])
        self.assertEqual(len(rows[1]), len(NODE_CSV_HEADER))
        self.assertEqual(len(rows), 3)

    def test_summary_csv(self):
        estimates = summarize([self.report, self.report])
        path = write_summary_csv(os.path.join(self.tmp.name, "summary.csv"), [("siso", estimates)])
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        self.assertEqual([r["metric"] for r in rows],
                         ["throughput_bps", "mean_delay_s", "mean_delay_with_queued_s", "jain"])
        jain = rows[-1]
        self.assertEqual(jain["n"], "2")
        self.assertEqual(jain["ci_available"], "1")
        npt.assert_allclose(float(jain["mean"]), 1.0)


if __name__ == "__main__":
    unittest.main()
