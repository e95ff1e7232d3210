"""MAC-level throughput, per-frame delay and Jain's fairness index."""
import csv
import math
import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as st

from core.phy import DropCause


@dataclass
class NodeStats:
    enqueued: int = 0
    acked: int = 0
    data_attempts: int = 0
    dropped_queue: int = 0
    dropped_retry: int = 0
    # Frames addressed to this node that were not received, by cause
    dropped_channel: int = 0
    dropped_collision: int = 0
    dropped_below_ed: int = 0
    dropped_half_duplex: int = 0
    mode_usage: Counter = field(default_factory=Counter)
    mode_selections: Counter = field(default_factory=Counter)

    def count_drop(self, cause):
        if cause is DropCause.CHANNEL_ERROR:
            self.dropped_channel += 1
        elif cause is DropCause.BELOW_ED:
            self.dropped_below_ed += 1
        elif cause is DropCause.TRANSMITTING:
            self.dropped_half_duplex += 1
        else:
            self.dropped_collision += 1


@dataclass
class NodeReport:
    node_id: int
    delivered_bits: int
    throughput_bps: float
    throughput_warm_bps: float
    frames_delivered: int
    mean_delay_s: float
    mean_delay_with_queued_s: float
    dropped_queue: int
    dropped_retry: int
    dropped_channel: int
    dropped_collision: int = 0
    dropped_below_ed: int = 0
    dropped_half_duplex: int = 0


@dataclass
class MetricsReport:
    duration: float
    warmup: float
    nodes: list
    delay_samples: list
    jain: float
    jain_warm: float
    mode_usage: dict
    mode_selections: dict

    @property
    def mean_throughput_bps(self):
        if not self.nodes:
            return 0.0
        return float(np.mean([n.throughput_bps for n in self.nodes]))

    @property
    def mean_delay_s(self):
        return float(np.mean(self.delay_samples)) if self.delay_samples else float("nan")

    @property
    def total_delivered_bits(self):
        return sum(n.delivered_bits for n in self.nodes)


def jain_index(throughputs):
    """(sum x)^2 / (n * sum x^2); None when every value is zero."""
    x = np.asarray(list(throughputs), dtype=float)
    if x.size == 0 or not np.any(x > 0):
        return None
    return float(x.sum() ** 2 / (x.size * np.sum(x * x)))


class MetricsCollector:
    """Per-run accumulators; throughput is credited to the flow's source node."""

    def __init__(self, source_ids, warmup=0.0):
        self.source_ids = list(source_ids)
        self.warmup = warmup
        self.delivered_bits = Counter()
        self.delivered_bits_warm = Counter()
        self.frames_delivered = Counter()
        self.delays = {nid: [] for nid in self.source_ids}
        self.delay_samples = []
        self._seen = set()

    def record_delivery(self, source, destination, seq, enqueue_time, deliver_time, bits):
        """Credit one delivered DATA frame; repeated (source, seq) pairs are ignored."""
        if deliver_time < enqueue_time:
            raise ValueError("deliver_time precedes enqueue_time")
        key = (source, seq)
        if key in self._seen:
            return False
        self._seen.add(key)
        delay = deliver_time - enqueue_time
        self.delay_samples.append(delay)
        self.delays.setdefault(source, []).append(delay)
        self.delivered_bits[source] += bits
        self.frames_delivered[source] += 1
        if deliver_time >= self.warmup:
            self.delivered_bits_warm[source] += bits
        return True

    def report(self, duration, node_stats, queued=None):
        """
        Build the MetricsReport.

        `queued` maps node id to enqueue times of frames still waiting at
        the end; they only enter the censored delay variant.
        """
        queued = queued or {}
        measured = max(duration, 0.0)
        warm_interval = max(duration - self.warmup, 0.0)
        nodes = []
        for nid in self.source_ids:
            bits = self.delivered_bits[nid]
            delays = self.delays.get(nid, [])
            censored = delays + [duration - t for t in queued.get(nid, [])]
            s = node_stats.get(nid, NodeStats())
            nodes.append(NodeReport(
                node_id=nid,
                delivered_bits=bits,
                throughput_bps=bits / measured if measured > 0 else 0.0,
                throughput_warm_bps=(self.delivered_bits_warm[nid] / warm_interval
                                     if warm_interval > 0 else 0.0),
                frames_delivered=self.frames_delivered[nid],
                mean_delay_s=float(np.mean(delays)) if delays else float("nan"),
                mean_delay_with_queued_s=float(np.mean(censored)) if censored else float("nan"),
                dropped_queue=s.dropped_queue,
                dropped_retry=s.dropped_retry,
                dropped_channel=s.dropped_channel,
                dropped_collision=s.dropped_collision,
                dropped_below_ed=s.dropped_below_ed,
                dropped_half_duplex=s.dropped_half_duplex,
            ))
        usage = Counter()
        selections = Counter()
        for s in node_stats.values():
            usage.update(s.mode_usage)
            selections.update(s.mode_selections)
        return MetricsReport(
            duration=duration,
            warmup=self.warmup,
            nodes=nodes,
            delay_samples=list(self.delay_samples),
            jain=jain_index(n.throughput_bps for n in nodes),
            jain_warm=jain_index(n.throughput_warm_bps for n in nodes),
            mode_usage=dict(sorted(usage.items())),
            mode_selections=dict(sorted(selections.items())),
        )


# ── aggregation across runs ──

@dataclass
class Estimate:
    mean: float
    half_width: float
    n: int

    @property
    def has_ci(self):
        return not math.isnan(self.half_width)


def confidence_interval(values, level=0.95):
    """Mean and Student-t half-width; half-width is NaN for a single value."""
    x = np.asarray(list(values), dtype=float)
    x = x[~np.isnan(x)]
    if x.size == 0:
        return Estimate(float("nan"), float("nan"), 0)
    if x.size == 1:
        return Estimate(float(x[0]), float("nan"), 1)
    sd = x.std(ddof=1)
    t = st.t.ppf(0.5 + level / 2.0, x.size - 1)
    return Estimate(float(x.mean()), float(t * sd / math.sqrt(x.size)), int(x.size))


SUMMARY_METRICS = ("throughput_bps", "mean_delay_s", "mean_delay_with_queued_s", "jain")


def summarize(reports):
    """
    Aggregate runs into per-metric Estimates.

    Node-level metrics are pooled over all nodes of all runs; the Jain
    index is one sample per run.
    """
    reports = list(reports)
    pooled = {"throughput_bps": [], "mean_delay_s": [], "mean_delay_with_queued_s": []}
    for rep in reports:
        for node in rep.nodes:
            pooled["throughput_bps"].append(node.throughput_bps)
        pooled["mean_delay_s"].extend(rep.delay_samples)
        for node in rep.nodes:
            pooled["mean_delay_with_queued_s"].append(node.mean_delay_with_queued_s)
    result = {name: confidence_interval(vals) for name, vals in pooled.items()}
    result["jain"] = confidence_interval(r.jain for r in reports if r.jain is not None)
    return result


# ── CSV contracts ──

NODE_CSV_HEADER = [
    "run_id", "node_id", "throughput_bps", "mean_delay_s", "frames_delivered",
    "frames_dropped_queue", "frames_dropped_retry", "frames_dropped_channel",
    "throughput_warm_bps", "mean_delay_with_queued_s",
    "frames_dropped_collision", "frames_dropped_below_ed", "frames_dropped_half_duplex",
]


def write_node_csv(path, run_reports):
    """run_reports: iterable of (run_id, MetricsReport)."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(NODE_CSV_HEADER)
        for run_id, rep in run_reports:
            for n in rep.nodes:
                writer.writerow([
                    run_id, n.node_id, repr(n.throughput_bps), repr(n.mean_delay_s),
                    n.frames_delivered, n.dropped_queue, n.dropped_retry, n.dropped_channel,
                    repr(n.throughput_warm_bps), repr(n.mean_delay_with_queued_s),
                    n.dropped_collision, n.dropped_below_ed, n.dropped_half_duplex,
                ])
    return path


def write_summary_csv(path, rows):
    """rows: iterable of (label, {metric: Estimate})."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["config", "metric", "mean", "ci95_half_width", "n", "ci_available"])
        for label, estimates in rows:
            for metric in SUMMARY_METRICS:
                est = estimates.get(metric)
                if est is None:
                    continue
                writer.writerow([label, metric, repr(est.mean), repr(est.half_width), est.n,
                                 int(est.has_ci)])
    return path
