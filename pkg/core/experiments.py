"""
Experiment presets, sweep point expansion and the batch runner.

A sweep point is one MIMO/CCA configuration; it is run on every topology
of the experiment with every seed, and its results land in their own
directory under the output root.
"""
import csv
import dataclasses
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field

from core import topology as topo
from core.channel import PathModel
from core.engine import SimConfig, run
from core.mac import DcfTiming, MimoPolicy
from core.metrics import summarize, write_node_csv, write_summary_csv
from core.phy import CcaMethod, PhyParams

logger = logging.getLogger(__name__)

# Defaults of every tunable parameter, by experiment-file section
DEFAULT_SIM_PARAMS = {
    "run": {
        "duration": 10.0,
        "warmup": 0.0,
        "interference_floor_db": -10.0,
    },
    "traffic": {
        "traffic_interval": 0.0,
        "queue_capacity": 400,
    },
    "phy": {
        "bandwidth": 22e6,
        "noise_figure_db": 7.0,
        "bit_rate": 1e6,
        "ed_threshold_dbm": -73.8764,
        "cca_threshold_dbm": -80.9201,
        "cca_method": "average",
        "plcp_duration": 192e-6,
        "tx_power_dbm": 10.0,
        "antenna_height": 1.2,
    },
    "mac": {
        "slot": 20e-6,
        "sifs": 10e-6,
        "difs": 50e-6,
        "cw_min": 31,
        "cw_max": 1023,
        "short_retry_limit": 7,
        "long_retry_limit": 4,
        "rts_bytes": 20,
        "cts_bytes": 14,
        "ack_bytes": 14,
        "mac_header_bytes": 28,
        "payload_bytes": 1412,
        "max_propagation": 10e-6,
    },
}

# Target mean sensing degree per contention class
CLASS_TARGET_DEGREE = {
    topo.ContentionClass.LOW: 4.0,
    topo.ContentionClass.MEDIUM: 9.0,
    topo.ContentionClass.HIGH: 16.0,
}

_PHY_FIELDS = {f.name for f in dataclasses.fields(PhyParams)}
_TIMING_FIELDS = {f.name for f in dataclasses.fields(DcfTiming)}
_PATH_FIELDS = {f.name for f in dataclasses.fields(PathModel)}


def _default_type(section, key):
    return type(DEFAULT_SIM_PARAMS[section][key])


def build_sim_config(overrides=None, **point):
    """
    Build a SimConfig from the defaults plus section overrides.

    `overrides` maps section name to {key: value}; `point` carries the
    per-run fields (seed, policy, n_tx, n_rx, sinr_min, sinr_max and
    optionally cca_method). Single source of truth for run parameters.
    """
    params = {section: dict(values) for section, values in DEFAULT_SIM_PARAMS.items()}
    for section, values in (overrides or {}).items():
        if section not in params:
            raise ValueError(f"unknown parameter section [{section}]")
        for key, value in values.items():
            if key not in params[section]:
                raise ValueError(f"unknown parameter '{key}' in [{section}]")
            params[section][key] = value

    flat = {}
    for values in params.values():
        flat.update(values)
    method = point.pop("cca_method", None)
    if method is not None:
        flat["cca_method"] = method
    method = flat["cca_method"]
    flat["cca_method"] = method if isinstance(method, CcaMethod) else CcaMethod(str(method).lower())

    phy = PhyParams(**{k: v for k, v in flat.items() if k in _PHY_FIELDS})
    timing = DcfTiming(**{k: v for k, v in flat.items() if k in _TIMING_FIELDS})
    path = PathModel(**{k: v for k, v in flat.items() if k in _PATH_FIELDS})
    return SimConfig(
        duration=float(flat["duration"]),
        warmup=float(flat["warmup"]),
        interference_floor_db=flat["interference_floor_db"],
        traffic_interval=float(flat["traffic_interval"]),
        queue_capacity=int(flat["queue_capacity"]),
        timing=timing,
        phy=phy,
        path=path,
        **point,
    )


def coerce_param(section, key, text):
    """Convert an experiment-file string to the type of the default value."""
    if section not in DEFAULT_SIM_PARAMS or key not in DEFAULT_SIM_PARAMS[section]:
        raise KeyError(key)
    kind = _default_type(section, key)
    if kind is str:
        return text.strip()
    if text.strip().lower() in ("none", "off"):
        return None
    return kind(float(text)) if kind is int else kind(text)


# ── sweep points ──

@dataclass(frozen=True)
class SweepPoint:
    label: str
    policy: MimoPolicy
    n_tx: int
    n_rx: int
    sinr_min: float = 5.0
    sinr_max: float = 23.0
    cca_method: CcaMethod = None

    @property
    def point_id(self):
        return re.sub(r"[^A-Za-z0-9_.+-]", "_", self.label)

    def sim_fields(self):
        return {
            "policy": self.policy,
            "n_tx": self.n_tx,
            "n_rx": self.n_rx,
            "sinr_min": self.sinr_min,
            "sinr_max": self.sinr_max,
            "cca_method": self.cca_method,
        }


_LABEL = re.compile(r"^(?:(siso)|(al|vb)(\d+)x(\d+)|hyb-([abc])(\d+))$")


def parse_point(label, sinr_min=5.0, sinr_max=23.0, cca_method=None):
    """Sweep point from a short label: siso, al2x3, vb3x4, hyb-a3, hyb-b4, hyb-c4."""
    m = _LABEL.match(label.strip().lower())
    if m is None:
        raise ValueError(f"unrecognised configuration label {label!r}")
    if m.group(1):
        return SweepPoint(label, MimoPolicy.SISO, 1, 1, sinr_min, sinr_max, cca_method)
    if m.group(2):
        n_tx, n_rx = int(m.group(3)), int(m.group(4))
        policy = MimoPolicy.ALAMOUTI if m.group(2) == "al" else MimoPolicy.VBLAST
        return SweepPoint(label, policy, n_tx, n_rx, sinr_min, sinr_max, cca_method)
    n = int(m.group(6))
    policy = MimoPolicy(f"hyb-{m.group(5)}")
    return SweepPoint(label, policy, n, n, sinr_min, sinr_max, cca_method)


def _cca_study(sweep):
    points = [parse_point("siso", cca_method=CcaMethod.AVERAGE)]
    for method, prefix in ((CcaMethod.SUM, "sum"), (CcaMethod.AVERAGE, "avg")):
        for n in sweep.get("n_rx", (1, 2, 3, 4)):
            p = parse_point(f"al2x{n}", cca_method=method)
            points.append(dataclasses.replace(p, label=f"{prefix}-al2x{n}"))
    return points


def _alamouti_grid(sweep):
    return [parse_point("siso")] + [parse_point(f"al2x{n}") for n in sweep.get("n_rx", (1, 2, 3, 4))]


def _vblast_grid(sweep):
    labels = sweep.get("configs", ("2x2", "2x3", "3x3", "3x4", "4x4"))
    return [parse_point("siso")] + [parse_point(f"vb{c}") for c in labels]


def _scheme_compare(sweep):
    points = []
    for n in sweep.get("n_rx", (3, 4, 5)):
        points.append(parse_point(f"al2x{n}"))
        points.append(parse_point(f"vb{n - 1}x{n}"))
    return points


def _hyb_a_sweep(sweep):
    points = []
    for n in sweep.get("n_rx", (3, 4)):
        points.append(parse_point(f"vb{n - 1}x{n}"))
        for s in sweep.get("sinr_min", range(2, 16)):
            p = parse_point(f"hyb-a{n}", sinr_min=float(s))
            points.append(dataclasses.replace(p, label=f"hyb-a{n}-min{s:g}"))
    return points


def _hyb_b_sweep(sweep):
    points = []
    for n in sweep.get("n_rx", (3, 4)):
        points.append(parse_point(f"vb{n - 1}x{n}"))
        points.append(parse_point(f"vb{n}x{n}"))
        for s in sweep.get("sinr_max", range(14, 27)):
            p = parse_point(f"hyb-b{n}", sinr_max=float(s))
            points.append(dataclasses.replace(p, label=f"hyb-b{n}-max{s:g}"))
    return points


def _hyb_c(sweep):
    lo = float(sweep.get("sinr_min", (5.0,))[0])
    hi = float(sweep.get("sinr_max", (23.0,))[0])
    points = []
    for n in sweep.get("n_rx", (3, 4)):
        points.append(parse_point(f"hyb-c{n}", sinr_min=lo, sinr_max=hi))
        points.append(parse_point(f"vb{n - 1}x{n}"))
        points.append(parse_point(f"vb{n}x{n}"))
        points.append(parse_point(f"al2x{n}"))
    points.append(parse_point("siso"))
    return points


def _custom(sweep):
    labels = sweep.get("points")
    if not labels:
        raise ValueError("preset 'custom' needs a 'points' list in [sweep]")
    lo = float(sweep.get("sinr_min", (5.0,))[0])
    hi = float(sweep.get("sinr_max", (23.0,))[0])
    return [parse_point(label, lo, hi) for label in labels]


PRESETS = {
    "cca-study": _cca_study,
    "alamouti-grid": _alamouti_grid,
    "vblast-grid": _vblast_grid,
    "scheme-compare": _scheme_compare,
    "hyb-a-sweep": _hyb_a_sweep,
    "hyb-b-sweep": _hyb_b_sweep,
    "hyb-c": _hyb_c,
    "custom": _custom,
}


def expand_points(preset, sweep=None):
    try:
        builder = PRESETS[preset]
    except KeyError:
        raise ValueError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}") from None
    points = builder(dict(sweep or {}))
    seen = set()
    for p in points:
        if p.point_id in seen:
            raise ValueError(f"duplicate sweep point {p.label!r}")
        seen.add(p.point_id)
    return points


# ── experiments ──

@dataclass
class Experiment:
    name: str
    preset: str
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    nodes: int = 40
    terrain: float = 1600.0
    topology_class: topo.ContentionClass = topo.ContentionClass.MEDIUM
    topologies: int = 1
    topology_seed: int = 0
    topology_files: list = field(default_factory=list)
    sweep: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)

    def points(self):
        return expand_points(self.preset, self.sweep)

    def build_topologies(self):
        """Topologies given as files, else regenerated for the configured class."""
        if self.topology_files:
            return [topo.load(path) for path in self.topology_files]
        target = CLASS_TARGET_DEGREE[self.topology_class]
        out = []
        for k in range(self.topologies):
            t = topo.generate(self.nodes, self.terrain, self.terrain,
                              target_sense_degree=min(target, self.nodes - 1),
                              seed=self.topology_seed + k)
            out.append(t)
        return out


def config_hash(payload):
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def topology_digest(t):
    return config_hash({
        "terrain": [t.width, t.height],
        "nodes": [[i, repr(x), repr(y)] for i, x, y in t.nodes],
        "pairs": t.pairs,
    })


def execute_run(task):
    """Run one (point, topology, seed) task; top-level so process pools can pickle it."""
    run_id, config, topology = task
    return run_id, run(config, topology)


class SweepRunner:
    """
    Run every sweep point of an experiment and write its results.

    Failed points are collected in `failures` instead of aborting the
    sweep; points whose config hash is already in the manifest are
    skipped.
    """

    MANIFEST = "manifest.json"

    def __init__(self, experiment, out_dir, executor=None, calibration=None):
        self.experiment = experiment
        self.out_dir = out_dir
        self.executor = executor
        self.calibration = calibration
        self.failures = []
        self.skipped = []

    def _manifest_path(self):
        return os.path.join(self.out_dir, self.MANIFEST)

    def load_manifest(self):
        path = self._manifest_path()
        if not os.path.exists(path):
            return {"experiment": self.experiment.name, "points": {}}
        with open(path) as f:
            return json.load(f)

    def _save_manifest(self, manifest):
        os.makedirs(self.out_dir, exist_ok=True)
        tmp = self._manifest_path() + ".tmp"
        with open(tmp, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        os.replace(tmp, self._manifest_path())

    def _configs(self, point):
        exp = self.experiment
        configs = []
        for seed in exp.seeds:
            cfg = build_sim_config(exp.overrides, seed=int(seed), **point.sim_fields())
            if self.calibration is not None:
                cfg.calibration = self.calibration
            cfg.validate()
            configs.append(cfg)
        return configs

    def _map(self, tasks):
        if self.executor is None:
            return [execute_run(t) for t in tasks]
        return list(self.executor.map(execute_run, tasks))

    def run(self, progress_callback=None):
        """
        Execute all points.

        Args:
            progress_callback: callable(current, total, label) for progress updates

        Returns:
            dict point_id -> {"label", "hash", "dir", "files"} for completed points
        """
        exp = self.experiment
        points = exp.points()
        topologies = exp.build_topologies()
        topo_digests = [topology_digest(t) for t in topologies]
        manifest = self.load_manifest()
        total = len(points)
        completed = {}
        self.failures = []
        self.skipped = []

        for idx, point in enumerate(points):
            if progress_callback:
                progress_callback(idx, total, point.label)
            try:
                configs = self._configs(point)
                digest = config_hash({
                    "configs": [c.snapshot() for c in configs],
                    "topologies": topo_digests,
                })
                entry = manifest["points"].get(point.point_id)
                if entry and entry.get("hash") == digest and all(
                        os.path.exists(os.path.join(self.out_dir, p)) for p in entry.get("files", [])):
                    logger.info("skipping %s: already complete", point.label)
                    self.skipped.append(point.point_id)
                    completed[point.point_id] = entry
                    continue

                logger.info("running %s (%d topologies x %d seeds)", point.label, len(topologies), len(configs))
                tasks = []
                for t_idx, t in enumerate(topologies):
                    for cfg in configs:
                        tasks.append((f"t{t_idx}-s{cfg.seed}", cfg, t))
                results = self._map(tasks)
                entry = self._write_point(point, digest, configs, results)
            except Exception as e:
                logger.error("sweep point %s failed: %s", point.label, e)
                self.failures.append({"point": point.label, "error": str(e)})
                continue
            manifest["points"][point.point_id] = entry
            self._save_manifest(manifest)
            completed[point.point_id] = entry
            logger.info("finished %s", point.label)

        if progress_callback:
            progress_callback(total, total, "")
        return completed

    def _write_point(self, point, digest, configs, results):
        rel_dir = point.point_id
        point_dir = os.path.join(self.out_dir, rel_dir)
        os.makedirs(point_dir, exist_ok=True)
        paths = {}

        nodes_path = os.path.join(point_dir, "nodes.csv")
        write_node_csv(nodes_path, results)
        paths["nodes"] = nodes_path

        summary_path = os.path.join(point_dir, "summary.csv")
        write_summary_csv(summary_path, [(point.label, summarize(r for _, r in results))])
        paths["summary"] = summary_path

        config_path = os.path.join(point_dir, "config.json")
        snapshot = dict(configs[0].snapshot())
        snapshot.pop("seed")
        with open(config_path, "w") as f:
            json.dump({"label": point.label, "hash": digest, "config": snapshot}, f, indent=2, sort_keys=True)
        paths["config"] = config_path

        seeds_path = os.path.join(point_dir, "seeds.txt")
        with open(seeds_path, "w") as f:
            f.write("\n".join(str(c.seed) for c in configs) + "\n")
        paths["seeds"] = seeds_path

        return {
            "label": point.label,
            "hash": digest,
            "dir": rel_dir,
            "files": [os.path.relpath(p, self.out_dir) for p in paths.values()],
        }


def write_overview_csv(path, out_dir, completed):
    """Concatenate every point's summary rows into one table."""
    rows = []
    header = None
    for point_id in completed:
        summary = os.path.join(out_dir, point_id, "summary.csv")
        if not os.path.exists(summary):
            continue
        with open(summary, newline="") as f:
            reader = csv.reader(f)
            head = next(reader)
            header = header or head
            rows.extend(reader)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        if header:
            writer.writerow(header)
        writer.writerows(rows)
    return path
