"""
Evaluation topologies: paired stations on a square terrain.

Stations come in mutual pairs (A sends to B and B sends to A) whose members
are at most `max_pair_distance` apart. Contention is steered by shrinking or
growing the square the pair anchors are dropped into.
"""
import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

logger = logging.getLogger(__name__)

MAX_PAIR_DISTANCE = 150.0
# Carrier sensing range of a SISO station at the default CCA threshold
SISO_SENSE_RANGE = 225.0

LOW_DEGREE_LIMIT = 6.0
HIGH_DEGREE_LIMIT = 12.0


class ContentionClass(Enum):
    LOW = "LOW"
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"


class TopologyFormatError(ValueError):
    """Malformed topology file."""

    def __init__(self, message, line_no=None, field=None):
        self.line_no = line_no
        self.field = field
        where = f"line {line_no}" if line_no is not None else "file"
        if field:
            where += f", field '{field}'"
        super().__init__(f"{where}: {message}")


class TopologyInfeasibleError(ValueError):
    """Requested sensing density cannot be reached with the given node count."""


def classify(mean_degree):
    if mean_degree < LOW_DEGREE_LIMIT:
        return ContentionClass.LOW
    if mean_degree <= HIGH_DEGREE_LIMIT:
        return ContentionClass.MEDIUM
    return ContentionClass.HIGH


@dataclass
class Topology:
    width: float
    height: float
    nodes: list = field(default_factory=list)
    pairs: list = field(default_factory=list)
    contention_class: ContentionClass = None
    max_pair_distance: float = MAX_PAIR_DISTANCE

    def __post_init__(self):
        self.nodes = [(int(i), float(x), float(y)) for i, x, y in self.nodes]
        self.pairs = [(int(a), int(b)) for a, b in self.pairs]
        self.validate()

    def validate(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("terrain dimensions must be positive")
        pos = {}
        for nid, x, y in self.nodes:
            if nid in pos:
                raise ValueError(f"duplicate node id {nid}")
            if not (0.0 <= x <= self.width and 0.0 <= y <= self.height):
                raise ValueError(f"node {nid} at ({x}, {y}) outside the {self.width} x {self.height} terrain")
            pos[nid] = (x, y)
        paired = set()
        for a, b in self.pairs:
            for nid in (a, b):
                if nid not in pos:
                    raise ValueError(f"pair ({a}, {b}) references unknown node {nid}")
                if nid in paired:
                    raise ValueError(f"node {nid} appears in more than one pair")
                paired.add(nid)
            if a == b:
                raise ValueError(f"node {a} paired with itself")
            d = math.dist(pos[a], pos[b])
            if d > self.max_pair_distance:
                raise ValueError(f"pair ({a}, {b}) is {d:.3f} m apart, above {self.max_pair_distance} m")
        unpaired = set(pos) - paired
        if unpaired:
            raise ValueError(f"nodes without a pair: {sorted(unpaired)}")

    def node_ids(self):
        return [nid for nid, _, _ in self.nodes]

    def positions(self):
        return {nid: (x, y) for nid, x, y in self.nodes}

    def peer_of(self, node_id):
        for a, b in self.pairs:
            if a == node_id:
                return b
            if b == node_id:
                return a
        return None

    def flows(self):
        """Directed (source, destination) flows; each pair carries one each way."""
        out = []
        for a, b in self.pairs:
            out.extend([(a, b), (b, a)])
        return out

    def __len__(self):
        return len(self.nodes)


# ── sensing neighbourhoods ──

def _coords(topology):
    if not topology.nodes:
        return np.zeros((0, 2))
    return np.array([(x, y) for _, x, y in topology.nodes])


def _within(topology, sense_range):
    xy = _coords(topology)
    d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=-1))
    close = d <= sense_range
    np.fill_diagonal(close, False)
    return close


def sensing_degree(topology, sense_range=SISO_SENSE_RANGE):
    """Per-node count of other nodes within sense_range, and their mean."""
    if sense_range <= 0:
        raise ValueError("sense_range must be positive")
    close = _within(topology, sense_range)
    counts = close.sum(axis=1).astype(int).tolist()
    mean = float(np.mean(counts)) if counts else 0.0
    return counts, mean


def sensing_links(topology, sense_range=SISO_SENSE_RANGE):
    """Unordered node pairs (a < b) that sense each other."""
    close = _within(topology, sense_range)
    ids = topology.node_ids()
    rows, cols = np.nonzero(np.triu(close, k=1))
    return [(ids[i], ids[j]) for i, j in zip(rows.tolist(), cols.tolist())]


# ── generation ──

# Cap on candidate placements drawn per pair when steering towards sparser layouts
MAX_CANDIDATES = 64


def _draw_pairs(count, side, width, height, max_pair, rng):
    """`count` candidate pairs: anchor uniform in the centred square, partner uniform in the pair disc."""
    cx, cy = width / 2.0, height / 2.0
    half_w = min(side, width) / 2.0
    half_h = min(side, height) / 2.0
    anchors = np.column_stack([
        rng.uniform(cx - half_w, cx + half_w, count),
        rng.uniform(cy - half_h, cy + half_h, count),
    ])
    r = max_pair * np.sqrt(rng.random(count))
    theta = rng.uniform(0.0, 2.0 * np.pi, count)
    partners = anchors + np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    # Clamping into the terrain never lengthens a pair: the anchor is inside
    partners[:, 0] = np.clip(partners[:, 0], 0.0, width)
    partners[:, 1] = np.clip(partners[:, 1], 0.0, height)
    return anchors, partners


def _place(n_pairs, side, candidates, width, height, max_pair, sense_range, rng):
    """
    Place pairs one at a time.

    With candidates > 1, each pair is the candidate that adds the fewest
    sensing links to the nodes already placed (first one on ties).
    """
    placed = np.zeros((0, 2))
    nodes = []
    pairs = []
    for k in range(n_pairs):
        anchors, partners = _draw_pairs(candidates, side, width, height, max_pair, rng)
        pick = 0
        if candidates > 1 and len(placed):
            da = np.linalg.norm(anchors[:, None, :] - placed[None, :, :], axis=-1)
            dp = np.linalg.norm(partners[:, None, :] - placed[None, :, :], axis=-1)
            links = (da <= sense_range).sum(axis=1) + (dp <= sense_range).sum(axis=1)
            pick = int(np.argmin(links))
        a, b = 2 * k, 2 * k + 1
        nodes.append((a, float(anchors[pick, 0]), float(anchors[pick, 1])))
        nodes.append((b, float(partners[pick, 0]), float(partners[pick, 1])))
        pairs.append((a, b))
        placed = np.vstack([placed, anchors[pick], partners[pick]])
    return nodes, pairs


def _side_for_degree(n_nodes, target, sense_range):
    # Partner always sensed, the other n-2 spread uniformly over side^2
    others = max(target - 1.0, 1e-3)
    return math.sqrt(max(n_nodes - 2, 1) * math.pi * sense_range ** 2 / others)


def generate(n_nodes, width, height, max_pair_distance=MAX_PAIR_DISTANCE, target_sense_degree=None,
             seed=0, sense_range=SISO_SENSE_RANGE, tolerance=0.2, max_attempts=12):
    """
    Generate a paired topology.

    Without a target degree the anchors cover the whole terrain uniformly.
    With one, each attempt either resizes the anchor square (denser
    targets) or raises the number of candidates per pair once the whole
    terrain is in use (sparser targets), until the measured mean sensing
    degree is within `tolerance` of the target. After `max_attempts` the
    closest attempt is returned with a warning.

    Raises:
        ValueError: odd node count or non-positive distances
        TopologyInfeasibleError: target degree outside (0, n_nodes - 1]
    """
    if n_nodes < 0 or n_nodes % 2:
        raise ValueError(f"n_nodes must be even and >= 0, got {n_nodes}")
    if max_pair_distance <= 0:
        raise ValueError("max_pair_distance must be positive")
    if width <= 0 or height <= 0:
        raise ValueError("terrain dimensions must be positive")
    if target_sense_degree is not None and not 0 < target_sense_degree <= max(n_nodes - 1, 0):
        raise TopologyInfeasibleError(
            f"mean sensing degree {target_sense_degree} unreachable with {n_nodes} nodes"
        )

    n_pairs = n_nodes // 2
    full_side = max(width, height)

    def build(side, candidates, attempt):
        rng = np.random.default_rng([seed, attempt])
        nodes, pairs = _place(n_pairs, side, candidates, width, height, max_pair_distance, sense_range, rng)
        return Topology(width, height, nodes, pairs, max_pair_distance=max_pair_distance)

    if target_sense_degree is None:
        topo = build(full_side, 1, 0)
        topo.contention_class = classify(sensing_degree(topo, sense_range)[1])
        return topo

    target = float(target_sense_degree)
    side = max(min(_side_for_degree(n_nodes, target, sense_range), full_side), max_pair_distance)
    candidates = 1
    best = None
    for attempt in range(max_attempts):
        topo = build(side, candidates, attempt)
        mean = sensing_degree(topo, sense_range)[1]
        error = abs(mean - target) / target
        logger.debug("topology attempt %d: side=%.1f m, candidates=%d, mean degree %.2f (target %.2f)",
                     attempt, side, candidates, mean, target)
        if best is None or error < best[0]:
            best = (error, topo, mean)
        if error <= tolerance:
            break
        # Degree of the non-partner neighbours scales with 1/side^2
        ratio = max(mean - 1.0, 1e-3) / max(target - 1.0, 1e-3)
        if mean > target:
            if side < full_side:
                side = min(side * math.sqrt(ratio), full_side)
            elif candidates < MAX_CANDIDATES:
                candidates *= 2
            else:
                break
        elif candidates > 1:
            candidates //= 2
        else:
            side = max(side * math.sqrt(ratio), max_pair_distance)

    error, topo, mean = best
    if error > tolerance:
        logger.warning("best-effort topology: mean sensing degree %.2f vs target %.2f (%d nodes, %gx%g m)",
                       mean, target, n_nodes, width, height)
    topo.contention_class = classify(mean)
    return topo


# ── persistence ──

def save(topology, path):
    """Write the line-oriented topology file; floats use repr so they reload exactly."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        f.write("# paired ad hoc topology\n")
        f.write(f"terrain {topology.width!r} {topology.height!r}\n")
        f.write(f"max_pair {topology.max_pair_distance!r}\n")
        if topology.contention_class is not None:
            f.write(f"class {topology.contention_class.value}\n")
        for nid, x, y in topology.nodes:
            f.write(f"node {nid} {x!r} {y!r}\n")
        for a, b in topology.pairs:
            f.write(f"pair {a} {b}\n")
    return path


def _number(token, kind, line_no, field_name):
    try:
        return kind(token)
    except ValueError:
        raise TopologyFormatError(f"cannot parse {token!r}", line_no, field_name) from None


def load(path):
    width = height = None
    max_pair = MAX_PAIR_DISTANCE
    cls = None
    nodes = []
    pairs = []
    positions = {}
    paired = set()
    with open(path) as f:
        lines = list(enumerate(f, start=1))

    for line_no, raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        keyword, *args = line.split()
        if keyword == "terrain":
            if len(args) != 2:
                raise TopologyFormatError("expected 'terrain W H'", line_no, "terrain")
            width = _number(args[0], float, line_no, "width")
            height = _number(args[1], float, line_no, "height")
            if width <= 0 or height <= 0:
                raise TopologyFormatError("terrain dimensions must be positive", line_no, "terrain")
        elif keyword == "max_pair":
            if len(args) != 1:
                raise TopologyFormatError("expected 'max_pair D'", line_no, "max_pair")
            max_pair = _number(args[0], float, line_no, "max_pair")
        elif keyword == "class":
            try:
                cls = ContentionClass(args[0].upper())
            except (ValueError, IndexError):
                raise TopologyFormatError("expected LOW, MEDIUM or HIGH", line_no, "class") from None
        elif keyword == "node":
            if width is None:
                raise TopologyFormatError("node before terrain header", line_no, "node")
            if len(args) != 3:
                raise TopologyFormatError("expected 'node ID X Y'", line_no, "node")
            nid = _number(args[0], int, line_no, "id")
            x = _number(args[1], float, line_no, "x")
            y = _number(args[2], float, line_no, "y")
            if nid in positions:
                raise TopologyFormatError(f"duplicate node id {nid}", line_no, "id")
            if not 0.0 <= x <= width:
                raise TopologyFormatError(f"x={x!r} outside terrain width {width!r}", line_no, "x")
            if not 0.0 <= y <= height:
                raise TopologyFormatError(f"y={y!r} outside terrain height {height!r}", line_no, "y")
            positions[nid] = (x, y)
            nodes.append((nid, x, y))
        elif keyword == "pair":
            if len(args) != 2:
                raise TopologyFormatError("expected 'pair A B'", line_no, "pair")
            a = _number(args[0], int, line_no, "source")
            b = _number(args[1], int, line_no, "destination")
            for nid, name in ((a, "source"), (b, "destination")):
                if nid not in positions:
                    raise TopologyFormatError(f"unknown node {nid}", line_no, name)
                if nid in paired:
                    raise TopologyFormatError(f"node {nid} already in a pair", line_no, name)
            if a == b:
                raise TopologyFormatError(f"node {a} paired with itself", line_no, "destination")
            if math.dist(positions[a], positions[b]) > max_pair:
                raise TopologyFormatError(f"pair ({a}, {b}) longer than {max_pair!r} m", line_no, "pair")
            paired.update((a, b))
            pairs.append((a, b))
        else:
            raise TopologyFormatError(f"unknown keyword {keyword!r}", line_no, "keyword")

    if width is None:
        raise TopologyFormatError("missing 'terrain W H' header", None, "terrain")
    unpaired = sorted(set(positions) - paired)
    if unpaired:
        raise TopologyFormatError(f"nodes without a pair: {unpaired}", None, "pair")
    return Topology(width, height, nodes, pairs, cls, max_pair)
