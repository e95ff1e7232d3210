"""INI experiment files."""
import configparser
import os
import re

from core.experiments import DEFAULT_SIM_PARAMS, Experiment, PRESETS, coerce_param
from core.topology import ContentionClass


class ConfigError(ValueError):
    """Invalid experiment file; the message names file, line, section and key."""

    def __init__(self, message, path=None, line_no=None, section=None, key=None):
        self.path = path
        self.line_no = line_no
        self.section = section
        self.key = key
        where = [str(path)] if path else []
        if line_no is not None:
            where.append(f"line {line_no}")
        if section:
            where.append(f"[{section}]" + (f" {key}" if key else ""))
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


EXPERIMENT_KEYS = {
    "name": str,
    "preset": str,
    "seeds": "int-list",
    "nodes": int,
    "terrain": float,
    "class": str,
    "topologies": int,
    "topology_seed": int,
    "topology_files": "str-list",
}

SWEEP_KEYS = {
    "n_rx": "int-list",
    "sinr_min": "float-list",
    "sinr_max": "float-list",
    "points": "str-list",
    "configs": "str-list",
}

_SECTION = re.compile(r"^\s*\[([^\]]+)\]")
_KEY = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _key_lines(text):
    """Map (section, key) to the line it is defined on."""
    lines = {}
    section = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        m = _SECTION.match(raw)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = line_no
            continue
        m = _KEY.match(raw)
        if m and section is not None and not raw[:1].isspace():
            lines[(section, m.group(1).strip().lower())] = line_no
    return lines


def _split(text):
    return [item.strip() for item in text.split(",") if item.strip()]


def _convert(kind, text):
    if kind == "int-list":
        return [int(v) for v in _split(text)]
    if kind == "float-list":
        return [float(v) for v in _split(text)]
    if kind == "str-list":
        return _split(text)
    return kind(text.strip())


def load_experiment(path, seed=None):
    """
    Parse an experiment file into an Experiment.

    `seed`, when given, shifts the seed list so it starts at that value.
    Topology file paths are resolved relative to the experiment file.
    """
    with open(path) as f:
        text = f.read()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as e:
        raise ConfigError(str(e).splitlines()[0], path, getattr(e, "lineno", None)) from None
    lines = _key_lines(text)

    def fail(message, section, key=None):
        raise ConfigError(message, path, lines.get((section, key)), section, key)

    if not parser.has_section("experiment"):
        raise ConfigError("missing [experiment] section", path)

    values = {}
    for key, raw in parser.items("experiment"):
        if key not in EXPERIMENT_KEYS:
            fail(f"unknown key '{key}'", "experiment", key)
        try:
            values[key] = _convert(EXPERIMENT_KEYS[key], raw)
        except ValueError:
            fail(f"invalid value {raw!r}", "experiment", key)

    preset = values.get("preset")
    if preset is None:
        fail("missing key 'preset'", "experiment")
    if preset not in PRESETS:
        fail(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}", "experiment", "preset")

    sweep = {}
    if parser.has_section("sweep"):
        for key, raw in parser.items("sweep"):
            if key not in SWEEP_KEYS:
                fail(f"unknown key '{key}'", "sweep", key)
            try:
                sweep[key] = _convert(SWEEP_KEYS[key], raw)
            except ValueError:
                fail(f"invalid value {raw!r}", "sweep", key)

    overrides = {}
    for section in parser.sections():
        if section in ("experiment", "sweep"):
            continue
        if section not in DEFAULT_SIM_PARAMS:
            fail(f"unknown section; expected one of experiment, sweep, {', '.join(DEFAULT_SIM_PARAMS)}",
                 section)
        for key, raw in parser.items(section):
            try:
                value = coerce_param(section, key, raw)
            except KeyError:
                fail(f"unknown key '{key}'", section, key)
            except ValueError:
                fail(f"invalid value {raw!r}", section, key)
            overrides.setdefault(section, {})[key] = value

    kwargs = {"name": values.get("name") or os.path.splitext(os.path.basename(path))[0], "preset": preset,
              "sweep": sweep, "overrides": overrides}
    if "class" in values:
        try:
            kwargs["topology_class"] = ContentionClass(values["class"].upper())
        except ValueError:
            fail("expected LOW, MEDIUM or HIGH", "experiment", "class")
    for key in ("nodes", "terrain", "topologies", "topology_seed"):
        if key in values:
            kwargs[key] = values[key]
    if "topology_files" in values:
        base = os.path.dirname(os.path.abspath(path))
        kwargs["topology_files"] = [os.path.join(base, p) for p in values["topology_files"]]
    seeds = values.get("seeds", [1, 2, 3, 4, 5])
    if not seeds:
        fail("seed list is empty", "experiment", "seeds")
    if seed is not None:
        seeds = [seed + i for i in range(len(seeds))]
    kwargs["seeds"] = seeds

    if kwargs.get("nodes", 2) % 2:
        fail("node count must be even", "experiment", "nodes")

    experiment = Experiment(**kwargs)
    try:
        experiment.points()
    except ValueError as e:
        fail(str(e), "sweep")
    return experiment
