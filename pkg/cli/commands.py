"""Command-line entry point: run experiments, generate topologies, calibrate a_t."""
import argparse
import csv
import logging
import os
import sys

import numpy as np

from cli.config_file import ConfigError, load_experiment
from cli.workers import CalibrationWorker, SweepWorker
from core import mc_oracle
from core import topology as topo
from core.calibration import DEFAULT_TABLE_PATH, CalibrationTable
from core.experiments import CLASS_TARGET_DEGREE, write_overview_csv

logger = logging.getLogger(__name__)

OUTPUT_ENV = "MIMOSIM_OUTPUT_DIR"

DEFAULT_CALIBRATION_CONFIGS = ["1x1", "1x2", "1x3", "1x4", "1x5", "2x2", "2x3", "2x4", "2x5",
                               "3x3", "3x4", "3x5", "4x4", "4x5", "5x5"]
CURVE_GRID_DB = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]


def default_output_root():
    return os.environ.get(OUTPUT_ENV) or os.path.join(os.getcwd(), "results")


def _progress(label):
    def report(current, total, name):
        if current < total:
            logger.info("[%d/%d] %s %s", current + 1, total, label, name)
    return report


def _parse_configs(text):
    configs = []
    for item in text.split(","):
        item = item.strip().lower()
        if not item:
            continue
        try:
            m, n = (int(v) for v in item.split("x"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected MxN, got {item!r}") from None
        if not 1 <= m <= n:
            raise argparse.ArgumentTypeError(f"V-BLAST needs 1 <= M <= N, got {item}")
        configs.append((m, n))
    return configs


# ── run ──

def cmd_run(args):
    try:
        experiment = load_experiment(args.config, seed=args.seed)
    except ConfigError as e:
        logger.error("%s", e)
        return 2
    calibration = CalibrationTable.load(args.calibration) if args.calibration else None
    out_dir = args.out_dir or os.path.join(default_output_root(), experiment.name)
    logger.info("experiment %s (%s): results in %s", experiment.name, experiment.preset, out_dir)

    worker = SweepWorker(experiment, out_dir, jobs=args.jobs, calibration=calibration)
    completed = worker.run(progress_callback=_progress("point"))
    if completed:
        write_overview_csv(os.path.join(out_dir, "overview.csv"), out_dir, completed)
    for failure in worker.failures:
        logger.error("point %s failed: %s", failure["point"], failure["error"])
    logger.info("%d points complete (%d skipped), %d failed",
                len(completed), len(worker.runner.skipped), len(worker.failures))
    return 1 if worker.failures else 0


# ── gen-topologies ──

def cmd_gen_topologies(args):
    out_dir = args.out_dir or os.path.join(default_output_root(), "topologies")
    os.makedirs(out_dir, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    degree_rows = []
    for cls in topo.ContentionClass:
        target = min(CLASS_TARGET_DEGREE[cls], args.nodes - 1)
        for k in range(args.per_class):
            try:
                t = topo.generate(args.nodes, args.terrain, args.terrain, target_sense_degree=target,
                                  seed=seed + 1000 * list(topo.ContentionClass).index(cls) + k)
            except topo.TopologyInfeasibleError as e:
                logger.error("%s topology %d: %s", cls.value, k + 1, e)
                return 1
            name = f"{cls.value.lower()}_{k + 1}"
            path = os.path.join(out_dir, f"{name}.topo")
            topo.save(t, path)
            with open(os.path.join(out_dir, f"{name}_links.csv"), "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["node_a", "node_b", "kind"])
                for a, b in t.pairs:
                    writer.writerow([a, b, "pair"])
                for a, b in topo.sensing_links(t, args.sense_range):
                    writer.writerow([a, b, "sense"])
            counts, mean = topo.sensing_degree(t, args.sense_range)
            degree_rows.append([name, cls.value, t.contention_class.value, repr(mean),
                                int(np.min(counts)) if counts else 0, int(np.max(counts)) if counts else 0])
            logger.info("%s: mean sensing degree %.2f (%s)", path, mean, t.contention_class.value)
    with open(os.path.join(out_dir, "degrees.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["topology", "requested_class", "measured_class", "mean_degree", "min_degree",
                         "max_degree"])
        writer.writerows(degree_rows)
    return 0


# ── calibrate ──

def cmd_calibrate(args):
    seed = args.seed if args.seed is not None else 1
    output = args.output or str(DEFAULT_TABLE_PATH)
    worker = CalibrationWorker(args.configs, seed, args.trials, jobs=args.jobs)
    results = worker.run(progress_callback=_progress("calibrate"))

    table = CalibrationTable(header=[
        "V-BLAST a_t coefficients: M N a_t",
        f"generated by `main.py calibrate --seed {seed} --trials {args.trials}`",
    ])
    if os.path.exists(output):
        table.entries.update(CalibrationTable.load(output).entries)
    for r in results:
        table.update(r.n_tx, r.n_rx, r.a_t)
        detail = ", ".join(f"{g:g} dB: {v:.4g}" for g, v in sorted(r.ratios.items()))
        logger.info("a_t(%d, %d) = %.6g  [%s]", r.n_tx, r.n_rx, r.a_t, detail)
        for note in r.notes:
            table.header.append(f"{r.n_tx}x{r.n_rx}: {note}")
    table.save(output)
    logger.info("wrote %s", output)

    if args.curves:
        samples = []
        for m, n in args.configs:
            samples.extend(mc_oracle.ber_curve(m, n, CURVE_GRID_DB, args.curve_trials, seed))
        mc_oracle.write_curve_csv(args.curves, samples)
        logger.info("wrote %s", args.curves)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="mimosim", description="MIMO ad hoc CSMA/CA network simulator")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment file")
    p_run.add_argument("config", help="INI experiment file")
    p_run.add_argument("--seed", type=int, help="first seed; replaces the file's seed list start")
    p_run.add_argument("--out-dir", help=f"result directory (default ${OUTPUT_ENV}/<name> or ./results/<name>)")
    p_run.add_argument("--jobs", type=int, default=1, help="worker processes")
    p_run.add_argument("--calibration", help="a_t table (default: shipped table)")
    p_run.set_defaults(func=cmd_run)

    p_gen = sub.add_parser("gen-topologies", help="generate LOW/MEDIUM/HIGH topology files")
    p_gen.add_argument("--per-class", type=int, default=3)
    p_gen.add_argument("--nodes", type=int, default=100)
    p_gen.add_argument("--terrain", type=float, default=1600.0, help="square terrain side in meters")
    p_gen.add_argument("--sense-range", type=float, default=topo.SISO_SENSE_RANGE)
    p_gen.add_argument("--seed", type=int)
    p_gen.add_argument("--out-dir")
    p_gen.set_defaults(func=cmd_gen_topologies)

    p_cal = sub.add_parser("calibrate", help="Monte Carlo calibration of V-BLAST a_t")
    p_cal.add_argument("--configs", type=_parse_configs, default=_parse_configs(",".join(DEFAULT_CALIBRATION_CONFIGS)),
                       help="comma-separated MxN list")
    p_cal.add_argument("--trials", type=int, default=10_000_000)
    p_cal.add_argument("--seed", type=int)
    p_cal.add_argument("--output", help=f"table path (default {DEFAULT_TABLE_PATH})")
    p_cal.add_argument("--curves", help="also write BER curves to this CSV")
    p_cal.add_argument("--curve-trials", type=int, default=100_000)
    p_cal.add_argument("--jobs", type=int, default=1)
    p_cal.set_defaults(func=cmd_calibrate)
    return parser


def configure_logging(verbose=False, quiet=False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    if args.command == "gen-topologies" and (args.nodes < 2 or args.nodes % 2):
        parser.error("--nodes must be an even number >= 2")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
