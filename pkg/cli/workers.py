"""Worker pools running sweep points and calibrations off the main process."""
import logging
from concurrent.futures import ProcessPoolExecutor

from core import mc_oracle
from core.experiments import SweepRunner

logger = logging.getLogger(__name__)


class SweepWorker:
    """Run an experiment's SweepRunner on `jobs` worker processes."""

    def __init__(self, experiment, out_dir, jobs=1, calibration=None):
        self.experiment = experiment
        self.out_dir = out_dir
        self.jobs = max(1, int(jobs))
        self.calibration = calibration
        self.runner = None

    def run(self, progress_callback=None):
        if self.jobs == 1:
            self.runner = SweepRunner(self.experiment, self.out_dir, calibration=self.calibration)
            return self.runner.run(progress_callback)
        with ProcessPoolExecutor(max_workers=self.jobs) as pool:
            self.runner = SweepRunner(self.experiment, self.out_dir, executor=pool,
                                      calibration=self.calibration)
            return self.runner.run(progress_callback)

    @property
    def failures(self):
        return self.runner.failures if self.runner is not None else []


def _calibrate_task(args):
    n_tx, n_rx, seed, trials = args
    return mc_oracle.calibrate(n_tx, n_rx, seed, trials=trials)


class CalibrationWorker:
    """Calibrate a_t for several (M, N) configurations in parallel."""

    def __init__(self, configs, seed, trials, jobs=1):
        self.configs = list(configs)
        self.seed = seed
        self.trials = trials
        self.jobs = max(1, int(jobs))

    def run(self, progress_callback=None):
        tasks = [(m, n, self.seed, self.trials) for m, n in self.configs]
        total = len(tasks)
        results = []
        if self.jobs == 1:
            for idx, task in enumerate(tasks):
                if progress_callback:
                    progress_callback(idx, total, f"{task[0]}x{task[1]}")
                results.append(_calibrate_task(task))
        else:
            with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                for idx, result in enumerate(pool.map(_calibrate_task, tasks)):
                    if progress_callback:
                        progress_callback(idx, total, f"{result.n_tx}x{result.n_rx}")
                    results.append(result)
        if progress_callback:
            progress_callback(total, total, "")
        return results
