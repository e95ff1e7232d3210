"""
Symbol-level Monte Carlo reference for the MIMO link abstraction.

Received vector per channel use: y = sqrt(1/M) H x + n, with H i.i.d.
CN(0, 1), BPSK symbols x and complex AWGN of variance 1/gamma0, so every
receive branch sees an average SNR of gamma0.

Trials run in fixed-size batches; batch b draws from a generator keyed by
(seed, M, N, b), so results do not depend on how batches are scheduled.
"""
import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from core.phy import vblast_first_step_ber

logger = logging.getLogger(__name__)

BATCH_SIZE = 50_000
MIN_TRIALS = 10_000
CALIBRATION_GRID_DB = (20.0, 25.0, 30.0)


@dataclass
class BerSample:
    n_tx: int
    n_rx: int
    gamma0: float
    trials: int
    bit_errors: int
    ber: float
    ci95: float
    # Alamouti only: empirical mean post-combining SNR (linear)
    mean_post_snr: float = None

    @property
    def gamma0_db(self):
        return 10.0 * math.log10(self.gamma0)


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def _ci95(errors, bits):
    p = errors / bits
    return 1.96 * math.sqrt(max(p * (1.0 - p), 0.0) / bits)


def _batches(trials):
    full, rest = divmod(trials, BATCH_SIZE)
    sizes = [BATCH_SIZE] * full
    if rest:
        sizes.append(rest)
    return sizes


def _complex_normal(rng, shape, variance=1.0):
    scale = math.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _check_trials(trials):
    if trials < MIN_TRIALS:
        raise ValueError(f"trials must be >= {MIN_TRIALS}, got {trials}")


# ── V-BLAST ──

def _zf_sic_errors(h, x, y, ordered=True):
    """
    Zero-forcing V-BLAST detection with successive cancellation.

    With `ordered`, every step detects the undetected stream with the
    smallest noise enhancement (largest post-processing SNR), ties going
    to the lowest index; otherwise streams go in index order. Each
    decision is cancelled from y and its column removed. Returns the
    number of bit errors over all streams.
    """
    batch, _, m = h.shape
    h = h.copy()
    y = y.copy()
    scale = 1.0 / math.sqrt(m)
    rows = np.arange(batch)
    detected = np.zeros((batch, m), dtype=bool)
    errors = 0
    for step in range(m):
        gram = np.einsum("bnk,bnl->bkl", h.conj(), h)
        # Removed columns are zero, so a unit diagonal keeps the active block's inverse exact
        gram += np.eye(m)[None, :, :] * detected[:, None, :]
        inv = np.linalg.inv(gram)
        if ordered:
            enhancement = np.real(np.einsum("bkk->bk", inv))
            enhancement[detected] = np.inf
            k = np.argmin(enhancement, axis=1)
        else:
            k = np.full(batch, step)
        matched = np.einsum("bnk,bn->bk", h.conj(), y)
        z = np.einsum("bk,bk->b", inv[rows, k, :], matched)
        decision = np.where(np.real(z) >= 0.0, 1.0, -1.0)
        errors += int(np.count_nonzero(decision != x[rows, k]))
        y -= h[rows, :, k] * (decision * scale)[:, None]
        h[rows, :, k] = 0.0
        detected[rows, k] = True
    return errors


def simulate_vblast_ber(n_tx, n_rx, gamma0, trials, seed, ordered=True):
    """Average BER over all M streams of an M x N ZF-SIC V-BLAST link."""
    if not 1 <= n_tx <= n_rx:
        raise ValueError(f"V-BLAST requires 1 <= M <= N, got {n_tx}x{n_rx}")
    if gamma0 <= 0:
        raise ValueError("gamma0 must be positive")
    _check_trials(trials)
    noise_var = 1.0 / gamma0
    errors = 0
    for b, size in enumerate(_batches(trials)):
        rng = np.random.default_rng([seed, n_tx, n_rx, b])
        h = _complex_normal(rng, (size, n_rx, n_tx))
        x = rng.choice(np.array([-1.0, 1.0]), size=(size, n_tx))
        noise = _complex_normal(rng, (size, n_rx), noise_var)
        y = np.einsum("bnm,bm->bn", h, x) / math.sqrt(n_tx) + noise
        errors += _zf_sic_errors(h, x, y, ordered)
    bits = trials * n_tx
    return BerSample(n_tx, n_rx, gamma0, trials, errors, errors / bits, _ci95(errors, bits))


def analytical_vblast_ber(n_tx, n_rx, gamma0, a_t):
    """Closed-form approximation a_t * P_e1(gamma0), clamped at 1/2."""
    return min(0.5, a_t * vblast_first_step_ber(n_tx, n_rx, gamma0))


# ── Alamouti ──

def simulate_alamouti_ber(n_rx, gamma_total, trials, seed):
    """
    2 x N Alamouti with linear combining over two symbol periods.

    `gamma_total` is E_s/N_0 of the whole transmission; each antenna sends
    with E_s/2. `trials` counts Alamouti blocks (two BPSK symbols each).

    The mean post-combining SNR is measured at the combiner output. Running
    the combiner on the noiseless blocks as well gives the signal gain g of
    each symbol; the difference of the two outputs is the residual noise r,
    whose variance grows with g, so mean(g)^2 / mean(|r|^2) estimates the
    mean per-block SNR.
    """
    if n_rx < 1:
        raise ValueError("N must be >= 1")
    if gamma_total <= 0:
        raise ValueError("gamma_total must be positive")
    _check_trials(trials)
    noise_var = 1.0 / gamma_total
    amp = 1.0 / math.sqrt(2.0)
    errors = 0
    gain_sum = 0.0
    residual_sum = 0.0
    for b, size in enumerate(_batches(trials)):
        rng = np.random.default_rng([seed, 2, n_rx, b])
        h = _complex_normal(rng, (size, n_rx, 2))
        s = rng.choice(np.array([-1.0, 1.0]), size=(size, 2))
        n1 = _complex_normal(rng, (size, n_rx), noise_var)
        n2 = _complex_normal(rng, (size, n_rx), noise_var)
        h1, h2 = h[:, :, 0], h[:, :, 1]
        clean1 = amp * (h1 * s[:, [0]] + h2 * s[:, [1]])
        clean2 = amp * (-h1 * np.conj(s[:, [1]]) + h2 * np.conj(s[:, [0]]))
        est = _alamouti_combine(h1, h2, clean1 + n1, clean2 + n2)
        signal = _alamouti_combine(h1, h2, clean1, clean2)
        decision = np.where(np.real(est) >= 0.0, 1.0, -1.0)
        errors += int(np.count_nonzero(decision != s))
        gain_sum += float(np.sum(np.real(signal * s)))
        residual_sum += float(np.sum(np.abs(est - signal) ** 2))
    bits = 2 * trials
    mean_gain = gain_sum / bits
    return BerSample(2, n_rx, gamma_total, trials, errors, errors / bits, _ci95(errors, bits),
                     mean_post_snr=mean_gain ** 2 / (residual_sum / bits))


def _alamouti_combine(h1, h2, y1, y2):
    """Linear combiner outputs for the two symbols of each block, shape (batch, 2)."""
    s1 = np.sum(np.conj(h1) * y1 + h2 * np.conj(y2), axis=1)
    s2 = np.sum(np.conj(h2) * y1 - h1 * np.conj(y2), axis=1)
    return np.column_stack([s1, s2])


# ── a_t calibration ──

@dataclass
class Calibration:
    n_tx: int
    n_rx: int
    a_t: float
    seed: int
    ratios: dict = field(default_factory=dict)
    trials: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def spread(self):
        """Relative spread (max - min) / median of the per-SNR ratios."""
        vals = list(self.ratios.values())
        if len(vals) < 2:
            return 0.0
        return (max(vals) - min(vals)) / float(np.median(vals))


def calibrate(n_tx, n_rx, seed, grid_db=CALIBRATION_GRID_DB, trials=10_000_000, min_errors=100,
              max_trials=None, grid_step_db=5.0, ordered=True):
    """
    Estimate a_t as the median of ber_MC / P_e1 over a high-SNR grid.

    A grid point with fewer than `min_errors` bit errors is retried with
    four times the trials up to `max_trials`; if it still falls short it is
    dropped. When no point survives, the whole grid moves down by
    `grid_step_db` (not below 0 dB). Every adjustment lands in `notes`.

    Both BER and P_e1 are taken at the branch SNR gamma0, so the shipped
    coefficients of the ordered detector fall below 1 for M = N; with
    `ordered=False` the first step carries the full per-stream penalty and
    a_t >= 1.
    """
    if not 1 <= n_tx <= n_rx:
        raise ValueError(f"V-BLAST requires 1 <= M <= N, got {n_tx}x{n_rx}")
    max_trials = max_trials or trials * 16
    grid = sorted(grid_db)
    result = Calibration(n_tx, n_rx, float("nan"), seed)
    while True:
        for g_db in grid:
            n = trials
            gamma0 = db_to_linear(g_db)
            sample = simulate_vblast_ber(n_tx, n_rx, gamma0, n, seed, ordered)
            while sample.bit_errors < min_errors and n * 4 <= max_trials:
                n *= 4
                logger.info("a_t %dx%d at %.1f dB: %d errors, raising trials to %d",
                            n_tx, n_rx, g_db, sample.bit_errors, n)
                result.notes.append(f"{g_db:g} dB: trials raised to {n}")
                sample = simulate_vblast_ber(n_tx, n_rx, gamma0, n, seed, ordered)
            if sample.bit_errors < min_errors:
                result.notes.append(f"{g_db:g} dB: dropped ({sample.bit_errors} errors)")
                continue
            result.ratios[g_db] = sample.ber / vblast_first_step_ber(n_tx, n_rx, gamma0)
            result.trials[g_db] = n
        if result.ratios or grid[0] <= 0.0:
            break
        grid = [max(g - grid_step_db, 0.0) for g in grid]
        logger.info("a_t %dx%d: no usable grid point, lowering grid to %s dB", n_tx, n_rx, grid)
        result.notes.append(f"grid lowered to {', '.join(f'{g:g}' for g in grid)} dB")
    if not result.ratios:
        raise RuntimeError(f"no error events for {n_tx}x{n_rx} anywhere on the grid")
    result.a_t = float(np.median(list(result.ratios.values())))
    return result


def calibrate_at(n_tx, n_rx, seed, **kwargs):
    return calibrate(n_tx, n_rx, seed, **kwargs).a_t


# ── BER curves ──

def ber_curve(n_tx, n_rx, gammas_db, trials, seed):
    return [simulate_vblast_ber(n_tx, n_rx, db_to_linear(g), trials, seed) for g in gammas_db]


def write_curve_csv(path, samples):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["M", "N", "gamma0_db", "ber", "ci95"])
        for s in samples:
            writer.writerow([s.n_tx, s.n_rx, repr(round(s.gamma0_db, 6)), repr(s.ber), repr(s.ci95)])
    return path
