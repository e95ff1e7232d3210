import csv
import math
import os
import tempfile
import unittest

import numpy.testing as npt

from core import mc_oracle


def rayleigh_bpsk(gamma):
    return 0.5 * (1.0 - math.sqrt(gamma / (1.0 + gamma)))


class VblastOracleTestCase(unittest.TestCase):
    def test_single_stream_matches_rayleigh_bpsk(self):
        s = mc_oracle.simulate_vblast_ber(1, 1, 1.0, 100_000, seed=1)
        self.assertEqual(s.trials * s.n_tx, 100_000)
        self.assertAlmostEqual(s.ber, rayleigh_bpsk(1.0), delta=2.0 * s.ci95)

    def test_same_seed_same_result(self):
        a = mc_oracle.simulate_vblast_ber(2, 3, 3.0, 20_000, seed=4)
        b = mc_oracle.simulate_vblast_ber(2, 3, 3.0, 20_000, seed=4)
        self.assertEqual(a.bit_errors, b.bit_errors)

    def test_ber_falls_with_snr(self):
        low = mc_oracle.simulate_vblast_ber(2, 3, mc_oracle.db_to_linear(5.0), 20_000, seed=2)
        high = mc_oracle.simulate_vblast_ber(2, 3, mc_oracle.db_to_linear(15.0), 20_000, seed=2)
        self.assertLess(high.ber, low.ber)

    def test_more_receive_antennas_help(self):
        square = mc_oracle.simulate_vblast_ber(2, 2, mc_oracle.db_to_linear(10.0), 20_000, seed=3)
        tall = mc_oracle.simulate_vblast_ber(2, 4, mc_oracle.db_to_linear(10.0), 20_000, seed=3)
        self.assertLess(tall.ber, square.ber)

    def test_interval_shrinks_with_trials(self):
        short = mc_oracle.simulate_vblast_ber(1, 1, 1.0, 10_000, seed=5)
        long = mc_oracle.simulate_vblast_ber(1, 1, 1.0, 40_000, seed=5)
        npt.assert_allclose(long.ci95 / short.ci95, 0.5, atol=0.05)

    def test_argument_checks(self):
        with self.assertRaises(ValueError):
            mc_oracle.simulate_vblast_ber(3, 2, 1.0, 10_000, seed=1)
        with self.assertRaises(ValueError):
            mc_oracle.simulate_vblast_ber(1, 1, 1.0, 9_999, seed=1)
        with self.assertRaises(ValueError):
            mc_oracle.simulate_vblast_ber(1, 1, 0.0, 10_000, seed=1)

    def test_analytical_is_clamped(self):
        self.assertEqual(mc_oracle.analytical_vblast_ber(2, 2, 0.1, a_t=2.0), 0.5)
        npt.assert_allclose(mc_oracle.analytical_vblast_ber(1, 1, 100.0, a_t=1.0), 0.0025)


class AlamoutiOracleTestCase(unittest.TestCase):
    def test_post_combining_snr(self):
        # E||H||_F^2 = 2N, each antenna at E_s/2
        s = mc_oracle.simulate_alamouti_ber(2, 10.0, 20_000, seed=1)
        npt.assert_allclose(s.mean_post_snr, 20.0, rtol=0.03)
        s = mc_oracle.simulate_alamouti_ber(3, 4.0, 20_000, seed=2)
        npt.assert_allclose(s.mean_post_snr, 12.0, rtol=0.03)

    def test_coherent_curve_below_dbpsk_model(self):
        for n_rx in (1, 2):
            for g_db in (0.0, 10.0, 20.0):
                gamma = mc_oracle.db_to_linear(g_db)
                s = mc_oracle.simulate_alamouti_ber(n_rx, gamma, 200_000, seed=3)
                # DBPSK curve averaged over the post-combining SNR (Frobenius norm ~ Gamma(2N))
                model = 0.5 * (1.0 + gamma / 2.0) ** (-2 * n_rx)
                self.assertLess(s.ber, model, (n_rx, g_db))

    def test_two_branch_diversity(self):
        gamma = 10.0
        mu = math.sqrt((gamma / 2.0) / (1.0 + gamma / 2.0))
        expected = ((1.0 - mu) / 2.0) ** 2 * (2.0 + mu)
        s = mc_oracle.simulate_alamouti_ber(1, gamma, 50_000, seed=2)
        self.assertAlmostEqual(s.ber, expected, delta=2.0 * s.ci95)


class CalibrateTestCase(unittest.TestCase):
    def test_single_stream_coefficient_near_one(self):
        result = mc_oracle.calibrate(1, 1, seed=1, trials=10_000, min_errors=10)
        self.assertEqual(sorted(result.ratios), [20.0, 25.0, 30.0])
        self.assertAlmostEqual(result.a_t, 1.0, delta=0.4)
        self.assertAlmostEqual(mc_oracle.calibrate_at(1, 1, seed=1, trials=10_000, min_errors=10),
                               result.a_t)

    def test_ordering_gain_on_square_configs(self):
        # At the branch SNR the ordered detector beats the first-step model;
        # detecting in index order pays the full per-stream penalty
        ordered = mc_oracle.calibrate_at(2, 2, seed=4, grid_db=(20.0,), trials=100_000)
        in_order = mc_oracle.calibrate_at(2, 2, seed=4, grid_db=(20.0,), trials=100_000, ordered=False)
        self.assertLess(ordered, 1.0)
        self.assertGreaterEqual(in_order, 1.0)
        self.assertGreater(in_order, ordered)

    def test_grid_moves_down_when_errors_are_scarce(self):
        result = mc_oracle.calibrate(1, 1, seed=1, trials=10_000, min_errors=50, max_trials=10_000)
        self.assertIn(15.0, result.ratios)
        self.assertTrue(any("grid lowered" in note for note in result.notes))
        self.assertTrue(any("dropped" in note for note in result.notes))


class CurveTestCase(unittest.TestCase):
    def test_curve_csv(self):
        samples = mc_oracle.ber_curve(1, 2, [0.0, 10.0], 10_000, seed=1)
        self.assertEqual([round(s.gamma0_db, 6) for s in samples], [0.0, 10.0])
        with tempfile.TemporaryDirectory() as tmp:
            path = mc_oracle.write_curve_csv(os.path.join(tmp, "curves.csv"), samples)
            with open(path, newline="") as f:
                rows = list(csv.reader(f))
        self.assertEqual(rows[0], ["M", "N", "gamma0_db", "ber", "ci95"])
        self.assertEqual(len(rows), 3)


if __name__ == "__main__":
    unittest.main()
