import os
import tempfile
import unittest

from core import topology as topo
from core.topology import ContentionClass, Topology, TopologyFormatError, TopologyInfeasibleError


def line_topology():
    return Topology(500.0, 100.0, [(0, 0.0, 0.0), (1, 100.0, 0.0), (2, 300.0, 0.0), (3, 400.0, 0.0)],
                    [(0, 1), (2, 3)])


class SensingDegreeTestCase(unittest.TestCase):
    def test_counts_and_mean(self):
        counts, mean = topo.sensing_degree(line_topology())
        self.assertEqual(counts, [1, 2, 2, 1])
        self.assertAlmostEqual(mean, 1.5)

    def test_links(self):
        self.assertEqual(topo.sensing_links(line_topology()), [(0, 1), (1, 2), (2, 3)])
        self.assertEqual(topo.sensing_links(line_topology(), sense_range=50.0), [])

    def test_classify_boundaries(self):
        self.assertIs(topo.classify(5.99), ContentionClass.LOW)
        self.assertIs(topo.classify(6.0), ContentionClass.MEDIUM)
        self.assertIs(topo.classify(12.0), ContentionClass.MEDIUM)
        self.assertIs(topo.classify(12.01), ContentionClass.HIGH)


class TopologyValidationTestCase(unittest.TestCase):
    def test_rejects_long_pair(self):
        with self.assertRaises(ValueError):
            Topology(500.0, 500.0, [(0, 0.0, 0.0), (1, 151.0, 0.0)], [(0, 1)])

    def test_rejects_node_outside_terrain(self):
        with self.assertRaises(ValueError):
            Topology(100.0, 100.0, [(0, 50.0, 50.0), (1, 50.0, 120.0)], [(0, 1)])

    def test_rejects_node_in_two_pairs(self):
        with self.assertRaises(ValueError):
            Topology(500.0, 500.0, [(0, 0.0, 0.0), (1, 10.0, 0.0), (2, 20.0, 0.0)], [(0, 1), (1, 2)])

    def test_rejects_unpaired_node(self):
        with self.assertRaises(ValueError):
            Topology(500.0, 500.0, [(0, 0.0, 0.0), (1, 10.0, 0.0), (2, 20.0, 0.0)], [(0, 1)])

    def test_flows_and_peers(self):
        t = line_topology()
        self.assertEqual(t.flows(), [(0, 1), (1, 0), (2, 3), (3, 2)])
        self.assertEqual(t.peer_of(3), 2)
        self.assertIsNone(t.peer_of(9))


class GenerateTestCase(unittest.TestCase):
    def test_single_pair(self):
        t = topo.generate(2, 1600.0, 1600.0, seed=3)
        self.assertEqual(t.node_ids(), [0, 1])
        self.assertEqual(t.pairs, [(0, 1)])

    def test_pairs_within_limit(self):
        t = topo.generate(40, 1600.0, 1600.0, seed=1)
        pos = t.positions()
        for a, b in t.pairs:
            self.assertEqual(b, a + 1)
            (xa, ya), (xb, yb) = pos[a], pos[b]
            self.assertLessEqual(((xa - xb) ** 2 + (ya - yb) ** 2) ** 0.5, topo.MAX_PAIR_DISTANCE + 1e-9)

    def test_same_seed_same_topology(self):
        a = topo.generate(20, 1600.0, 1600.0, target_sense_degree=4, seed=5)
        b = topo.generate(20, 1600.0, 1600.0, target_sense_degree=4, seed=5)
        self.assertEqual(a, b)

    def test_sparse_target_is_low(self):
        t = topo.generate(40, 1600.0, 1600.0, target_sense_degree=4, seed=2)
        self.assertIs(t.contention_class, ContentionClass.LOW)

    def test_denser_target_gives_denser_layout(self):
        sparse = topo.generate(40, 1600.0, 1600.0, target_sense_degree=4, seed=2)
        dense = topo.generate(40, 1600.0, 1600.0, target_sense_degree=16, seed=2)
        self.assertGreater(topo.sensing_degree(dense)[1], topo.sensing_degree(sparse)[1])

    def test_crowded_terrain_is_best_effort(self):
        with self.assertLogs("core.topology", level="WARNING"):
            t = topo.generate(100, 200.0, 200.0, target_sense_degree=30, seed=1)
        self.assertIs(t.contention_class, ContentionClass.HIGH)
        self.assertGreaterEqual(topo.sensing_degree(t)[1], 20.0)

    def test_infeasible_target(self):
        with self.assertRaises(TopologyInfeasibleError):
            topo.generate(4, 1600.0, 1600.0, target_sense_degree=5)
        with self.assertRaises(TopologyInfeasibleError):
            topo.generate(4, 1600.0, 1600.0, target_sense_degree=0)

    def test_odd_node_count(self):
        with self.assertRaises(ValueError):
            topo.generate(5, 1600.0, 1600.0)


class PersistenceTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def write(self, text):
        path = os.path.join(self.tmp.name, "t.topo")
        with open(path, "w") as f:
            f.write(text)
        return path

    def test_round_trip(self):
        t = topo.generate(12, 1600.0, 1600.0, target_sense_degree=4, seed=8)
        path = topo.save(t, os.path.join(self.tmp.name, "sub", "low_1.topo"))
        self.assertEqual(topo.load(path), t)

    def test_coordinate_outside_terrain(self):
        path = self.write("terrain 100 100\nnode 0 10 10\nnode 1 10 130\npair 0 1\n")
        with self.assertRaises(TopologyFormatError) as ctx:
            topo.load(path)
        self.assertEqual(ctx.exception.line_no, 3)
        self.assertEqual(ctx.exception.field, "y")

    def test_node_in_two_pairs(self):
        path = self.write("terrain 100 100\nnode 0 0 0\nnode 1 10 0\nnode 2 20 0\nnode 3 30 0\n"
                          "pair 0 1\npair 1 2\n")
        with self.assertRaises(TopologyFormatError) as ctx:
            topo.load(path)
        self.assertEqual(ctx.exception.line_no, 7)
        self.assertEqual(ctx.exception.field, "source")

    def test_unparseable_number(self):
        path = self.write("terrain 100 abc\n")
        with self.assertRaises(TopologyFormatError) as ctx:
            topo.load(path)
        self.assertEqual((ctx.exception.line_no, ctx.exception.field), (1, "height"))

    def test_unknown_keyword(self):
        path = self.write("# comment\nterrain 100 100\nrouter 1 2\n")
        with self.assertRaises(TopologyFormatError) as ctx:
            topo.load(path)
        self.assertEqual(ctx.exception.line_no, 3)

    def test_missing_header(self):
        with self.assertRaises(TopologyFormatError):
            topo.load(self.write("# nothing here\n"))


if __name__ == "__main__":
    unittest.main()
