"""
Unit tests for the discrete distribution primitives.

Tests cover:
- Construction and validation of Dirac, empirical and general distributions
- Pushforward, translation and atom merging
- t-fold product distributions and the enumeration cap
- Latest-first trajectory stacking
- CSV sample files
"""

import os
import tempfile
import unittest

import numpy as np

from distributions import (
    DiscreteDistribution,
    TrajectoryBatch,
    convolve_delta,
    dirac,
    empirical,
    merge_atoms,
    product_power,
    pushforward,
    read_samples_csv,
    write_samples_csv,
)
from errors import CapExceededError, ConfigError, DimensionError


class TestConstruction(unittest.TestCase):
    """Test distribution construction and validation."""

    def test_dirac(self):
        """Dirac has one atom of weight one."""
        d = dirac([1.0, -2.0])
        self.assertTrue(d.is_dirac())
        self.assertEqual(d.dim, 2)
        np.testing.assert_array_equal(d.atoms, [[1.0, -2.0]])
        np.testing.assert_array_equal(d.weights, [1.0])

    def test_dirac_dimension_zero(self):
        """Zero-dimensional points are rejected."""
        with self.assertRaises(DimensionError):
            dirac([])

    def test_empirical_uniform_weights(self):
        """Empirical distributions weight every sample 1/n in order."""
        d = empirical([[0.0], [1.0], [3.0], [7.0]])
        self.assertEqual(d.size, 4)
        np.testing.assert_allclose(d.weights, 0.25)
        np.testing.assert_array_equal(d.atoms.ravel(), [0.0, 1.0, 3.0, 7.0])
        self.assertAlmostEqual(d.mean()[0], 2.75)

    def test_single_sample_is_dirac(self):
        """An empirical distribution of one sample is a Dirac."""
        self.assertTrue(empirical([[4.0, 5.0]]).allclose(dirac([4.0, 5.0])))

    def test_empirical_rejects_bad_input(self):
        """Empty and ragged samples are rejected."""
        with self.assertRaises(DimensionError):
            empirical([])
        with self.assertRaises(DimensionError):
            empirical([[1.0, 2.0], [3.0]])

    def test_weight_validation(self):
        """Negative or non-normalized weights are rejected."""
        with self.assertRaises(DimensionError):
            DiscreteDistribution([[0.0], [1.0]], [1.5, -0.5])
        with self.assertRaises(DimensionError):
            DiscreteDistribution([[0.0], [1.0]], [0.5, 0.4])
        with self.assertRaises(DimensionError):
            DiscreteDistribution([[0.0], [1.0]], [1.0])

    def test_non_finite_atoms(self):
        """Infinite atoms are rejected."""
        with self.assertRaises(DimensionError):
            DiscreteDistribution([[np.inf]], [1.0])

    def test_immutable(self):
        """Stored arrays are read-only."""
        d = empirical([[0.0], [1.0]])
        with self.assertRaises(ValueError):
            d.atoms[0, 0] = 5.0

    def test_expectation(self):
        """Expectation weights per-atom values."""
        d = DiscreteDistribution([[0.0], [1.0]], [0.25, 0.75])
        self.assertAlmostEqual(d.expectation([4.0, 8.0]), 7.0)


class TestTransformations(unittest.TestCase):
    """Test pushforward, translation and merging."""

    def setUp(self):
        self.P = empirical([[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0]])

    def test_pushforward_identity(self):
        """The identity map leaves the distribution unchanged."""
        self.assertTrue(pushforward(np.eye(2), self.P).allclose(self.P))

    def test_pushforward_zero_map_merges(self):
        """A = 0 collapses every atom onto the origin."""
        image = pushforward(np.zeros((2, 2)), self.P)
        self.assertTrue(image.allclose(dirac([0.0, 0.0])))

    def test_pushforward_composes(self):
        """Pushing through A then B equals pushing through BA."""
        A = np.array([[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]])
        B = np.array([[1.0, 0.0, -1.0]])
        self.assertTrue(pushforward(B, pushforward(A, self.P)).allclose(pushforward(B @ A, self.P)))

    def test_pushforward_dimension_mismatch(self):
        """Maps must match the distribution dimension."""
        with self.assertRaises(DimensionError):
            pushforward(np.eye(3), self.P)

    def test_convolve_delta_round_trip(self):
        """Shifting by y then -y restores the distribution."""
        y = np.array([0.3, -4.0])
        shifted = convolve_delta(y, self.P)
        np.testing.assert_allclose(shifted.atoms, self.P.atoms + y)
        self.assertTrue(convolve_delta(-y, shifted).allclose(self.P))

    def test_merge_keeps_first_position(self):
        """Merged clusters keep the first occurrence and sum weights."""
        merged = merge_atoms(np.array([[1.0], [2.0], [1.0]]), np.array([0.2, 0.3, 0.5]))
        np.testing.assert_array_equal(merged.atoms.ravel(), [1.0, 2.0])
        np.testing.assert_allclose(merged.weights, [0.7, 0.3])


class TestProductPower(unittest.TestCase):
    """Test t-fold product distributions."""

    def test_stacking_order(self):
        """The first factor varies slowest."""
        P = DiscreteDistribution([[1.0], [2.0]], [0.25, 0.75])
        product = product_power(P, 2)
        np.testing.assert_array_equal(product.atoms, [[1.0, 1.0], [1.0, 2.0], [2.0, 1.0], [2.0, 2.0]])
        np.testing.assert_allclose(product.weights, [0.0625, 0.1875, 0.1875, 0.5625])

    def test_dirac_power(self):
        """The product of Diracs is a Dirac at the stacked point."""
        product = product_power(dirac([1.0, 2.0]), 3)
        self.assertTrue(product.allclose(dirac([1.0, 2.0, 1.0, 2.0, 1.0, 2.0])))

    def test_power_one(self):
        """t = 1 returns the distribution itself."""
        P = empirical([[0.0], [5.0]])
        self.assertTrue(product_power(P, 1).allclose(P))

    def test_cap(self):
        """N^t above the cap raises."""
        P = empirical([[float(i)] for i in range(5)])
        with self.assertRaises(CapExceededError):
            product_power(P, 10)
        with self.assertRaises(CapExceededError):
            product_power(P, 3, cap=100)
        self.assertEqual(product_power(P, 3, cap=125).size, 125)

    def test_invalid_power(self):
        """t must be positive."""
        with self.assertRaises(DimensionError):
            product_power(dirac([0.0]), 0)


class TestTrajectoryBatch(unittest.TestCase):
    """Test latest-first trajectory stacking."""

    def setUp(self):
        # two trajectories, t = 3, r = 1: w_0, w_1, w_2
        self.steps = np.array([[[1.0], [2.0], [3.0]], [[4.0], [5.0], [6.0]]])
        self.batch = TrajectoryBatch.from_steps(self.steps)

    def test_latest_first(self):
        """Rows are [w_2; w_1; w_0]."""
        np.testing.assert_array_equal(self.batch.trajectories, [[3.0, 2.0, 1.0], [6.0, 5.0, 4.0]])

    def test_step(self):
        """step(k) returns the samples of w_k."""
        np.testing.assert_array_equal(self.batch.step(0).ravel(), [1.0, 4.0])
        np.testing.assert_array_equal(self.batch.step(2).ravel(), [3.0, 6.0])
        with self.assertRaises(DimensionError):
            self.batch.step(3)

    def test_pooled(self):
        """Pooling keeps every per-step sample."""
        self.assertEqual(self.batch.pooled().shape, (6, 1))
        self.assertEqual(sorted(self.batch.pooled().ravel()), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])

    def test_to_distribution(self):
        """The trajectory distribution is uniform over rows."""
        d = self.batch.to_distribution()
        self.assertEqual(d.dim, 3)
        np.testing.assert_allclose(d.weights, 0.5)

    def test_wrong_length(self):
        """Row length must equal t*r."""
        with self.assertRaises(DimensionError):
            TrajectoryBatch(np.zeros((2, 5)), 3, 2)


class TestSampleFiles(unittest.TestCase):
    """Test reading and writing CSV sample files."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "samples.csv")

    def tearDown(self):
        self.tmp.cleanup()

    def test_exact_round_trip(self):
        """17 significant digits reproduce the floats bit for bit."""
        rows = np.random.default_rng(3).standard_normal((4, 3)) * 1e3
        write_samples_csv(self.path, rows)
        np.testing.assert_array_equal(read_samples_csv(self.path), rows)

    def test_header(self):
        """A header line is skipped when requested."""
        with open(self.path, "w", encoding="utf-8") as f:
            f.write("w0,w1\n1.5,2.5\n")
        np.testing.assert_array_equal(read_samples_csv(self.path, header=True), [[1.5, 2.5]])

    def test_missing_file(self):
        """Missing files are a configuration error."""
        with self.assertRaises(ConfigError):
            read_samples_csv(os.path.join(self.tmp.name, "absent.csv"))

    def test_unparseable_file(self):
        """Non-numeric content is a configuration error."""
        with open(self.path, "w", encoding="utf-8") as f:
            f.write("a,b\nc,d\n")
        with self.assertRaises(ConfigError):
            read_samples_csv(self.path)


if __name__ == "__main__":
    unittest.main()
