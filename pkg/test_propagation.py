"""
Unit tests for ambiguity-set propagation.

Tests cover:
- SVD pseudoinverse and the Penrose conditions
- Propagation through linear maps, exactness tracking and the scalar examples
- Translation invariance of membership
- Product lifting in enumeration and trajectory modes
- Radius rates, cost spectra and bounding balls
"""

import unittest

import numpy as np

from distributions import DiscreteDistribution, TrajectoryBatch, dirac, empirical, pushforward
from errors import CapExceededError, CostKindError, DimensionError, NumericalError, ParameterError
from oracle import lp_ot
from propagation import (
    bounding_ball,
    cost_spectrum,
    joint_radius_rate,
    lift_product,
    penrose_residuals,
    propagate_linear,
    pseudoinverse,
    radius_rate,
    translate,
)
from transport import AmbiguitySet, Exactness, TransportationCost, ot_discrepancy


class TestPseudoInverse(unittest.TestCase):
    """Test the SVD pseudoinverse."""

    def test_rank_deficient_projection(self):
        """diag(1, 0) is its own pseudoinverse."""
        A = np.array([[1.0, 0.0], [0.0, 0.0]])
        result = pseudoinverse(A)
        np.testing.assert_allclose(result.pinv, A, atol=1e-15)
        self.assertEqual(result.rank, 1)
        self.assertFalse(result.full_row_rank)

    def test_identity(self):
        """The identity is its own pseudoinverse."""
        result = pseudoinverse(np.eye(3))
        np.testing.assert_allclose(result.pinv, np.eye(3))
        self.assertTrue(result.full_row_rank)

    def test_wide_matrix(self):
        """A^+ = A'(AA')^-1 for full row rank A."""
        A = np.random.default_rng(5).standard_normal((2, 4))
        result = pseudoinverse(A)
        np.testing.assert_allclose(result.pinv, A.T @ np.linalg.inv(A @ A.T), atol=1e-12)
        self.assertTrue(result.full_row_rank)

    def test_penrose_conditions(self):
        """Random matrices of every shape satisfy the Penrose conditions."""
        rng = np.random.default_rng(6)
        for shape in [(3, 3), (2, 5), (5, 2), (4, 4)]:
            A = rng.standard_normal(shape)
            if shape == (4, 4):
                A[:, 3] = A[:, 0] + A[:, 1]
            result = pseudoinverse(A)
            self.assertTrue(result.satisfies_penrose(), msg=str(penrose_residuals(result)))

    def test_zero_matrix(self):
        """The zero matrix has the zero pseudoinverse."""
        result = pseudoinverse(np.zeros((2, 3)))
        np.testing.assert_array_equal(result.pinv, np.zeros((3, 2)))
        self.assertEqual(result.rank, 0)

    def test_non_finite(self):
        """NaN entries are a numerical error."""
        with self.assertRaises(NumericalError):
            pseudoinverse([[np.nan, 1.0]])


class TestPropagateLinear(unittest.TestCase):
    """Test propagation through linear maps."""

    def setUp(self):
        self.eps = 0.1
        self.scalar_ball = AmbiguitySet(dirac([0.0]), TransportationCost.power_norm(1.0), self.eps)

    def test_scaling_doubles_radius(self):
        """A = 2 under |.| doubles the radius once the scale is absorbed."""
        image = propagate_linear(self.scalar_ball, [[2.0]])
        self.assertEqual(image.exactness, Exactness.EXACT)
        self.assertAlmostEqual(image.radius, self.eps)
        self.assertAlmostEqual(image.absorb_scale().radius, 2.0 * self.eps)

    def test_zero_map(self):
        """A = 0 collapses the center and is an outer approximation."""
        image = propagate_linear(self.scalar_ball, [[0.0]])
        self.assertTrue(image.center.allclose(dirac([0.0])))
        self.assertEqual(image.exactness, Exactness.OUTER)
        self.assertAlmostEqual(image.cost.evaluate([5.0]), 0.0)

    def test_invertible_map_preserves_discrepancy(self):
        """Under an invertible map the discrepancies before and after agree."""
        rng = np.random.default_rng(8)
        A = np.array([[2.0, 1.0, 0.0], [0.0, 1.0, -1.0], [1.0, 0.0, 3.0]])
        P = empirical(rng.standard_normal((4, 3)))
        ball = AmbiguitySet(P, TransportationCost.squared_euclidean(), 0.5)
        image = propagate_linear(ball, A)
        self.assertEqual(image.exactness, Exactness.EXACT)
        for _ in range(5):
            Q = empirical(rng.standard_normal((3, 3)))
            before = ot_discrepancy(ball.cost, P, Q)[0]
            after = ot_discrepancy(image.cost, image.center, pushforward(A, Q))[0]
            self.assertAlmostEqual(before, after, delta=1e-6 * max(1.0, before))

    def test_wide_map_exact(self):
        """A full row rank wide map gives an exact image set."""
        ball = AmbiguitySet(dirac([0.0, 0.0, 0.0]), TransportationCost.squared_euclidean(), 0.2)
        image = propagate_linear(ball, [[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
        self.assertEqual(image.exactness, Exactness.EXACT)
        self.assertEqual(image.dim, 2)

    def test_image_members_stay_inside(self):
        """Images of members of a ball are members of the propagated ball."""
        rng = np.random.default_rng(9)
        A = np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 1.0]])
        P = empirical(rng.standard_normal((3, 2)))
        ball = AmbiguitySet(P, TransportationCost.squared_euclidean(), 0.3)
        image = propagate_linear(ball, A)
        self.assertEqual(image.exactness, Exactness.OUTER)
        for _ in range(5):
            Q = empirical(P.atoms + 0.2 * rng.standard_normal(P.atoms.shape))
            if ball.contains(Q):
                self.assertTrue(image.contains(pushforward(A, Q)))

    def test_off_range_overestimation(self):
        """diag(1, 0) admits distributions off its range."""
        ball = AmbiguitySet(dirac([0.0, 0.0]), TransportationCost.squared_euclidean(), 0.1)
        image = propagate_linear(ball, [[1.0, 0.0], [0.0, 0.0]])
        self.assertTrue(image.contains(dirac([0.0, 1.0])))
        self.assertEqual(image.exactness, Exactness.OUTER)
        self.assertTrue(any("rank 1" in note for note in image.notes))

    def test_chained_propagation(self):
        """Propagating twice composes the pseudoinverses."""
        ball = AmbiguitySet(dirac([1.0, -1.0]), TransportationCost.squared_euclidean(), 0.2)
        A = np.array([[1.0, 1.0], [0.0, 2.0]])
        B = np.array([[3.0, 0.0], [1.0, 1.0]])
        twice = propagate_linear(propagate_linear(ball, A), B)
        once = propagate_linear(ball, B @ A)
        np.testing.assert_allclose(twice.cost.matrix, once.cost.matrix, atol=1e-12)
        self.assertTrue(twice.center.allclose(once.center))

    def test_rejects_singular_cost_premap(self):
        """Balls with a singular cost pre-map cannot be propagated."""
        ball = AmbiguitySet(dirac([0.0, 0.0]), TransportationCost.composed([[1.0, 0.0], [0.0, 0.0]]), 0.1)
        with self.assertRaises(CostKindError):
            propagate_linear(ball, np.eye(2))

    def test_dimension_mismatch(self):
        """The map must act on the ball dimension."""
        with self.assertRaises(DimensionError):
            propagate_linear(self.scalar_ball, np.eye(2))

    def test_translate_membership(self):
        """Translating ball and candidate together keeps membership."""
        ball = AmbiguitySet(empirical([[0.0, 0.0], [1.0, 1.0]]), TransportationCost.squared_euclidean(), 0.3)
        Q = empirical([[0.2, 0.0], [1.0, 0.7]])
        y = np.array([5.0, -2.0])
        moved_Q = DiscreteDistribution(Q.atoms + y, Q.weights)
        self.assertEqual(ball.contains(Q), translate(ball, y).contains(moved_Q))
        self.assertAlmostEqual(ball.distance(Q), translate(ball, y).distance(moved_Q), places=12)


class TestLiftProduct(unittest.TestCase):
    """Test product lifting of per-step balls."""

    def setUp(self):
        self.ball = AmbiguitySet(empirical([[-1.0], [1.0]]), TransportationCost.squared_euclidean(), 0.3)

    def test_horizon_one(self):
        """t = 1 leaves the ball unchanged."""
        self.assertIs(lift_product(self.ball, 1), self.ball)

    def test_enumerated_product(self):
        """The radius scales with t and the center is the product."""
        lifted = lift_product(self.ball, 2)
        self.assertAlmostEqual(lifted.radius, 0.6)
        self.assertEqual(lifted.center.size, 4)
        self.assertEqual(lifted.dim, 2)
        self.assertEqual(lifted.exactness, Exactness.EXACT)

    def test_product_membership(self):
        """Products of members lie in the lifted ball."""
        Q = empirical([[-0.8], [1.3]])
        self.assertTrue(self.ball.contains(Q))
        self.assertLessEqual(
            lp_ot(TransportationCost.squared_euclidean(), self.ball.center, Q) * 2.0,
            lift_product(self.ball, 2).radius + 1e-9,
        )

    def test_trajectory_mode(self):
        """Trajectory centers are flagged as outer approximations."""
        batch = TrajectoryBatch.from_steps(np.random.default_rng(1).standard_normal((3, 4, 1)))
        lifted = lift_product(self.ball, 4, batch)
        self.assertEqual(lifted.exactness, Exactness.OUTER)
        self.assertIn("trajectory-center", lifted.notes)
        self.assertEqual(lifted.center.size, 3)
        self.assertAlmostEqual(lifted.radius, 1.2)

    def test_trajectory_mode_shape_check(self):
        """Trajectory batches must match the horizon."""
        batch = TrajectoryBatch.from_steps(np.zeros((2, 3, 1)))
        with self.assertRaises(DimensionError):
            lift_product(self.ball, 4, batch)

    def test_cap(self):
        """Enumeration beyond the cap raises."""
        with self.assertRaises(CapExceededError):
            lift_product(self.ball, 5, cap=16)

    def test_needs_plain_cost(self):
        """Composed costs cannot be lifted."""
        ball = AmbiguitySet(dirac([0.0]), TransportationCost.composed([[2.0]]), 0.1)
        with self.assertRaises(CostKindError):
            lift_product(ball, 2)


class TestRadiusRates(unittest.TestCase):
    """Test radius scaling rates."""

    def test_low_dimension(self):
        """r <= 2 gives n^(-1/2)."""
        self.assertAlmostEqual(radius_rate(100, 2), 0.1)
        self.assertAlmostEqual(radius_rate(100, 1), 0.1)

    def test_high_dimension(self):
        """r > 2 gives n^(-1/r)."""
        self.assertAlmostEqual(radius_rate(16, 4), 0.5)
        self.assertAlmostEqual(radius_rate(16, 4, C=3.0), 1.5)

    def test_per_step_beats_joint(self):
        """t copies of a per-step radius shrink faster than a joint radius."""
        n, r, t = 10 ** 6, 1, 10
        self.assertLess(t * radius_rate(n, r), joint_radius_rate(n, r, t))

    def test_invalid(self):
        """Nonpositive sample counts are rejected."""
        with self.assertRaises(ParameterError):
            radius_rate(0, 2)
        with self.assertRaises(ParameterError):
            radius_rate(10, 2, C=0.0)


class TestSpectrumAndBounds(unittest.TestCase):
    """Test cost spectra and bounding balls."""

    def test_spectrum_of_diagonal(self):
        """Singular values descend with signed unit vectors."""
        spectrum = cost_spectrum(np.diag([1.0, 3.0]))
        self.assertAlmostEqual(spectrum[0][0], 3.0)
        self.assertAlmostEqual(spectrum[1][0], 1.0)
        np.testing.assert_allclose(spectrum[0][1], [0.0, 1.0], atol=1e-15)

    def test_spectrum_reconstructs(self):
        """sum_k sigma_k^2 u_k u_k' = M M'."""
        M = np.random.default_rng(2).standard_normal((3, 4))
        total = sum(sigma ** 2 * np.outer(u, u) for sigma, u in cost_spectrum(M))
        np.testing.assert_allclose(total, M @ M.T, atol=1e-10)

    def test_bounding_ball_scaling(self):
        """Cost ||(2I)^+ z||^2 is bounded by the plain ball of radius 4 eps."""
        ball = AmbiguitySet(dirac([0.0, 0.0]), TransportationCost.composed(np.linalg.pinv(2.0 * np.eye(2))), 0.1)
        bound = bounding_ball(ball)
        self.assertAlmostEqual(bound.radius, 0.4)
        self.assertEqual(bound.exactness, Exactness.OUTER)
        self.assertIsNone(bound.cost.matrix)

    def test_bounding_ball_contains(self):
        """Members of the composed ball are members of the bounding ball."""
        rng = np.random.default_rng(4)
        D = np.array([[1.0, 0.5, 0.0], [0.2, 1.0, -1.0]])
        ball = AmbiguitySet(empirical(rng.standard_normal((3, 2))), TransportationCost.composed(np.linalg.pinv(D)), 0.5)
        bound = bounding_ball(ball)
        for _ in range(10):
            Q = empirical(ball.center.atoms + 0.5 * rng.standard_normal((3, 2)))
            if ball.contains(Q):
                self.assertTrue(bound.contains(Q))

    def test_bounding_ball_plain(self):
        """A plain ball bounds itself."""
        ball = AmbiguitySet(dirac([0.0]), TransportationCost.squared_euclidean(), 0.1)
        self.assertIs(bounding_ball(ball), ball)

    def test_bounding_ball_power_norm(self):
        """Power-norm costs are rejected."""
        ball = AmbiguitySet(dirac([0.0]), TransportationCost.power_norm(1.0), 0.1)
        with self.assertRaises(CostKindError):
            bounding_ball(ball)


if __name__ == "__main__":
    unittest.main()
