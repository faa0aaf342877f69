"""
Unit tests for the closed-loop LTI model.

Tests cover:
- System construction from JSON descriptions
- Lifted operators against direct simulation
- State ambiguity sets in trajectory and enumeration modes
- LQR gains
"""

import unittest

import numpy as np

from config import EXPERIMENT_DEFAULTS
from distributions import TrajectoryBatch, empirical
from errors import ConfigError, ConvergenceError, DimensionError
from lti import LtiSystem, closed_loop, lift, lqr_gain, simulate, spectral_radius, state_ambiguity
from transport import AmbiguitySet, Exactness, TransportationCost


def planar_system(**extra) -> LtiSystem:
    data = {"A": EXPERIMENT_DEFAULTS["A"], "B": EXPERIMENT_DEFAULTS["B"], "D": EXPERIMENT_DEFAULTS["D"]}
    data.update(extra)
    return LtiSystem.from_dict(data)


class TestLtiSystem(unittest.TestCase):
    """Test system construction."""

    def test_default_gain_is_lqr(self):
        """Without K the identity-weighted LQR gain is used."""
        system = planar_system()
        K = lqr_gain(EXPERIMENT_DEFAULTS["A"], EXPERIMENT_DEFAULTS["B"], np.eye(2), np.eye(2))
        np.testing.assert_allclose(system.K, K)
        self.assertLess(spectral_radius(closed_loop(system)), 1.0)
        np.testing.assert_array_equal(system.x0, [0.0, 0.0])

    def test_explicit_gain(self):
        """A matrix K is taken as given."""
        system = planar_system(K=[[0.0, 0.0], [0.0, 0.0]], x0=[1.0, 2.0])
        np.testing.assert_array_equal(system.K, np.zeros((2, 2)))
        np.testing.assert_array_equal(system.x0, [1.0, 2.0])

    def test_round_trip(self):
        """to_dict output rebuilds the same system."""
        system = planar_system()
        again = LtiSystem.from_dict(system.to_dict())
        np.testing.assert_array_equal(again.K, system.K)
        np.testing.assert_array_equal(again.A, system.A)

    def test_missing_keys(self):
        """A, B and D are required."""
        with self.assertRaises(ConfigError):
            LtiSystem.from_dict({"A": [[1.0]], "B": [[1.0]]})

    def test_bad_gain_spec(self):
        """Dict gains must name the LQR weights."""
        with self.assertRaises(ConfigError):
            planar_system(K={"pole_placement": [0.1, 0.2]})

    def test_dimension_checks(self):
        """Inconsistent shapes are rejected."""
        with self.assertRaises(DimensionError):
            LtiSystem(np.eye(2), np.eye(2), np.eye(2), np.zeros((1, 2)), np.zeros(2))
        with self.assertRaises(DimensionError):
            LtiSystem(np.eye(2), np.eye(2), np.eye(2), np.zeros((2, 2)), np.zeros(3))


class TestLift(unittest.TestCase):
    """Test the lifted operators."""

    def test_horizon_one(self):
        """t = 1 gives B and D."""
        system = planar_system()
        lifted = lift(system, 1)
        np.testing.assert_array_equal(lifted.B_lift, system.B)
        np.testing.assert_array_equal(lifted.D_lift, system.D)

    def test_block_structure(self):
        """Block k is (A + BK)^k D."""
        system = planar_system()
        lifted = lift(system, 4)
        loop = closed_loop(system)
        for k in range(4):
            np.testing.assert_allclose(lifted.D_lift[:, 2 * k:2 * k + 2], np.linalg.matrix_power(loop, k) @ system.D)
        self.assertTrue(lifted.full_row_rank)

    def test_matches_simulation(self):
        """Lifted terminal states equal rollouts on the planar system."""
        rng = np.random.default_rng(12)
        system = planar_system(x0=[0.3, -0.4])
        t = 10
        noise = TrajectoryBatch.from_steps(rng.standard_normal((7, t, 2)))
        v = rng.standard_normal(2 * t)
        paths = simulate(system, v, noise)
        lifted = lift(system, t)
        expected = lifted.terminal_state(system.x0, v, noise.trajectories)
        np.testing.assert_allclose(paths[:, -1], expected, atol=1e-10)

    def test_matches_simulation_random_systems(self):
        """Lifted and simulated terminal states agree for random systems."""
        rng = np.random.default_rng(13)
        for _ in range(20):
            d, m, r = (int(x) for x in rng.integers(1, 4, size=3))
            t = int(rng.integers(1, 13))
            A = rng.standard_normal((d, d))
            A *= 0.9 / max(spectral_radius(A), 1e-3)
            system = LtiSystem(A, rng.standard_normal((d, m)), rng.standard_normal((d, r)),
                               0.1 * rng.standard_normal((m, d)), rng.standard_normal(d))
            noise = TrajectoryBatch.from_steps(rng.standard_normal((3, t, r)))
            v = rng.standard_normal(t * m)
            paths = simulate(system, v, noise)
            expected = lift(system, t).terminal_state(system.x0, v, noise.trajectories)
            scale = max(1.0, float(np.max(np.abs(expected))))
            np.testing.assert_allclose(paths[:, -1], expected, atol=1e-9 * scale)

    def test_simulate_without_noise(self):
        """Zero noise and zero input from the origin stay at the origin."""
        system = planar_system()
        paths = simulate(system, None, TrajectoryBatch.from_steps(np.zeros((2, 5, 2))))
        self.assertEqual(paths.shape, (2, 6, 2))
        np.testing.assert_array_equal(paths, 0.0)

    def test_invalid_horizon(self):
        """t must be positive."""
        with self.assertRaises(DimensionError):
            lift(planar_system(), 0)


class TestStateAmbiguity(unittest.TestCase):
    """Test state ambiguity sets."""

    def setUp(self):
        self.system = planar_system(x0=[1.0, -1.0])
        self.t = 3
        self.rng = np.random.default_rng(14)
        self.train = TrajectoryBatch.from_steps(self.rng.standard_normal((5, self.t, 2)))
        self.noise_ball = AmbiguitySet(empirical(self.train.pooled()), TransportationCost.squared_euclidean(), 0.2)

    def test_trajectory_mode_center(self):
        """Centers are the terminal states of the training trajectories."""
        ball = state_ambiguity(self.system, self.t, None, self.noise_ball, self.train)
        lifted = lift(self.system, self.t)
        expected = lifted.terminal_state(self.system.x0, np.zeros(2 * self.t), self.train.trajectories)
        np.testing.assert_allclose(ball.center.atoms, expected, atol=1e-12)
        self.assertAlmostEqual(ball.radius, self.t * 0.2)
        self.assertEqual(ball.exactness, Exactness.OUTER)
        np.testing.assert_allclose(ball.cost.matrix, np.linalg.pinv(lifted.D_lift), atol=1e-10)

    def test_zero_noise_center(self):
        """A zero training trajectory centers the ball at the free response."""
        zero = TrajectoryBatch.from_steps(np.zeros((1, self.t, 2)))
        ball = AmbiguitySet(empirical(zero.pooled()), TransportationCost.squared_euclidean(), 0.0)
        state = state_ambiguity(self.system, self.t, None, ball, zero)
        expected = np.linalg.matrix_power(closed_loop(self.system), self.t) @ self.system.x0
        self.assertTrue(state.center.is_dirac())
        np.testing.assert_allclose(state.center.atoms[0], expected, atol=1e-12)

    def test_feedforward_shift(self):
        """Changing v shifts the center by B_lift (v - v')."""
        lifted = lift(self.system, self.t)
        v1 = self.rng.standard_normal(2 * self.t)
        v2 = self.rng.standard_normal(2 * self.t)
        ball1 = state_ambiguity(self.system, self.t, v1, self.noise_ball, self.train, lifted)
        ball2 = state_ambiguity(self.system, self.t, v2, self.noise_ball, self.train, lifted)
        np.testing.assert_allclose(ball1.center.atoms - ball2.center.atoms,
                                   np.tile(lifted.B_lift @ (v1 - v2), (5, 1)), atol=1e-12)
        self.assertEqual(ball1.radius, ball2.radius)

    def test_enumerated_scalar_example(self):
        """Product centers of a scalar system, latest noise first."""
        system = LtiSystem([[0.5]], [[1.0]], [[1.0]], [[0.0]], [0.0])
        ball = AmbiguitySet(empirical([[-1.0], [1.0]]), TransportationCost.squared_euclidean(), 0.1)
        state = state_ambiguity(system, 2, None, ball)
        np.testing.assert_allclose(state.center.atoms.ravel(), [-1.5, -0.5, 0.5, 1.5])
        np.testing.assert_allclose(state.center.weights, 0.25)
        self.assertAlmostEqual(state.radius, 0.2)
        self.assertEqual(state.exactness, Exactness.EXACT)

    def test_noise_dimension_mismatch(self):
        """Noise balls must match the system noise dimension."""
        ball = AmbiguitySet(empirical([[0.0]]), TransportationCost.squared_euclidean(), 0.1)
        with self.assertRaises(DimensionError):
            state_ambiguity(self.system, self.t, None, ball)

    def test_input_length(self):
        """Stacked inputs must have length t * m."""
        with self.assertRaises(DimensionError):
            state_ambiguity(self.system, self.t, np.zeros(3), self.noise_ball, self.train)


class TestLqrGain(unittest.TestCase):
    """Test the Riccati iteration."""

    def test_scalar_closed_form(self):
        """a = 2, b = q = r = 1 gives p = 2 + sqrt(5)."""
        p = 2.0 + np.sqrt(5.0)
        K = lqr_gain([[2.0]], [[1.0]], [[1.0]], [[1.0]])
        self.assertAlmostEqual(K[0, 0], -2.0 * p / (1.0 + p), places=8)

    def test_zero_dynamics(self):
        """A = 0 needs no feedback."""
        K = lqr_gain(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2))
        np.testing.assert_allclose(K, 0.0, atol=1e-15)

    def test_stabilizes(self):
        """The gain of an unstable system stabilizes it."""
        A = np.array([[1.2, 1.0], [0.0, 1.1]])
        B = np.array([[0.0], [1.0]])
        K = lqr_gain(A, B, np.eye(2), np.eye(1))
        self.assertLess(spectral_radius(A + B @ K), 1.0)

    def test_not_stabilizable(self):
        """Unstable modes without input diverge."""
        with self.assertRaises(ConvergenceError):
            lqr_gain([[2.0]], [[0.0]], [[1.0]], [[1.0]])

    def test_weight_validation(self):
        """Weights must be symmetric positive definite."""
        with self.assertRaises(DimensionError):
            lqr_gain(np.eye(2), np.eye(2), [[1.0, 0.5], [0.0, 1.0]], np.eye(2))
        with self.assertRaises(DimensionError):
            lqr_gain(np.eye(2), np.eye(2), np.eye(2), -np.eye(2))


if __name__ == "__main__":
    unittest.main()
