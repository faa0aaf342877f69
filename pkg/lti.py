"""
Stochastic linear time-invariant systems under affine state feedback.

    x_{k+1} = A x_k + B u_k + D w_k,    u_k = K x_k + v_k

Stacked inputs and noises are stored latest-first, [v_{t-1}; ...; v_0], so
that block k of the lifted operators multiplies the entry k steps before
the horizon:

    x_t = (A + BK)^t x_0 + B_lift v + D_lift w
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np

from config import LQR_CONFIG
from distributions import TrajectoryBatch
from errors import ConfigError, ConvergenceError, DimensionError
from propagation import lift_product, propagate_linear, pseudoinverse, translate
from transport import AmbiguitySet

logger = logging.getLogger(__name__)


def _matrix(value, name: str) -> np.ndarray:
    matrix = np.atleast_2d(np.array(value, dtype=float))
    if matrix.ndim != 2:
        raise DimensionError(f"{name} must be a matrix")
    if not np.all(np.isfinite(matrix)):
        raise DimensionError(f"{name} has non-finite entries")
    matrix.setflags(write=False)
    return matrix


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """
    Closed-loop stochastic LTI model.

    Attributes:
        A: d x d state matrix
        B: d x m input matrix
        D: d x r noise matrix
        K: m x d feedback gain (u = K x + v)
        x0: Known deterministic initial state
    """

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    K: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "D", "K"):
            object.__setattr__(self, name, _matrix(getattr(self, name), name))
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        if not np.all(np.isfinite(x0)):
            raise DimensionError("x0 has non-finite entries")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)

        d = self.A.shape[0]
        m = self.B.shape[1]
        if self.A.shape != (d, d):
            raise DimensionError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != d or self.D.shape[0] != d:
            raise DimensionError(f"B and D need {d} rows, got {self.B.shape} and {self.D.shape}")
        if self.K.shape != (m, d):
            raise DimensionError(f"K must be {m} x {d}, got {self.K.shape}")
        if x0.size != d:
            raise DimensionError(f"x0 must have dimension {d}, got {x0.size}")

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]

    @property
    def noise_dim(self) -> int:
        return self.D.shape[1]

    @classmethod
    def from_dict(cls, data: Dict) -> "LtiSystem":
        """
        Build from the JSON system description.

        "K" is either a matrix or {"lqr": {"Q": ..., "R": ...}}; "x0" defaults
        to the origin.

        Raises:
            ConfigError: on missing keys or a malformed gain specification
        """
        missing = [key for key in ("A", "B", "D") if key not in data]
        if missing:
            raise ConfigError(f"system description is missing {', '.join(missing)}")
        A = _matrix(data["A"], "A")
        B = _matrix(data["B"], "B")
        gain = data.get("K", {"lqr": {"Q": np.eye(A.shape[0]).tolist(), "R": np.eye(B.shape[1]).tolist()}})
        if isinstance(gain, dict):
            if "lqr" not in gain:
                raise ConfigError('K must be a matrix or {"lqr": {"Q": ..., "R": ...}}')
            weights = gain["lqr"]
            K = lqr_gain(A, B, weights.get("Q", np.eye(A.shape[0])), weights.get("R", np.eye(B.shape[1])))
        else:
            K = gain
        x0 = data.get("x0", np.zeros(A.shape[0]))
        return cls(A, B, data["D"], K, x0)

    def to_dict(self) -> Dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "D": self.D.tolist(),
            "K": self.K.tolist(),
            "x0": self.x0.tolist(),
        }


def closed_loop(sys: LtiSystem) -> np.ndarray:
    """A + B K."""
    return sys.A + sys.B @ sys.K


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)))))


@dataclass(frozen=True, eq=False)
class LiftedOperators:
    """
    Horizon-t block operators.

    Attributes:
        horizon: t
        powers: (A + BK)^k for k = 0..t
        B_lift: d x (t m), block k equals (A + BK)^k B
        D_lift: d x (t r), block k equals (A + BK)^k D
        full_row_rank: Whether D_lift has rank d
    """

    horizon: int
    powers: Tuple[np.ndarray, ...]
    B_lift: np.ndarray
    D_lift: np.ndarray
    full_row_rank: bool

    def free_response(self, x0) -> np.ndarray:
        return self.powers[-1] @ np.asarray(x0, dtype=float)

    def terminal_state(self, x0, v, w) -> np.ndarray:
        """x_t for stacked inputs v and noise w (or rows of noise trajectories)."""
        w = np.asarray(w, dtype=float)
        return self.free_response(x0) + self.B_lift @ np.asarray(v, dtype=float) + w @ self.D_lift.T


def lift(sys: LtiSystem, t: int) -> LiftedOperators:
    """Lifted operators of the closed loop over t steps."""
    if t < 1:
        raise DimensionError(f"horizon must be positive, got {t}")
    loop = closed_loop(sys)
    powers = [np.eye(sys.state_dim)]
    for _ in range(t):
        powers.append(loop @ powers[-1])
    B_lift = np.hstack([powers[k] @ sys.B for k in range(t)])
    D_lift = np.hstack([powers[k] @ sys.D for k in range(t)])
    return LiftedOperators(t, tuple(powers), B_lift, D_lift, pseudoinverse(D_lift).full_row_rank)


def _stacked_input(sys: LtiSystem, t: int, v) -> np.ndarray:
    if v is None:
        return np.zeros(t * sys.input_dim)
    stacked = np.asarray(v, dtype=float).reshape(-1)
    if stacked.size != t * sys.input_dim:
        raise DimensionError(f"stacked input must have length {t * sys.input_dim}, got {stacked.size}")
    return stacked


def state_ambiguity(sys: LtiSystem, t: int, v, noise_ball: AmbiguitySet,
                    mode: Union[str, TrajectoryBatch] = "enumerate",
                    lifted: Optional[LiftedOperators] = None) -> AmbiguitySet:
    """
    Ambiguity set of the state x_t.

    Lifts the per-step noise ball to the trajectory, propagates it through
    D_lift and translates by the deterministic part (A + BK)^t x0 + B_lift v.

    Args:
        sys: Closed-loop system
        t: Horizon
        v: Stacked feedforward [v_{t-1}; ...; v_0] (None for zero)
        noise_ball: Per-step ball with plain squared Euclidean cost
        mode: "enumerate" or the TrajectoryBatch of observed noise trajectories
        lifted: Precomputed lift(sys, t)

    Returns:
        Ball with radius t * epsilon and cost ||D_lift^+ z||^2
    """
    if noise_ball.dim != sys.noise_dim:
        raise DimensionError(f"noise ball has dimension {noise_ball.dim}, system noise is {sys.noise_dim}")
    lifted = lift(sys, t) if lifted is None else lifted
    stacked = _stacked_input(sys, t, v)
    trajectory_ball = lift_product(noise_ball, t, mode)
    propagated = propagate_linear(trajectory_ball, lifted.D_lift)
    return translate(propagated, lifted.free_response(sys.x0) + lifted.B_lift @ stacked)


def lqr_gain(A, B, Q, R, iters: Optional[int] = None, tol: Optional[float] = None) -> np.ndarray:
    """
    Infinite-horizon discrete LQR gain by Riccati fixed-point iteration.

    Args:
        A, B: System matrices
        Q, R: Symmetric positive definite state and input weights
        iters: Iteration budget
        tol: Frobenius distance between successive iterates

    Returns:
        K with u = K x, i.e. K = -(R + B'PB)^{-1} B'PA

    Raises:
        ConvergenceError: if the iteration does not settle or A + BK is not stable
    """
    iters = LQR_CONFIG["max_iters"] if iters is None else iters
    tol = LQR_CONFIG["tol"] if tol is None else tol
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))

    nstates, ninputs = B.shape
    if A.shape != (nstates, nstates):
        raise DimensionError("inconsistent system dimensions")
    if Q.shape != (nstates, nstates) or R.shape != (ninputs, ninputs):
        raise DimensionError("incorrect weighting matrix dimensions")
    for name, weight in (("Q", Q), ("R", R)):
        if not np.allclose(weight, weight.T):
            raise DimensionError(f"{name} must be symmetric")
        try:
            np.linalg.cholesky(weight)
        except np.linalg.LinAlgError as e:
            raise DimensionError(f"{name} must be positive definite") from e

    P = Q.copy()
    for iteration in range(iters):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ gain
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise ConvergenceError("Riccati iteration diverged")
        step = np.linalg.norm(P_next - P)
        P = P_next
        if step <= tol:
            break
    else:
        raise ConvergenceError(f"Riccati iteration did not converge in {iters} iterations")

    BtP = B.T @ P
    K = -np.linalg.solve(R + BtP @ B, BtP @ A)
    rho = spectral_radius(A + B @ K)
    logger.debug("LQR converged after %d iterations, closed-loop spectral radius %.6f", iteration + 1, rho)
    if rho >= 1.0:
        raise ConvergenceError(f"LQR closed loop is not stable (spectral radius {rho})")
    return K


def simulate(sys: LtiSystem, v, noise: TrajectoryBatch) -> np.ndarray:
    """
    Roll out every noise trajectory.

    Returns:
        (N, t + 1, d) array of state paths x_0..x_t
    """
    t = noise.horizon
    if noise.noise_dim != sys.noise_dim:
        raise DimensionError(f"noise has dimension {noise.noise_dim}, system expects {sys.noise_dim}")
    stacked = _stacked_input(sys, t, v)
    m = sys.input_dim
    paths = np.empty((noise.size, t + 1, sys.state_dim))
    x = np.tile(sys.x0, (noise.size, 1))
    paths[:, 0] = x
    for k in range(t):
        start = (t - 1 - k) * m
        u = x @ sys.K.T + stacked[start:start + m]
        x = x @ sys.A.T + u @ sys.B.T + noise.step(k) @ sys.D.T
        paths[:, k + 1] = x
    return paths
