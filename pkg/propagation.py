"""
Ambiguity-set algebra.

Propagating an OT ball through a linear map x -> A x keeps the radius and
composes the cost with the Moore-Penrose pseudoinverse A^+. The result
equals the true image set when A has full row rank and contains it
otherwise; which of the two holds is tracked on the ball as metadata and
never changes the numerics.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from config import LINALG_CONFIG
from distributions import TrajectoryBatch, product_power, pushforward
from errors import CostKindError, DimensionError, NumericalError, ParameterError, RankDeficientError
from transport import AmbiguitySet, CostKind, Exactness, TransportationCost

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PseudoInverse:
    """
    SVD-based pseudoinverse of an m x d matrix.

    Attributes:
        source: The matrix A
        pinv: A^+ (d x m)
        rank: Numerical rank
        u, s, vt: Thin SVD factors, A = u @ diag(s) @ vt
        full_row_rank: True iff rank == m
    """

    source: np.ndarray
    pinv: np.ndarray
    rank: int
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray
    full_row_rank: bool

    def residuals(self) -> Tuple[float, float, float, float]:
        return penrose_residuals(self)

    def satisfies_penrose(self, tol: Optional[float] = None) -> bool:
        tol = LINALG_CONFIG["penrose_tol"] if tol is None else tol
        return max(self.residuals()) <= tol


def pseudoinverse(A, rtol: Optional[float] = None) -> PseudoInverse:
    """
    Moore-Penrose pseudoinverse by truncated SVD.

    Singular values below rtol * sigma_max count as zero.

    Raises:
        NumericalError: if A has non-finite entries
    """
    rtol = LINALG_CONFIG["rank_rtol"] if rtol is None else rtol
    matrix = np.atleast_2d(np.asarray(A, dtype=float))
    if matrix.size == 0:
        raise DimensionError("cannot pseudo-invert an empty matrix")
    if not np.all(np.isfinite(matrix)):
        raise NumericalError("matrix has non-finite entries")
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    cutoff = rtol * s[0] if s.size else 0.0
    rank = int(np.sum(s > cutoff)) if s.size and s[0] > 0 else 0
    pinv = (vt[:rank].T / s[:rank]) @ u[:, :rank].T
    if rank == 0:
        pinv = np.zeros((matrix.shape[1], matrix.shape[0]))
    return PseudoInverse(
        source=matrix,
        pinv=pinv,
        rank=rank,
        u=u,
        s=s,
        vt=vt,
        full_row_rank=rank == matrix.shape[0],
    )


def penrose_residuals(pinv: PseudoInverse) -> Tuple[float, float, float, float]:
    """Frobenius norms of A A+ A - A, A+ A A+ - A+, and the asymmetry of A A+ and A+ A."""
    A, X = pinv.source, pinv.pinv
    AX, XA = A @ X, X @ A
    return (
        float(np.linalg.norm(AX @ A - A)),
        float(np.linalg.norm(XA @ X - X)),
        float(np.linalg.norm(AX.T - AX)),
        float(np.linalg.norm(XA.T - XA)),
    )


def _check_propagatable(cost: TransportationCost) -> None:
    if cost.matrix is None:
        return
    rows, cols = cost.matrix.shape
    if rows != cols or np.linalg.matrix_rank(cost.matrix) < cols:
        raise CostKindError("propagation needs the cost pre-map to be square and invertible")


def propagate_linear(ball: AmbiguitySet, A) -> AmbiguitySet:
    """
    Image of an ambiguity set under x -> A x.

    Args:
        ball: Ball whose cost pre-map is the identity or square invertible
        A: m x d matrix with d the ball dimension

    Returns:
        Ball around A#center with cost c o A^+ and the same radius; exact iff
        A has full row rank and the input ball is exact
    """
    matrix = np.atleast_2d(np.asarray(A, dtype=float))
    if matrix.shape[1] != ball.dim:
        raise DimensionError(f"map has {matrix.shape[1]} columns, ball has dimension {ball.dim}")
    _check_propagatable(ball.cost)
    inverse = pseudoinverse(matrix)
    propagated = AmbiguitySet(
        center=pushforward(matrix, ball.center),
        cost=ball.cost.compose(inverse.pinv),
        radius=ball.radius,
        exactness=ball.exactness,
        notes=ball.notes,
    )
    if not inverse.full_row_rank:
        propagated = propagated.downgraded(f"map of rank {inverse.rank} < {matrix.shape[0]} rows")
    return propagated


def translate(ball: AmbiguitySet, y) -> AmbiguitySet:
    """Ball with its center shifted by y."""
    return ball.translated(y)


def lift_product(ball: AmbiguitySet, t: int,
                 mode: Union[str, TrajectoryBatch] = "enumerate",
                 cap: Optional[int] = None) -> AmbiguitySet:
    """
    Ambiguity set of a t-step noise trajectory from a per-step ball.

    The radius becomes t * epsilon under the plain squared Euclidean cost on
    R^{t r}.

    Args:
        ball: Per-step ball with plain squared Euclidean cost
        t: Horizon
        mode: "enumerate" for the t-fold product center, or a TrajectoryBatch
            whose empirical distribution becomes the center (outer approximation)
        cap: Atom cap for enumeration

    Raises:
        CapExceededError: if enumeration exceeds the cap
    """
    if ball.cost.kind != CostKind.SQ_EUCLID_COMPOSED or not ball.cost.is_plain():
        raise CostKindError("product lifting needs the plain squared Euclidean cost")
    if t < 1:
        raise DimensionError(f"horizon must be positive, got {t}")
    plain = TransportationCost.squared_euclidean()
    if isinstance(mode, TrajectoryBatch):
        if mode.horizon != t or mode.noise_dim != ball.dim:
            raise DimensionError(
                f"trajectories have horizon {mode.horizon} and noise dimension {mode.noise_dim}, "
                f"expected {t} and {ball.dim}"
            )
        lifted = AmbiguitySet(mode.to_distribution(), plain, t * ball.radius, ball.exactness, ball.notes)
        return lifted.downgraded("trajectory-center")
    if mode != "enumerate":
        raise DimensionError(f"unknown lifting mode {mode!r}")
    if t == 1:
        return ball
    center = product_power(ball.center, t, cap)
    return AmbiguitySet(center, plain, t * ball.radius, ball.exactness, ball.notes)


def radius_rate(n: int, r: int, C: float = 1.0) -> float:
    """Radius order C * n^(-1/max(2, r)) for n samples of an r-dimensional variable."""
    if n < 1 or r < 1 or C <= 0:
        raise ParameterError(f"radius rate needs n >= 1, r >= 1 and C > 0, got {n}, {r}, {C}")
    return C * float(n) ** (-1.0 / max(2, r))


def joint_radius_rate(n: int, r: int, t: int, C: float = 1.0) -> float:
    """Radius order for a ball built directly on n joint t-step trajectories."""
    return radius_rate(n, t * r, C)


def cost_spectrum(M) -> List[Tuple[float, np.ndarray]]:
    """
    Singular values of M (descending) paired with their left singular vectors.

    Each vector is signed so that its largest-magnitude entry is positive.
    """
    matrix = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(matrix)):
        raise NumericalError("matrix has non-finite entries")
    u, s, _ = np.linalg.svd(matrix, full_matrices=False)
    spectrum = []
    for k in range(s.size):
        vector = u[:, k]
        if vector[np.argmax(np.abs(vector))] < 0:
            vector = -vector
        spectrum.append((float(s[k]), vector))
    return spectrum


def bounding_ball(ball: AmbiguitySet) -> AmbiguitySet:
    """
    Plain squared Euclidean ball containing a ball with cost ||D^+ z||^2.

    ||D^+ z||^2 >= ||z||^2 / sigma_max(D)^2, so the radius grows by sigma_max(D)^2.

    Raises:
        CostKindError: for power-norm costs
        RankDeficientError: if the pre-map does not have full column rank
    """
    cost = ball.cost
    if cost.kind != CostKind.SQ_EUCLID_COMPOSED:
        raise CostKindError("bounding ball needs a squared Euclidean composed cost")
    plain = TransportationCost.squared_euclidean()
    if cost.matrix is None:
        return ball
    s = np.linalg.svd(cost.matrix, compute_uv=False)
    cols = cost.matrix.shape[1]
    if s.size < cols or s[-1] <= LINALG_CONFIG["rank_rtol"] * s[0]:
        raise RankDeficientError("cost pre-map must have full column rank")
    sigma_max = 1.0 / s[-1]
    logger.debug("bounding ball: sigma_max %.17g", sigma_max)
    return AmbiguitySet(
        ball.center,
        plain,
        ball.radius * sigma_max ** 2,
        Exactness.OUTER,
        ball.notes,
    )
