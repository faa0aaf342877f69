"""
Transportation costs, exact discrete optimal transport, and OT ambiguity sets.

The OT discrepancy between two finitely supported distributions is the
optimum of a transportation LP, solved here by the transportation simplex:
north-west-corner start, MODI (u-v) potentials, Dantzig pricing with a
switch to Bland's rule after a run of degenerate pivots, and a lexicographic
perturbation of the marginals that is removed when flows are extracted.

Costs are of the form c(z) = ||M z||^p for an optional linear pre-map M:
- SQ_EUCLID_COMPOSED: p = 2, the cost family used by all system-level code
- POWER_NORM: any p >= 1, used to reproduce the scalar counterexamples
"""

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from config import LINALG_CONFIG, TRANSPORT_CONFIG
from distributions import DiscreteDistribution, convolve_delta
from errors import CostKindError, DimensionError, SolverError

logger = logging.getLogger(__name__)


class CostKind(str, Enum):
    SQ_EUCLID_COMPOSED = "sq_euclid_composed"
    POWER_NORM = "power_norm"


@dataclass(frozen=True, eq=False)
class TransportationCost:
    """
    Translation-invariant transportation cost c(x1 - x2) = ||M (x1 - x2)||^p.

    Attributes:
        kind: Cost family
        matrix: Pre-map M (k x d); None stands for the identity of any dimension
        power: Exponent p (always 2 for SQ_EUCLID_COMPOSED)
    """

    kind: CostKind
    matrix: Optional[np.ndarray] = None
    power: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "kind", CostKind(self.kind))
        if self.kind == CostKind.SQ_EUCLID_COMPOSED and self.power != 2.0:
            raise CostKindError("squared Euclidean costs have power 2")
        if self.power < 1.0:
            raise CostKindError(f"power-norm costs need p >= 1, got {self.power}")
        if self.matrix is not None:
            matrix = np.atleast_2d(np.array(self.matrix, dtype=float))
            if not np.all(np.isfinite(matrix)):
                raise DimensionError("cost matrix must be finite")
            matrix.setflags(write=False)
            object.__setattr__(self, "matrix", matrix)

    @classmethod
    def squared_euclidean(cls) -> "TransportationCost":
        return cls(CostKind.SQ_EUCLID_COMPOSED)

    @classmethod
    def composed(cls, matrix: np.ndarray) -> "TransportationCost":
        return cls(CostKind.SQ_EUCLID_COMPOSED, matrix=matrix)

    @classmethod
    def power_norm(cls, p: float, matrix: Optional[np.ndarray] = None) -> "TransportationCost":
        return cls(CostKind.POWER_NORM, matrix=matrix, power=float(p))

    @property
    def dim(self) -> Optional[int]:
        """Input dimension, or None when the cost applies to any dimension."""
        return None if self.matrix is None else self.matrix.shape[1]

    def is_plain(self) -> bool:
        """True when the pre-map is the identity."""
        if self.matrix is None:
            return True
        rows, cols = self.matrix.shape
        return rows == cols and np.array_equal(self.matrix, np.eye(rows))

    def check_dim(self, dim: int) -> None:
        if self.matrix is not None and self.matrix.shape[1] != dim:
            raise DimensionError(f"cost acts on dimension {self.matrix.shape[1]}, got {dim}")

    def apply_map(self, z: np.ndarray) -> np.ndarray:
        """Rows of z mapped through the pre-map."""
        return z if self.matrix is None else z @ self.matrix.T

    def evaluate(self, z) -> float:
        z = np.asarray(z, dtype=float).reshape(-1)
        self.check_dim(z.size)
        norm = float(np.linalg.norm(self.apply_map(z.reshape(1, -1))))
        return norm * norm if self.power == 2.0 else norm ** self.power

    def pairwise(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Cost matrix C[i, j] = c(X[i] - Y[j])."""
        self.check_dim(X.shape[1])
        self.check_dim(Y.shape[1])
        MX, MY = self.apply_map(X), self.apply_map(Y)
        diff = MX[:, None, :] - MY[None, :, :]
        squared = np.einsum("ijk,ijk->ij", diff, diff)
        if self.power == 2.0:
            return squared
        return np.sqrt(squared) ** self.power

    def compose(self, pinv: np.ndarray) -> "TransportationCost":
        """The cost c o A^+ for a pseudoinverse A^+ (d x m)."""
        pinv = np.atleast_2d(np.asarray(pinv, dtype=float))
        self.check_dim(pinv.shape[0])
        matrix = pinv if self.matrix is None else self.matrix @ pinv
        return replace(self, matrix=matrix)


def evaluate_cost(c: TransportationCost, z) -> float:
    """c(z) for a single displacement vector z."""
    return c.evaluate(z)


def cost_matrix(c: TransportationCost, P: DiscreteDistribution, Q: DiscreteDistribution) -> np.ndarray:
    if P.dim != Q.dim:
        raise DimensionError(f"distributions have dimensions {P.dim} and {Q.dim}")
    return c.pairwise(P.atoms, Q.atoms)


def is_orthomonotone(c: TransportationCost, dim: int, samples: int = 200,
                     rng: Optional[np.random.Generator] = None) -> bool:
    """
    Sampled check of c(x1 + x2) >= c(x1) whenever x1 is orthogonal to x2.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for _ in range(samples):
        x1 = rng.standard_normal(dim)
        x2 = rng.standard_normal(dim)
        norm = x1 @ x1
        if norm > 0:
            x2 = x2 - (x1 @ x2) / norm * x1
        base = c.evaluate(x1)
        if c.evaluate(x1 + x2) < base - 1e-12 * max(1.0, base):
            return False
    return True


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """
    Optimal coupling of a transportation LP.

    Attributes:
        coupling: (N_P, N_Q) nonnegative matrix with the prescribed marginals
        objective: sum_ij coupling[i, j] * c(x_i - y_j)
        pivots: Simplex pivots performed (0 for closed forms)
    """

    coupling: np.ndarray
    objective: float
    pivots: int = 0


def _northwest_corner(supply: np.ndarray, demand: np.ndarray) -> Tuple[List[Tuple[int, int]], List[float]]:
    """Staircase basis with exactly n + m - 1 cells (some possibly zero)."""
    n, m = supply.size, demand.size
    remaining_supply = supply.copy()
    remaining_demand = demand.copy()
    cells, flows = [], []
    i = j = 0
    while i < n and j < m:
        amount = max(0.0, min(remaining_supply[i], remaining_demand[j]))
        cells.append((i, j))
        flows.append(amount)
        remaining_supply[i] -= amount
        remaining_demand[j] -= amount
        if i == n - 1:
            j += 1
        elif j == m - 1:
            i += 1
        elif remaining_supply[i] <= remaining_demand[j]:
            i += 1
        else:
            j += 1
    return cells, flows


def _adjacency(cells: List[Tuple[int, int]], n: int, m: int) -> List[List[int]]:
    """Spanning-tree adjacency over nodes rows 0..n-1 and columns n..n+m-1."""
    adjacent = [[] for _ in range(n + m)]
    for k, (i, j) in enumerate(cells):
        adjacent[i].append(k)
        adjacent[n + j].append(k)
    return adjacent


def _potentials(cells, cost, n, m):
    """MODI potentials with u_0 = 0 and u_i + v_j = C_ij on basic cells."""
    adjacent = _adjacency(cells, n, m)
    potential = np.full(n + m, np.nan)
    potential[0] = 0.0
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for k in adjacent[node]:
            i, j = cells[k]
            other = n + j if node == i else i
            if np.isnan(potential[other]):
                potential[other] = cost[i, j] - potential[node]
                queue.append(other)
    if np.any(np.isnan(potential)):
        raise SolverError("transportation basis is not a spanning tree")
    return potential[:n], potential[n:]


def _tree_path(cells, n, m, start_row: int, end_col: int) -> List[int]:
    """Basic cells on the tree path from row start_row to column end_col."""
    adjacent = _adjacency(cells, n, m)
    parent_edge = {start_row: None}
    queue = deque([start_row])
    target = n + end_col
    while queue and target not in parent_edge:
        node = queue.popleft()
        for k in adjacent[node]:
            i, j = cells[k]
            other = n + j if node == i else i
            if other not in parent_edge:
                parent_edge[other] = (k, node)
                queue.append(other)
    if target not in parent_edge:
        raise SolverError("entering cell does not close a cycle")
    path = []
    node = target
    while parent_edge[node] is not None:
        k, previous = parent_edge[node]
        path.append(k)
        node = previous
    path.reverse()
    return path


def _tree_flows(cells, supply, demand) -> np.ndarray:
    """Unique flows of a basis for the given marginals, by leaf elimination."""
    n, m = supply.size, demand.size
    adjacent = [set(ks) for ks in _adjacency(cells, n, m)]
    remaining = np.concatenate([supply, demand]).astype(float)
    flows = np.zeros(len(cells))
    leaves = deque(node for node in range(n + m) if len(adjacent[node]) == 1)
    assigned = 0
    while leaves and assigned < len(cells):
        node = leaves.popleft()
        if len(adjacent[node]) != 1:
            continue
        k = adjacent[node].pop()
        i, j = cells[k]
        other = n + j if node == i else i
        flows[k] = remaining[node]
        remaining[other] -= remaining[node]
        remaining[node] = 0.0
        adjacent[other].discard(k)
        assigned += 1
        if len(adjacent[other]) == 1:
            leaves.append(other)
    return np.maximum(flows, 0.0)


def transportation_simplex(supply: np.ndarray, demand: np.ndarray, cost: np.ndarray,
                           max_pivots: Optional[int] = None) -> TransportPlan:
    """
    Solve min <C, X> over X >= 0 with row sums `supply` and column sums `demand`.

    Raises:
        SolverError: if the pivot budget is exhausted or the basis breaks down
    """
    supply = np.asarray(supply, dtype=float)
    demand = np.asarray(demand, dtype=float)
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    delta = TRANSPORT_CONFIG["perturbation"]
    perturbed_supply = supply + delta
    perturbed_demand = demand.copy()
    perturbed_demand[-1] += n * delta

    cells, flow_list = _northwest_corner(perturbed_supply, perturbed_demand)
    flows = np.asarray(flow_list)
    tol = TRANSPORT_CONFIG["reduced_cost_rtol"] * max(1.0, float(np.max(np.abs(cost))))
    budget = max_pivots or TRANSPORT_CONFIG["pivots_per_cell"] * n * m
    streak_limit = TRANSPORT_CONFIG["degenerate_streak_for_bland"]
    degenerate_streak = 0
    pivots = 0

    while True:
        u, v = _potentials(cells, cost, n, m)
        reduced = cost - u[:, None] - v[None, :]
        for i, j in cells:
            reduced[i, j] = 0.0
        if reduced.min() >= -tol:
            break
        if pivots >= budget:
            raise SolverError(f"transportation simplex did not converge in {budget} pivots")
        if degenerate_streak >= streak_limit:
            # Bland: lowest-index improving cell
            flat = np.flatnonzero(reduced.reshape(-1) < -tol)[0]
            enter = divmod(int(flat), m)
        else:
            enter = divmod(int(np.argmin(reduced)), m)

        path = _tree_path(cells, n, m, enter[0], enter[1])
        minus = path[0::2]
        plus = path[1::2]
        theta = min(flows[k] for k in minus)
        leaving = min(
            (k for k in minus if flows[k] == theta),
            key=lambda k: cells[k][0] * m + cells[k][1],
        )
        for k in minus:
            flows[k] -= theta
        for k in plus:
            flows[k] += theta
        flows = np.maximum(flows, 0.0)
        cells[leaving] = enter
        flows[leaving] = theta
        degenerate_streak = degenerate_streak + 1 if theta <= 0.0 else 0
        pivots += 1

    flows = _tree_flows(cells, supply, demand)
    coupling = np.zeros((n, m))
    for k, (i, j) in enumerate(cells):
        coupling[i, j] += flows[k]
    objective = float(np.sum(coupling * cost))
    logger.debug("transportation simplex: %dx%d, %d pivots, objective %.17g", n, m, pivots, objective)
    return TransportPlan(coupling, objective, pivots)


def ot_discrepancy(c: TransportationCost, P: DiscreteDistribution,
                   Q: DiscreteDistribution) -> Tuple[float, TransportPlan]:
    """
    OT discrepancy T_c(P, Q) = min over couplings of E[c(x - y)].

    A Dirac on either side has the closed form E[c(x - y)] with the only
    coupling; otherwise the transportation simplex is used.

    Returns:
        Tuple of (discrepancy, optimal plan)
    """
    cost = cost_matrix(c, P, Q)
    if P.is_dirac() or Q.is_dirac():
        coupling = np.outer(P.weights, Q.weights)
        objective = float(np.sum(coupling * cost))
        return objective, TransportPlan(coupling, objective)
    plan = transportation_simplex(P.weights, Q.weights, cost)
    return plan.objective, plan


class Exactness(str, Enum):
    EXACT = "exact"
    OUTER = "outer-approximation"


@dataclass(frozen=True, eq=False)
class AmbiguitySet:
    """
    OT ball {Q : T_c(center, Q) <= radius}.

    Attributes:
        center: Center distribution
        cost: Transportation cost
        radius: Budget epsilon >= 0
        exactness: Whether the ball equals the set it models or contains it
        notes: Reasons recorded when exactness was downgraded
    """

    center: DiscreteDistribution
    cost: TransportationCost
    radius: float
    exactness: Exactness = Exactness.EXACT
    notes: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        radius = float(self.radius)
        if not np.isfinite(radius) or radius < 0:
            raise DimensionError(f"radius must be finite and >= 0, got {self.radius}")
        object.__setattr__(self, "radius", radius)
        self.cost.check_dim(self.center.dim)

    @property
    def dim(self) -> int:
        return self.center.dim

    def downgraded(self, note: str) -> "AmbiguitySet":
        """Same ball flagged as an outer approximation, with the reason recorded."""
        notes = self.notes if note in self.notes else self.notes + (note,)
        if self.exactness == Exactness.EXACT:
            logger.info("ambiguity set becomes an outer approximation: %s", note)
        return replace(self, exactness=Exactness.OUTER, notes=notes)

    def distance(self, Q: DiscreteDistribution) -> float:
        return ot_discrepancy(self.cost, self.center, Q)[0]

    def contains(self, Q: DiscreteDistribution, tol: Optional[float] = None) -> bool:
        return contains(self, Q, tol)

    def translated(self, y) -> "AmbiguitySet":
        return replace(self, center=convolve_delta(y, self.center))

    def absorb_scale(self) -> "AmbiguitySet":
        """
        Rewrite a ball whose cost pre-map is s*I (s > 0) with the plain cost.

        ||s z||^p <= eps  is  ||z||^p <= eps / s^p, so the radius is rescaled.

        Raises:
            CostKindError: if the pre-map is not a positive multiple of the identity
        """
        matrix = self.cost.matrix
        if matrix is None:
            return self
        rows, cols = matrix.shape
        scale = float(matrix[0, 0])
        if rows != cols or scale <= 0 or not np.allclose(
            matrix, scale * np.eye(rows), rtol=0.0, atol=LINALG_CONFIG["scalar_identity_tol"]
        ):
            raise CostKindError("cost pre-map is not a positive multiple of the identity")
        return replace(
            self,
            cost=replace(self.cost, matrix=None),
            radius=self.radius / scale ** self.cost.power,
        )


def contains(ball: AmbiguitySet, Q: DiscreteDistribution, tol: Optional[float] = None) -> bool:
    """True iff T_c(center, Q) <= radius + tol."""
    tol = TRANSPORT_CONFIG["membership_tol"] if tol is None else tol
    if Q.dim != ball.dim:
        raise DimensionError(f"ball has dimension {ball.dim}, distribution has {Q.dim}")
    return ball.distance(Q) <= ball.radius + tol
