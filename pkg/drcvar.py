"""
Distributionally robust CVaR constraints over OT ambiguity sets.

For a max-affine loss l(x) = max_j a_j'x + b_j and a state ball with cost
||M z||^2 (M = D_lift^+ of full column rank) and radius eps_t, the worst-case
CVaR at level gamma is

    inf_{lam > 0}  lam * eps_t + CVaR_gamma( max_j a_j'x_i + b_j + gamma q_j / (4 lam) )

with q_j = alpha_j' Qc alpha_j, alpha_j = a_j / gamma and Qc = (M'M)^{-1}.
The constraint "worst-case CVaR <= 0" is the feasibility of the
deterministic system built by build_gamma:

    risk_budget:  lam eps_t N + sum_i N p_i s_i <= 0
    cell[i][j]:   alpha_j'x_i + beta_j(tau) + q_j / (4 lam) <= s_i,   j = 1..J+1

For fixed lam every row is affine in (tau, s, decision), so the inner
problems are LPs (HiGHS) or, for the energy objective, a QP (OSQP); the
outer search over lam is a log-grid scan refined by golden section.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import osqp
from scipy import sparse
from scipy.optimize import linprog

from config import format_float, solver_option
from errors import (
    ConvergenceError,
    CostKindError,
    DimensionError,
    LambdaClampError,
    ParameterError,
    RankDeficientError,
    SolverError,
)
from transport import AmbiguitySet, CostKind

logger = logging.getLogger(__name__)

_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0

_QP_SOLVED = osqp.constant("OSQP_SOLVED")
_QP_INACCURATE = osqp.constant("OSQP_SOLVED_INACCURATE")
_QP_MAX_ITER = osqp.constant("OSQP_MAX_ITER_REACHED")
_QP_INFEASIBLE = frozenset(osqp.constant(name) for name in (
    "OSQP_PRIMAL_INFEASIBLE",
    "OSQP_PRIMAL_INFEASIBLE_INACCURATE",
    "OSQP_DUAL_INFEASIBLE",
    "OSQP_DUAL_INFEASIBLE_INACCURATE",
))


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not 0.0 < gamma < 1.0:
        raise ParameterError(f"risk level gamma must lie in (0, 1), got {gamma}")
    return gamma


def cvar_with_tau(values, weights=None, gamma: float = 0.05) -> Tuple[float, float]:
    """
    CVaR_gamma of a discrete random variable and its smallest minimizing tau.

    CVaR_gamma(f) = min_tau tau + E[max(0, f - tau)] / gamma; the smallest
    minimizer is the lower (1 - gamma)-quantile of f.

    Returns:
        Tuple of (cvar, tau)
    """
    gamma = _check_gamma(gamma)
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        raise DimensionError("CVaR of an empty sample")
    weights = np.full(values.size, 1.0 / values.size) if weights is None else np.asarray(weights, dtype=float)
    if weights.shape != values.shape:
        raise DimensionError(f"{weights.size} weights for {values.size} values")
    tol = solver_option("probability_tol")
    if np.any(weights < -tol) or abs(float(weights.sum()) - 1.0) > tol:
        raise ParameterError(f"CVaR weights must be a probability vector, got sum {weights.sum():.17g}")
    order = np.argsort(values, kind="stable")
    cumulative = np.cumsum(weights[order])
    k = int(np.searchsorted(cumulative, 1.0 - gamma - 1e-12, side="left"))
    tau = float(values[order[min(k, values.size - 1)]])
    excess = np.maximum(values - tau, 0.0)
    return tau + float(weights @ excess) / gamma, tau


def cvar(values, weights=None, gamma: float = 0.05) -> float:
    """Conditional value at risk at level gamma (mean of the worst gamma-tail)."""
    return cvar_with_tau(values, weights, gamma)[0]


@dataclass(frozen=True, eq=False)
class Polytope:
    """
    Polyhedron {x : max_j a_j'x + b_j <= 0}.

    Attributes:
        directions: (J, d) array of a_j
        offsets: (J,) array of b_j
    """

    directions: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        directions = np.atleast_2d(np.array(self.directions, dtype=float))
        offsets = np.array(self.offsets, dtype=float).reshape(-1)
        if directions.shape[0] == 0 or directions.shape[1] == 0:
            raise DimensionError("a polytope needs at least one halfspace")
        if offsets.size != directions.shape[0]:
            raise DimensionError(f"{offsets.size} offsets for {directions.shape[0]} directions")
        directions.setflags(write=False)
        offsets.setflags(write=False)
        object.__setattr__(self, "directions", directions)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def box(cls, lower, upper) -> "Polytope":
        """Axis-aligned box lower <= x <= upper."""
        lower = np.asarray(lower, dtype=float).reshape(-1)
        upper = np.asarray(upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape or np.any(lower > upper):
            raise DimensionError("box bounds must match and satisfy lower <= upper")
        eye = np.eye(lower.size)
        return cls(np.vstack([eye, -eye]), np.concatenate([-upper, lower]))

    @property
    def dim(self) -> int:
        return self.directions.shape[1]

    @property
    def count(self) -> int:
        return self.directions.shape[0]

    def with_offsets(self, offsets) -> "Polytope":
        return Polytope(self.directions, offsets)

    def loss(self, x) -> np.ndarray:
        """Max-affine loss max_j a_j'x + b_j, per row of x."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise DimensionError(f"points have dimension {x.shape[1]}, polytope has {self.dim}")
        return np.max(x @ self.directions.T + self.offsets, axis=1)

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        return self.loss(x) <= tol

    def vertices_2d(self, tol: float = 1e-9) -> np.ndarray:
        """Vertices of a bounded planar polytope in counter-clockwise order."""
        if self.dim != 2:
            raise DimensionError("vertices are only computed in the plane")
        points = []
        for j in range(self.count):
            for k in range(j + 1, self.count):
                system = self.directions[[j, k]]
                if abs(np.linalg.det(system)) < 1e-12:
                    continue
                point = np.linalg.solve(system, -self.offsets[[j, k]])
                if self.loss(point)[0] <= tol:
                    points.append(point)
        if not points:
            return np.empty((0, 2))
        points = np.unique(np.round(np.asarray(points), 12), axis=0)
        center = points.mean(axis=0)
        angles = np.arctan2(points[:, 1] - center[1], points[:, 0] - center[0])
        return points[np.argsort(angles)]


class DecisionKind(str, Enum):
    NONE = "none"
    OFFSETS = "offsets"
    FEEDFORWARD = "feedforward"


@dataclass(frozen=True, eq=False)
class GammaProgram:
    """
    Deterministic reformulation of the worst-case CVaR constraint.

    Variables are tau, s_1..s_N and an optional decision block: the polytope
    offsets b (OFFSETS) or the stacked feedforward v entering the atoms as
    x_i + input_map @ v (FEEDFORWARD).

    Attributes:
        atoms: (N, d) center atoms x_i
        weights: (N,) center weights p_i
        directions: (J, d) a_j
        offsets: (J,) b_j (ignored for OFFSETS decisions)
        gamma: Risk level
        radius: eps_t
        quad_form: Qc = (M'M)^{-1}
        q: (J,) alpha_j' Qc alpha_j
        decision: Kind of decision block
        input_map: d x n_v matrix for FEEDFORWARD decisions
    """

    atoms: np.ndarray
    weights: np.ndarray
    directions: np.ndarray
    offsets: np.ndarray
    gamma: float
    radius: float
    quad_form: np.ndarray
    q: np.ndarray
    decision: DecisionKind = DecisionKind.NONE
    input_map: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def count(self) -> int:
        return self.directions.shape[0]

    @property
    def decision_size(self) -> int:
        if self.decision == DecisionKind.OFFSETS:
            return self.count
        if self.decision == DecisionKind.FEEDFORWARD:
            return self.input_map.shape[1]
        return 0

    @property
    def variable_count(self) -> int:
        return 1 + self.size + self.decision_size

    def is_degenerate(self) -> bool:
        """True when the lam search collapses (eps_t = 0 or every q_j = 0)."""
        return self.radius == 0.0 or not np.any(self.q > 0.0)

    def limit_lambda(self) -> float:
        """Multiplier of the analytic branch: inf for eps_t = 0, else 0."""
        return np.inf if self.radius == 0.0 else 0.0

    def fix(self, decision) -> "GammaProgram":
        """Substitute a decision value, leaving a decision-free program."""
        if self.decision == DecisionKind.NONE:
            return self
        decision = np.asarray(decision, dtype=float).reshape(-1)
        if decision.size != self.decision_size:
            raise DimensionError(f"decision must have length {self.decision_size}, got {decision.size}")
        if self.decision == DecisionKind.OFFSETS:
            return replace(self, offsets=decision, decision=DecisionKind.NONE)
        return replace(
            self,
            atoms=self.atoms + self.input_map @ decision,
            decision=DecisionKind.NONE,
            input_map=None,
        )

    def _q_term(self, lam: float) -> np.ndarray:
        if np.isinf(lam):
            return np.zeros_like(self.q)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.q > 0.0, self.q / (4.0 * lam), 0.0)

    def _budget_term(self, lam: float) -> float:
        if self.radius == 0.0 or lam == 0.0:
            return 0.0
        return lam * self.radius

    def matrix(self, include_budget: bool = True) -> np.ndarray:
        """
        Coefficients over [tau, s_1..s_N, decision] of every row.

        Rows are cell[i][j] in i-major order (j = J is the tau row), followed by
        risk_budget.
        """
        N, J, g = self.size, self.count, self.gamma
        rows = np.zeros((N * (J + 1) + int(include_budget), self.variable_count))
        for i in range(N):
            base = i * (J + 1)
            rows[base:base + J, 0] = (g - 1.0) / g
            rows[base:base + J + 1, 1 + i] = -1.0
            rows[base + J, 0] = 1.0
            if self.decision == DecisionKind.OFFSETS:
                rows[base:base + J, 1 + N:] = np.eye(J) / g
            elif self.decision == DecisionKind.FEEDFORWARD:
                rows[base:base + J, 1 + N:] = self.directions @ self.input_map / g
        if include_budget:
            rows[-1, 1:1 + N] = N * self.weights
        return rows

    def rhs(self, lam: float, include_budget: bool = True) -> np.ndarray:
        """Right-hand sides of the rows of matrix() at multiplier lam."""
        N, J, g = self.size, self.count, self.gamma
        affine = self.atoms @ self.directions.T / g + self._q_term(lam)
        if self.decision != DecisionKind.OFFSETS:
            affine = affine + self.offsets / g
        cells = np.hstack([-affine, np.zeros((N, 1))]).reshape(-1)
        if not include_budget:
            return cells
        return np.append(cells, -self._budget_term(lam) * N)

    def losses(self, lam: float) -> np.ndarray:
        """Per-atom max_j a_j'x_i + b_j + gamma q_j / (4 lam)."""
        if self.decision != DecisionKind.NONE:
            raise DimensionError("fix the decision before evaluating losses")
        return np.max(self.atoms @ self.directions.T + self.offsets + self.gamma * self._q_term(lam), axis=1)

    def dual_value(self, lam: float) -> float:
        """lam eps_t + CVaR_gamma of the lam-inflated losses."""
        return self._budget_term(lam) + cvar(self.losses(lam), self.weights, self.gamma)

    def worst_case_cvar(self, options: Optional[Dict] = None) -> float:
        return self.worst_case(options)[0]

    def worst_case(self, options: Optional[Dict] = None) -> Tuple[float, float]:
        """
        Worst-case CVaR and the multiplier attaining it.

        Raises:
            LambdaClampError: if the optimal multiplier pins a search clamp
        """
        if self.is_degenerate():
            lam = self.limit_lambda()
            return self.dual_value(lam), lam
        search = _LogLambdaSearch(self.dual_value, options)
        lam, value = search.run()
        return value, lam

    def dump(self, lam: float) -> str:
        """Listing of all rows at multiplier lam with 17 significant digits."""
        names = ["tau"] + [f"s[{i}]" for i in range(self.size)]
        prefix = "b" if self.decision == DecisionKind.OFFSETS else "v"
        names += [f"{prefix}[{k}]" for k in range(self.decision_size)]
        matrix, rhs = self.matrix(), self.rhs(lam)
        labels = [f"cell[{i}][{j}]" for i in range(self.size) for j in range(self.count + 1)]
        lines = []
        for label, row, bound in zip(["risk_budget"] + labels, np.vstack([matrix[-1:], matrix[:-1]]),
                                     np.append(rhs[-1:], rhs[:-1])):
            terms = " ".join(
                f"{'+' if coef >= 0 else '-'} {format_float(abs(coef))}*{name}"
                for coef, name in zip(row, names) if coef != 0.0
            )
            lines.append(f"{label}: {terms} <= {format_float(bound)}")
        return "\n".join(lines)


def _state_quad_form(state_ball: AmbiguitySet) -> np.ndarray:
    cost = state_ball.cost
    if cost.kind != CostKind.SQ_EUCLID_COMPOSED:
        raise CostKindError("DR-CVaR constraints need a squared Euclidean composed cost")
    if cost.matrix is None:
        return np.eye(state_ball.dim)
    _, s, vt = np.linalg.svd(cost.matrix, full_matrices=False)
    if s.size < state_ball.dim or s[-1] <= 1e-12 * s[0]:
        raise RankDeficientError("the noise-to-state map must have full row rank")
    quad_form = (vt.T / s ** 2) @ vt
    return 0.5 * (quad_form + quad_form.T)


def build_gamma(state_ball: AmbiguitySet, poly: Polytope, gamma: float,
                decision: DecisionKind = DecisionKind.NONE,
                input_map: Optional[np.ndarray] = None) -> GammaProgram:
    """
    Deterministic constraint system of the worst-case CVaR constraint.

    Args:
        state_ball: State ambiguity set with cost ||D_lift^+ z||^2
        poly: Constraint polytope (its offsets are ignored for OFFSETS decisions)
        gamma: Risk level in (0, 1)
        decision: Optional decision block
        input_map: B_lift for FEEDFORWARD decisions

    Raises:
        RankDeficientError: if D_lift is not full row rank
    """
    gamma = _check_gamma(gamma)
    if poly.dim != state_ball.dim:
        raise DimensionError(f"polytope has dimension {poly.dim}, state ball has {state_ball.dim}")
    quad_form = _state_quad_form(state_ball)
    alphas = poly.directions / gamma
    q = np.maximum(np.einsum("jk,kl,jl->j", alphas, quad_form, alphas), 0.0)
    decision = DecisionKind(decision)
    if decision == DecisionKind.FEEDFORWARD:
        if input_map is None:
            raise DimensionError("feedforward decisions need the input map")
        input_map = np.atleast_2d(np.asarray(input_map, dtype=float))
        if input_map.shape[0] != state_ball.dim:
            raise DimensionError(f"input map has {input_map.shape[0]} rows, state has {state_ball.dim}")
    else:
        input_map = None
    return GammaProgram(
        atoms=np.array(state_ball.center.atoms),
        weights=np.array(state_ball.center.weights),
        directions=np.array(poly.directions),
        offsets=np.array(poly.offsets),
        gamma=gamma,
        radius=state_ball.radius,
        quad_form=quad_form,
        q=q,
        decision=decision,
        input_map=input_map,
    )


def worst_case_cvar(state_ball: AmbiguitySet, poly: Polytope, gamma: float,
                    options: Optional[Dict] = None) -> float:
    """Worst-case CVaR of the polytope loss over the state ambiguity set."""
    return build_gamma(state_ball, poly, gamma).worst_case_cvar(options)


class ObjectiveKind(str, Enum):
    FEASIBILITY = "feasibility"
    CONSTANT = "constant"
    MAX_SUM = "max_sum"
    MIN_ENERGY = "min_energy"


@dataclass(frozen=True)
class Objective:
    """
    Objective of the inner problems.

    FEASIBILITY minimizes the risk budget margin (decision free if present);
    its value is the worst-case CVaR at the given multiplier. MAX_SUM
    maximizes the sum of the decision entries, MIN_ENERGY minimizes their
    squared norm, CONSTANT accepts any feasible point.
    """

    kind: ObjectiveKind

    @classmethod
    def feasibility(cls) -> "Objective":
        return cls(ObjectiveKind.FEASIBILITY)

    @classmethod
    def constant(cls) -> "Objective":
        return cls(ObjectiveKind.CONSTANT)

    @classmethod
    def max_sum(cls) -> "Objective":
        return cls(ObjectiveKind.MAX_SUM)

    @classmethod
    def min_energy(cls) -> "Objective":
        return cls(ObjectiveKind.MIN_ENERGY)

    @property
    def quadratic(self) -> bool:
        return self.kind == ObjectiveKind.MIN_ENERGY

    def key(self, value: float) -> float:
        """Value mapped to a quantity to minimize."""
        return -value if self.kind == ObjectiveKind.MAX_SUM else value


@dataclass(frozen=True, eq=False)
class SolveReport:
    """
    Outcome of an inner or outer solve.

    Attributes:
        status: "optimal", "infeasible" or "max-iter"
        objective: Objective value in its natural sense (sum of offsets,
            squared input norm, worst-case CVaR for feasibility)
        lam: Multiplier of the reported solution (inf / 0 on the analytic branch)
        tau: CVaR threshold
        s: Per-atom epigraph variables
        decision: Decision block (empty when absent)
        margin: Risk budget left-hand side lam eps_t N + sum_i N p_i s_i
        trace: (lam, objective) pairs visited by the outer search
        wall_time: Seconds spent
        iterations: Inner solves performed
    """

    status: str
    objective: float
    lam: float
    tau: float = float("nan")
    s: np.ndarray = field(default_factory=lambda: np.empty(0))
    decision: np.ndarray = field(default_factory=lambda: np.empty(0))
    margin: float = float("nan")
    trace: Tuple[Tuple[float, float], ...] = ()
    wall_time: float = 0.0
    iterations: int = 1

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _report_from_solution(program: GammaProgram, objective: Objective, lam: float,
                          z: np.ndarray, options: Optional[Dict]) -> SolveReport:
    N = program.size
    tau, s, decision = float(z[0]), np.array(z[1:1 + N]), np.array(z[1 + N:])
    margin = program._budget_term(lam) * N + float(N * program.weights @ s)
    if objective.kind == ObjectiveKind.FEASIBILITY:
        value = margin / N
        status = "optimal" if value <= solver_option("feasibility_tol", options) else "infeasible"
    else:
        if objective.kind == ObjectiveKind.MAX_SUM:
            value = float(decision.sum())
        elif objective.kind == ObjectiveKind.MIN_ENERGY:
            value = float(decision @ decision)
        else:
            value = 0.0
        status = "optimal"
    return SolveReport(status, value, lam, tau, s, decision, margin)


def _solve_lp(program: GammaProgram, objective: Objective, lam: float,
              options: Optional[Dict]) -> SolveReport:
    feasibility = objective.kind == ObjectiveKind.FEASIBILITY
    N = program.size
    c = np.zeros(program.variable_count)
    if feasibility:
        c[1:1 + N] = N * program.weights
    elif objective.kind == ObjectiveKind.MAX_SUM:
        c[1 + N:] = -1.0
    matrix = program.matrix(include_budget=not feasibility)
    rhs = program.rhs(lam, include_budget=not feasibility)
    res = linprog(c=c, A_ub=matrix, b_ub=rhs, bounds=[(None, None)] * c.size,
                  method=solver_option("highs_method", options))
    if res.status == 2:
        return SolveReport("infeasible", np.inf, lam)
    if res.status == 1:
        return SolveReport("max-iter", np.inf, lam)
    if res.status == 3 and feasibility:
        # the free decision drives every row to -inf
        return SolveReport("optimal", -np.inf, lam, margin=-np.inf)
    if res.status != 0:
        raise SolverError(f"LP backend failed at lam={lam!r}: {res.message}")
    return _report_from_solution(program, objective, lam, res.x, options)


class _EnergyQp:
    """OSQP workspace for the energy objective; only the bounds depend on lam."""

    def __init__(self, program: GammaProgram, options: Optional[Dict]):
        if program.decision == DecisionKind.NONE:
            raise DimensionError("the energy objective needs a decision block")
        self.program = program
        self.options = options
        n = program.variable_count
        weights = np.zeros(n)
        weights[1 + program.size:] = 2.0
        self.matrix = program.matrix()
        settings = dict(solver_option("osqp", options))
        self.solver = osqp.OSQP()
        self.solver.setup(
            sparse.csc_matrix(np.diag(weights)),
            np.zeros(n),
            sparse.csc_matrix(self.matrix),
            np.full(self.matrix.shape[0], -np.inf),
            program.rhs(1.0),
            **settings,
        )

    def solve(self, lam: float) -> SolveReport:
        self.solver.update(u=self.program.rhs(lam))
        res = self.solver.solve(raise_error=False)
        status = res.info.status_val
        if status in _QP_INFEASIBLE:
            return SolveReport("infeasible", np.inf, lam)
        if status == _QP_MAX_ITER:
            return SolveReport("max-iter", np.inf, lam)
        if status == _QP_INACCURATE:
            logger.warning("QP solved inaccurately at lam=%.6g", lam)
        elif status != _QP_SOLVED:
            raise SolverError(f"QP backend returned {res.info.status!r} at lam={lam!r}")
        return _report_from_solution(self.program, Objective.min_energy(), lam, np.asarray(res.x), self.options)


def solve_fixed_lambda(program: GammaProgram, lam: float, objective: Objective,
                       options: Optional[Dict] = None) -> SolveReport:
    """
    Solve the inner problem at a fixed multiplier.

    Affine objectives go to the HiGHS dual simplex, the energy objective to
    OSQP. lam = inf (eps_t = 0) and lam = 0 (all q_j = 0) select the analytic
    limits of the q_j / (4 lam) and lam eps_t terms.
    """
    if not (lam > 0.0 or (lam == 0.0 and not np.any(program.q > 0.0))):
        raise ParameterError(f"multiplier must be positive, got {lam}")
    start = time.perf_counter()
    if objective.quadratic:
        report = _EnergyQp(program, options).solve(lam)
    else:
        report = _solve_lp(program, objective, lam, options)
    return replace(report, wall_time=time.perf_counter() - start)


class _LogLambdaSearch:
    """
    Minimize a function of lam that is unimodal in log10(lam).

    A log grid over the clamps locates the best point; golden section then
    refines the bracket formed by its neighbours. Infinite values mark
    infeasible multipliers.
    """

    def __init__(self, evaluate: Callable[[float], float], options: Optional[Dict] = None):
        self.evaluate = evaluate
        self.options = options
        self.lo = np.log10(solver_option("lambda_min", options))
        self.hi = np.log10(solver_option("lambda_max", options))
        self.trace: List[Tuple[float, float]] = []
        self.best_x = None
        self.best_f = np.inf

    def _f(self, x: float) -> float:
        value = float(self.evaluate(10.0 ** x))
        if np.isnan(value):
            value = np.inf
        self.trace.append((10.0 ** x, value))
        if value < self.best_f:
            self.best_x, self.best_f = x, value
        return value

    def scan(self, lo: Optional[float] = None, hi: Optional[float] = None) -> Optional[Tuple[float, float]]:
        """Evaluate the grid; return the bracket around the best point, None if all infinite."""
        lo = self.lo if lo is None else lo
        hi = self.hi if hi is None else hi
        grid = np.linspace(lo, hi, solver_option("lambda_scan_points", self.options))
        values = np.array([self._f(x) for x in grid])
        finite = np.isfinite(values)
        if not finite.any():
            return None
        best = values[finite].min()
        rel = solver_option("scan_tie_rtol", self.options)
        ties = np.flatnonzero(finite & (values <= best + rel * max(1.0, abs(best))))
        k = int(ties[len(ties) // 2])
        self.best_x, self.best_f = grid[k], values[k]
        return grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]

    def golden(self, a: float, b: float) -> None:
        tol = solver_option("golden_tol", self.options)
        max_iters = solver_option("outer_max_iters", self.options)
        c, d = b - _INV_PHI * (b - a), a + _INV_PHI * (b - a)
        fc, fd = self._f(c), self._f(d)
        for _ in range(max_iters):
            if b - a <= tol:
                return
            both_infinite = not np.isfinite(fc) and not np.isfinite(fd)
            if both_infinite or fc == fd:
                # the finite region (or the flat minimum) holds best_x
                if both_infinite and self.best_x < c:
                    b = c
                elif both_infinite and self.best_x > d:
                    a = d
                else:
                    a, b = c, d
                c, d = b - _INV_PHI * (b - a), a + _INV_PHI * (b - a)
                fc, fd = self._f(c), self._f(d)
            elif fc <= fd:
                b, d, fd = d, c, fc
                c = b - _INV_PHI * (b - a)
                fc = self._f(c)
            else:
                a, c, fc = c, d, fd
                d = a + _INV_PHI * (b - a)
                fd = self._f(d)
        raise ConvergenceError(f"lambda search did not converge in {max_iters} iterations")

    def check_clamps(self) -> None:
        margin = solver_option("clamp_rel_margin", self.options)
        if self.best_x - self.lo <= margin or self.hi - self.best_x <= margin:
            raise LambdaClampError(
                f"optimal multiplier {10.0 ** self.best_x:.6g} pins the search clamp "
                f"[{10.0 ** self.lo:.3g}, {10.0 ** self.hi:.3g}]"
            )

    def run(self) -> Tuple[float, float]:
        bracket = self.scan()
        if bracket is None:
            raise ConvergenceError("no multiplier gives a finite value")
        self.golden(*bracket)
        self.check_clamps()
        return 10.0 ** self.best_x, self.best_f


def solve_outer(program: GammaProgram, objective: Objective,
                options: Optional[Dict] = None) -> SolveReport:
    """
    Optimize over the multiplier lam as well.

    Returns the best inner solution found. When no scanned multiplier is
    feasible, a phase-one problem (minimize the risk budget with the decision
    free) either certifies infeasibility or locates a feasible multiplier
    around which the search is repeated.

    Raises:
        LambdaClampError: if the optimum pins lam_min or lam_max
    """
    start = time.perf_counter()
    if program.is_degenerate():
        report = solve_fixed_lambda(program, program.limit_lambda(), objective, options)
        return replace(report, wall_time=time.perf_counter() - start)

    qp = _EnergyQp(program, options) if objective.quadratic else None
    reports: Dict[float, SolveReport] = {}

    def inner(lam: float) -> float:
        report = qp.solve(lam) if qp is not None else _solve_lp(program, objective, lam, options)
        reports[lam] = report
        if report.status != "optimal" and objective.kind != ObjectiveKind.FEASIBILITY:
            return np.inf
        return objective.key(report.objective)

    search = _LogLambdaSearch(inner, options)
    bracket = search.scan()
    if bracket is None:
        phase_one = _LogLambdaSearch(
            lambda lam: _solve_lp(program, Objective.feasibility(), lam, options).objective, options
        )
        phase_one.scan()
        best = phase_one.best_f
        logger.debug("phase one: best worst-case CVaR %.17g", best)
        if best > solver_option("feasibility_tol", options):
            return SolveReport(
                "infeasible", np.inf, 10.0 ** phase_one.best_x,
                trace=tuple(search.trace + phase_one.trace),
                wall_time=time.perf_counter() - start,
                iterations=len(search.trace) + len(phase_one.trace),
            )
        bracket = search.scan(max(search.lo, phase_one.best_x - 1.0), min(search.hi, phase_one.best_x + 1.0))
        if bracket is None:
            raise ConvergenceError("phase one found a feasible multiplier the inner solver rejects")
    search.golden(*bracket)
    search.check_clamps()
    best = reports[10.0 ** search.best_x]
    logger.debug("outer search: lam %.6g, objective %.17g after %d solves",
                 best.lam, best.objective, len(search.trace))
    return replace(
        best,
        trace=tuple(search.trace),
        wall_time=time.perf_counter() - start,
        iterations=len(search.trace),
    )
