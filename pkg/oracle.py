"""
Brute-force verifiers for the library's numerical claims.

Each oracle recomputes a quantity along an independent route (exhaustive
permutations, a dense transportation LP through HiGHS, dense grids) and
compares it with the library result:

- OT discrepancies: permutation enumeration and the dense LP
- linear propagation: paired LP solves before and after the map
- product lifting: enumerated products against the lifted radius
- worst-case CVaR: a log-lambda x tau grid over the dual objective
- naive propagation foils: witness distributions for the pitfalls of
  reusing the cost unchanged or inflating the radius by a Lipschitz constant

The oracles are slow on purpose and are meant for small instances only.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.stats import norm

from config import LINALG_CONFIG, ORACLE_CONFIG, SOLVER_CONFIG, TRANSPORT_CONFIG
from distributions import DiscreteDistribution, convolve_delta, dirac, empirical, product_power, pushforward
from drcvar import DecisionKind, Objective, Polytope, build_gamma, solve_outer
from errors import CostKindError, DimensionError, OtPropError, SolverError
from propagation import propagate_linear, pseudoinverse
from transport import AmbiguitySet, Exactness, TransportationCost, ot_discrepancy

logger = logging.getLogger(__name__)

PERMUTATION_LIMIT = 8


@dataclass(frozen=True)
class CheckResult:
    """
    Outcome of one oracle check.

    Attributes:
        name: Check identifier
        passed: Whether every trial met its tolerance
        trials: Number of trials run
        worst_gap: Largest observed violation or discrepancy
        detail: Human-readable summary
    """

    name: str
    passed: bool
    trials: int
    worst_gap: float
    detail: str = ""


def _pair_cost(c: TransportationCost, x: np.ndarray, y: np.ndarray) -> float:
    z = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if c.matrix is not None:
        z = c.matrix @ z
    return float(np.sqrt(z @ z)) ** c.power


def _dense_costs(c: TransportationCost, P: DiscreteDistribution, Q: DiscreteDistribution) -> np.ndarray:
    if P.dim != Q.dim:
        raise DimensionError(f"distributions have dimensions {P.dim} and {Q.dim}")
    return np.array([[_pair_cost(c, x, y) for y in Q.atoms] for x in P.atoms])


def permutation_ot(c: TransportationCost, P: DiscreteDistribution, Q: DiscreteDistribution) -> float:
    """
    OT discrepancy of two uniform distributions with the same atom count by
    enumerating every permutation coupling.

    Raises:
        DimensionError: if the marginals are not uniform of equal size n <= 8
    """
    n = P.size
    if Q.size != n or n > PERMUTATION_LIMIT:
        raise DimensionError(f"permutation oracle needs equal sizes up to {PERMUTATION_LIMIT}, got {P.size}, {Q.size}")
    for weights in (P.weights, Q.weights):
        if not np.allclose(weights, 1.0 / n, rtol=0.0, atol=1e-12):
            raise DimensionError("permutation oracle needs uniform weights")
    costs = _dense_costs(c, P, Q)
    rows = np.arange(n)
    best = min(costs[rows, list(perm)].sum() for perm in itertools.permutations(range(n)))
    return float(best) / n


def lp_ot(c: TransportationCost, P: DiscreteDistribution, Q: DiscreteDistribution) -> float:
    """
    OT discrepancy as a dense transportation LP solved by HiGHS.

    Raises:
        SolverError: if the LP backend does not report an optimum
    """
    costs = _dense_costs(c, P, Q)
    n, m = costs.shape
    A_eq = []
    for i in range(n):
        row = np.zeros((n, m))
        row[i, :] = 1.0
        A_eq.append(row.reshape(-1))
    for j in range(m):
        row = np.zeros((n, m))
        row[:, j] = 1.0
        A_eq.append(row.reshape(-1))
    A_eq = np.array(A_eq)
    b_eq = np.concatenate([P.weights, Q.weights])
    # one marginal row is redundant
    res = linprog(costs.reshape(-1), A_eq=A_eq[:-1], b_eq=b_eq[:-1], bounds=(0, None), method="highs")
    if res.status != 0:
        raise SolverError(f"transportation LP failed: {res.message}")
    return float(res.fun)


def _random_distribution(rng: np.random.Generator, size: int, dim: int, uniform: bool = False) -> DiscreteDistribution:
    atoms = rng.standard_normal((size, dim))
    if uniform:
        return empirical(atoms)
    weights = rng.uniform(0.2, 1.0, size)
    return DiscreteDistribution(atoms, weights / weights.sum())


def _perturbed(rng: np.random.Generator, P: DiscreteDistribution, eps: float) -> DiscreteDistribution:
    """Random Q whose distance to P is of the order of eps."""
    size = int(rng.integers(1, 5))
    picks = rng.choice(P.size, size=size, p=P.weights)
    scale = np.sqrt(eps / P.dim) * rng.uniform(0.3, 1.7)
    weights = rng.uniform(0.2, 1.0, size)
    return DiscreteDistribution(P.atoms[picks] + scale * rng.standard_normal((size, P.dim)), weights / weights.sum())


def propagation_trial(P: DiscreteDistribution, A, eps: float, trials: int = 20,
                      rng: Optional[np.random.Generator] = None,
                      cost: Optional[TransportationCost] = None) -> CheckResult:
    """
    Compare membership in a ball and in its propagated image.

    For square invertible A the discrepancies before and after the map must
    coincide (the balls correspond one to one). For any other A the
    propagated discrepancy may only be smaller, so every Q in the ball maps
    into the propagated ball.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    cost = TransportationCost.squared_euclidean() if cost is None else cost
    matrix = np.atleast_2d(np.asarray(A, dtype=float))
    invertible = matrix.shape[0] == matrix.shape[1] and np.linalg.matrix_rank(matrix) == matrix.shape[0]
    ball = AmbiguitySet(P, cost, eps)
    image = propagate_linear(ball, matrix)
    tol = 1e-6 if invertible else TRANSPORT_CONFIG["reference_tol"]

    worst, agreements = 0.0, 0
    for _ in range(trials):
        Q = _perturbed(rng, P, eps)
        before = lp_ot(cost, P, Q)
        after = lp_ot(image.cost, image.center, pushforward(matrix, Q))
        gap = abs(after - before) if invertible else max(0.0, after - before) / max(1.0, before)
        worst = max(worst, gap)
        agreements += int((before <= eps) == (after <= eps))
    kind = "equality" if invertible else "inclusion"
    passed = worst <= tol
    if invertible and image.exactness != Exactness.EXACT:
        passed = False
    logger.debug("propagation %s trials: worst gap %.3e over %d trials", kind, worst, trials)
    return CheckResult(
        f"propagation-{kind}", passed, trials, worst,
        f"{agreements}/{trials} membership agreements, exactness {image.exactness.value}",
    )


def product_lifting_trial(P: DiscreteDistribution, Q: DiscreteDistribution, t: int = 2,
                          cost: Optional[TransportationCost] = None) -> CheckResult:
    """
    OT(P^t, Q^t) <= t OT(P, Q) on enumerated products.

    The reported gap is |OT(P^t, Q^t) - t OT(P, Q)|; it vanishes for the
    squared Euclidean cost, while only the inequality is required to pass.
    """
    cost = TransportationCost.squared_euclidean() if cost is None else cost
    single = lp_ot(cost, P, Q)
    lifted = lp_ot(cost, product_power(P, t), product_power(Q, t))
    excess = lifted - t * single
    return CheckResult(
        "product-lifting", excess <= TRANSPORT_CONFIG["reference_tol"] * max(1.0, t * single), 1, abs(excess),
        f"OT(P^{t}, Q^{t}) = {lifted:.12g}, {t} OT(P, Q) = {t * single:.12g}",
    )


@dataclass(frozen=True, eq=False)
class Witness:
    """
    Distribution exposing a defect of a naive ambiguity set.

    Attributes:
        kind: "off-range", "stretched" or "lipschitz"
        distribution: Candidate distribution of the propagated variable
        true_member: Whether it is the image of some member of the original ball
        naive_member: Membership in the ball around A#P with the unchanged cost
        lipschitz_member: Membership in the ball with the Lipschitz-inflated radius
        propagated_member: Membership in the propagated ball
    """

    kind: str
    distribution: DiscreteDistribution
    true_member: bool
    naive_member: bool
    lipschitz_member: bool
    propagated_member: bool


@dataclass(frozen=True, eq=False)
class FoilReport:
    naive: AmbiguitySet
    lipschitz: AmbiguitySet
    propagated: AmbiguitySet
    witnesses: Tuple[Witness, ...] = field(default_factory=tuple)

    def witness(self, kind: str) -> Optional[Witness]:
        return next((w for w in self.witnesses if w.kind == kind), None)


def _member(ball: AmbiguitySet, Q: DiscreteDistribution) -> bool:
    return lp_ot(ball.cost, ball.center, Q) <= ball.radius + TRANSPORT_CONFIG["membership_tol"]


def naive_foil(P: DiscreteDistribution, A, eps: float,
               cost: Optional[TransportationCost] = None) -> FoilReport:
    """
    Witnesses separating the naive and Lipschitz sets from the true image set.

    A distribution is in the true image of the ball iff it is supported on
    range(A) and lies within eps of A#P under the composed cost. The
    witnesses are translates of A#P:

    - off-range: along a direction outside range(A), inside the naive ball
      (overestimation)
    - stretched: along the top singular direction, inside the true set but
      outside the naive ball (underestimation)
    - lipschitz: on the Lipschitz ball boundary along the least amplified
      direction, outside the true set

    Raises:
        CostKindError: if the cost has a pre-map
    """
    cost = TransportationCost.squared_euclidean() if cost is None else cost
    if cost.matrix is not None:
        raise CostKindError("naive foils are built for costs without a pre-map")
    matrix = np.atleast_2d(np.asarray(A, dtype=float))
    p = cost.power
    center = pushforward(matrix, P)
    u, s, _ = np.linalg.svd(matrix, full_matrices=True)
    sigma_max = float(s[0]) if s.size else 0.0
    rank = int(np.sum(s > LINALG_CONFIG["rank_rtol"] * max(sigma_max, 1e-300))) if sigma_max > 0 else 0
    composed = TransportationCost(cost.kind, matrix=np.linalg.pinv(matrix), power=p)

    naive = AmbiguitySet(center, cost, eps)
    lipschitz = AmbiguitySet(center, cost, eps * sigma_max ** p)
    propagated = propagate_linear(AmbiguitySet(P, cost, eps), matrix)

    def truly_reachable(Q: DiscreteDistribution) -> bool:
        if rank < matrix.shape[0]:
            left_null = u[:, rank:]
            if np.max(np.abs(Q.atoms @ left_null)) > 1e-9 * max(1.0, np.max(np.abs(Q.atoms))):
                return False
        return lp_ot(composed, center, Q) <= eps + TRANSPORT_CONFIG["membership_tol"]

    def build(kind: str, shift: np.ndarray) -> Witness:
        Q = convolve_delta(shift, center)
        return Witness(kind, Q, truly_reachable(Q), _member(naive, Q), _member(lipschitz, Q), _member(propagated, Q))

    witnesses = []
    if rank < matrix.shape[0]:
        direction = u[:, rank]
        witnesses.append(build("off-range", direction * (0.5 * eps) ** (1.0 / p)))
    if rank > 0 and sigma_max ** p * 0.9 > 1.0 + 1e-6:
        # |A^+ u_1| = 1 / sigma_max, so this shift costs 0.9 eps under the composed cost
        witnesses.append(build("stretched", u[:, 0] * sigma_max * (0.9 * eps) ** (1.0 / p)))
    if sigma_max > 0:
        k = rank if rank < matrix.shape[0] else rank - 1
        if rank < matrix.shape[0] or (sigma_max / s[k]) ** p * 0.99 > 1.0 + 1e-6:
            witnesses.append(build("lipschitz", u[:, k] * sigma_max * (0.99 * eps) ** (1.0 / p)))
    return FoilReport(naive, lipschitz, propagated, tuple(witnesses))


def tau_grid_cvar(values, weights, gamma: float, resolution: int = 200) -> float:
    """
    min over tau of tau + E[max(0, f - tau)] / gamma on a grid that includes
    the breakpoints (the values themselves).
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    taus = np.union1d(np.linspace(values.min(), values.max(), resolution), values)
    objective = taus + (np.maximum(values[None, :] - taus[:, None], 0.0) @ weights) / gamma
    return float(objective.min())


def cvar_grid(state_ball: AmbiguitySet, poly: Polytope, gamma: float, resolution: int = 200) -> float:
    """
    Worst-case CVaR by grid minimization of the dual objective over
    (log lambda, tau), refined by two finer passes around the best lambda.

    The result upper-bounds the true infimum.
    """
    if resolution < 50:
        raise DimensionError(f"grid resolution must be at least 50, got {resolution}")
    atoms, weights = state_ball.center.atoms, state_ball.center.weights
    base = poly.loss(atoms)
    if state_ball.radius == 0.0:
        return tau_grid_cvar(base, weights, gamma, resolution)

    M = np.eye(state_ball.dim) if state_ball.cost.matrix is None else state_ball.cost.matrix
    quad_form = np.linalg.inv(M.T @ M)
    q = np.einsum("jk,kl,jl->j", poly.directions, quad_form, poly.directions) / gamma ** 2
    affine = atoms @ poly.directions.T + poly.offsets
    eps_t = state_ball.radius
    if not np.any(q > 0.0):
        return tau_grid_cvar(base, weights, gamma, resolution)

    def dual(lam: float) -> float:
        losses = np.max(affine + gamma * q / (4.0 * lam), axis=1)
        return lam * eps_t + tau_grid_cvar(losses, weights, gamma, resolution)

    lo, hi = np.log10(SOLVER_CONFIG["lambda_min"]), np.log10(SOLVER_CONFIG["lambda_max"])
    grid = np.linspace(lo, hi, resolution)
    best = np.inf
    for _ in range(3):
        values = np.array([dual(10.0 ** x) for x in grid])
        k = int(np.argmin(values))
        best = min(best, float(values[k]))
        grid = np.linspace(grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)], resolution)
    return best


def gaussian_dirac_check(eps: float = 0.5, samples: int = 20_000,
                         rng: Optional[np.random.Generator] = None) -> CheckResult:
    """
    Distributions at squared-distance exactly eps from the Dirac at 0.

    - N(0, eps): second moment eps, checked by stratified Monte Carlo
      within 3 standard errors
    - the Dirac at sqrt(eps)
    - eps/n^2 delta_n + (1 - eps/n^2) delta_0, whose mass escapes as n grows
    """
    rng = np.random.default_rng(0) if rng is None else rng
    cost = TransportationCost.squared_euclidean()
    origin = dirac([0.0])

    # stratified uniforms through the inverse CDF
    uniforms = (np.arange(samples) + rng.uniform(size=samples)) / samples
    draws = np.sqrt(eps) * norm.ppf(uniforms)
    moment, _ = ot_discrepancy(cost, origin, empirical(draws.reshape(-1, 1)))
    stderr = float(np.std(draws ** 2)) / np.sqrt(samples)
    gaps = [abs(moment - eps) / (3.0 * stderr)]
    passed = gaps[0] <= 1.0

    point = lp_ot(cost, origin, dirac([np.sqrt(eps)]))
    gaps.append(abs(point - eps))
    passed = passed and gaps[-1] <= TRANSPORT_CONFIG["reference_tol"]

    for n in (2.0, 10.0, 100.0, 1000.0):
        mass = eps / n ** 2
        if mass >= 1.0:
            continue
        escaping = DiscreteDistribution([[n], [0.0]], [mass, 1.0 - mass])
        distance = lp_ot(cost, origin, escaping)
        gaps.append(abs(distance - eps))
        passed = passed and gaps[-1] <= TRANSPORT_CONFIG["reference_tol"] * max(1.0, eps)
    return CheckResult(
        "gaussian-dirac", passed, len(gaps), max(gaps[1:]),
        f"Monte Carlo second moment {moment:.6g} vs {eps:.6g} (stderr {stderr:.2e})",
    )


def _check_ot(rng: np.random.Generator, trials: int) -> CheckResult:
    worst, passed = 0.0, True
    for _ in range(trials):
        n, d = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        P = _random_distribution(rng, n, d, uniform=True)
        Q = _random_distribution(rng, n, d, uniform=True)
        cost = TransportationCost.squared_euclidean()
        value = ot_discrepancy(cost, P, Q)[0]
        exact_gap = abs(value - permutation_ot(cost, P, Q))
        lp_gap = abs(value - lp_ot(cost, P, Q))
        passed = passed and exact_gap <= TRANSPORT_CONFIG["lp_tol"] and lp_gap <= TRANSPORT_CONFIG["reference_tol"]
        worst = max(worst, exact_gap, lp_gap)
    return CheckResult("ot-permutation", passed, trials, worst)


def _check_ot_weighted(rng: np.random.Generator, trials: int) -> CheckResult:
    worst = 0.0
    for k in range(trials):
        d = int(rng.integers(1, 4))
        P = dirac(rng.standard_normal(d)) if k % 2 == 0 else _random_distribution(rng, int(rng.integers(2, 6)), d)
        Q = _random_distribution(rng, int(rng.integers(1, 6)), d)
        cost = TransportationCost.power_norm(1.0 + k % 3)
        worst = max(worst, abs(ot_discrepancy(cost, P, Q)[0] - lp_ot(cost, P, Q)))
    return CheckResult("ot-lp", worst <= TRANSPORT_CONFIG["reference_tol"], trials, worst)


def _check_penrose(rng: np.random.Generator, trials: int) -> CheckResult:
    worst = 0.0
    for k in range(trials):
        m, d = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        A = rng.standard_normal((m, d))
        if k % 3 == 0 and min(m, d) > 1:
            A = rng.standard_normal((m, 1)) @ rng.standard_normal((1, d))
        pinv = pseudoinverse(A)
        worst = max(worst, *pinv.residuals())
        if pinv.full_row_rank:
            direct = A.T @ np.linalg.inv(A @ A.T)
            worst = max(worst, float(np.linalg.norm(pinv.pinv - direct)) / max(1.0, float(np.linalg.norm(direct))))
    return CheckResult("penrose", worst <= LINALG_CONFIG["penrose_tol"], trials, worst)


def _check_scalar_examples(eps: float = 0.1) -> CheckResult:
    ball = AmbiguitySet(dirac([0.0]), TransportationCost.power_norm(1.0), eps)
    doubled = propagate_linear(ball, [[2.0]]).absorb_scale()
    collapsed = propagate_linear(ball, [[0.0]])
    gaps = [
        abs(doubled.radius - 2.0 * eps),
        float(np.max(np.abs(collapsed.center.atoms))),
        abs(collapsed.center.weights.sum() - 1.0),
    ]
    passed = (
        max(gaps) <= 1e-15
        and doubled.exactness == Exactness.EXACT
        and collapsed.exactness == Exactness.OUTER
        and collapsed.center.is_dirac()
    )
    return CheckResult("scalar-propagation", passed, 2, max(gaps), "A = 2 doubles the radius, A = 0 collapses")


def _check_foils(eps: float = 0.1) -> CheckResult:
    cost = TransportationCost.power_norm(1.0)
    zero = naive_foil(dirac([0.0]), [[0.0]], eps, cost).witness("off-range")
    double = naive_foil(dirac([0.0]), [[2.0]], eps, cost).witness("stretched")
    n = 4.0
    diag = naive_foil(dirac([0.0, 0.0]), [[0.0, 0.0], [0.0, n]], eps, cost).witness("lipschitz")
    passed = (
        zero is not None and zero.naive_member and not zero.true_member
        and double is not None and double.true_member and not double.naive_member
        and diag is not None and diag.lipschitz_member and not diag.true_member
    )
    return CheckResult("naive-foils", passed, 3, 0.0, "overestimation, underestimation, Lipschitz conservatism")


def _random_gamma_instance(rng: np.random.Generator):
    N, J, d = int(rng.integers(1, 6)), int(rng.integers(1, 5)), 2
    D = rng.standard_normal((d, d)) + 2.0 * np.eye(d)
    center = empirical(rng.standard_normal((N, d)))
    ball = AmbiguitySet(center, TransportationCost.composed(np.linalg.inv(D)), float(rng.uniform(0.05, 0.5)))
    directions = rng.standard_normal((J, d))
    poly = Polytope(directions, rng.uniform(-2.0, 0.5, J))
    return ball, poly, 0.2


def _check_cvar_grid(rng: np.random.Generator, trials: int) -> CheckResult:
    worst, failures = 0.0, 0
    for _ in range(trials):
        ball, poly, gamma = _random_gamma_instance(rng)
        try:
            value = build_gamma(ball, poly, gamma).worst_case_cvar()
        except OtPropError as e:
            logger.warning("worst-case CVaR failed on a random instance: %s", e)
            failures += 1
            continue
        gap = cvar_grid(ball, poly, gamma) - value
        if gap < -1e-5 * max(1.0, abs(value)):
            failures += 1
        worst = max(worst, abs(gap))
    return CheckResult("cvar-grid", failures == 0 and worst <= 1e-3, trials, worst)


def _check_gamma_feasibility(rng: np.random.Generator, trials: int) -> CheckResult:
    mismatches, skipped = 0, 0
    for _ in range(trials):
        ball, poly, gamma = _random_gamma_instance(rng)
        reference = cvar_grid(ball, poly, gamma)
        if abs(reference) <= 1e-5:
            skipped += 1
            continue
        try:
            report = solve_outer(build_gamma(ball, poly, gamma, DecisionKind.NONE), Objective.feasibility())
        except OtPropError as e:
            logger.warning("feasibility solve failed on a random instance: %s", e)
            mismatches += 1
            continue
        mismatches += int(report.optimal != (reference <= 0.0))
    return CheckResult(
        "gamma-feasibility", mismatches == 0, trials, float(mismatches),
        f"{mismatches} mismatches, {skipped} boundary instances skipped",
    )


def _check_product_lifting(rng: np.random.Generator, trials: int) -> CheckResult:
    worst, passed = 0.0, True
    for _ in range(trials):
        d = int(rng.integers(1, 3))
        P = _random_distribution(rng, 2, d)
        Q = _random_distribution(rng, 2, d)
        result = product_lifting_trial(P, Q, 2)
        worst = max(worst, result.worst_gap)
        passed = passed and result.passed
    return CheckResult("product-lifting", passed, trials, worst)


def run_suite(trials: Optional[int] = None, seed: int = 0) -> List[CheckResult]:
    """
    Run every oracle check with independent seeded generators.

    Args:
        trials: Randomized trials for every check; None uses the per-check
            counts of ORACLE_CONFIG
        seed: Root seed

    Returns:
        One CheckResult per check, in a fixed order
    """
    counts = dict(ORACLE_CONFIG["trials"])
    if trials is not None:
        if trials < 1:
            raise DimensionError(f"trials must be positive, got {trials}")
        counts = {name: trials for name in counts}
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(9)]

    invertible = rngs[3].standard_normal((3, 3)) + 3.0 * np.eye(3)
    rank_deficient = rngs[4].standard_normal((3, 1)) @ rngs[4].standard_normal((1, 3))
    P = _random_distribution(rngs[5], 4, 3)

    results = [
        _check_ot(rngs[0], counts["ot-permutation"]),
        _check_ot_weighted(rngs[1], counts["ot-lp"]),
        _check_penrose(rngs[2], counts["penrose"]),
        propagation_trial(P, invertible, 0.2, counts["propagation"], rngs[3]),
        propagation_trial(P, rank_deficient, 0.2, counts["propagation"], rngs[4]),
        _check_scalar_examples(),
        _check_product_lifting(rngs[5], counts["product-lifting"]),
        _check_foils(),
        _check_cvar_grid(rngs[6], counts["cvar-grid"]),
        _check_gamma_feasibility(rngs[7], counts["gamma-feasibility"]),
        gaussian_dirac_check(rng=rngs[8]),
    ]
    for result in results:
        log = logger.info if result.passed else logger.warning
        log("%s: %s (%d trials, worst gap %.3e)", result.name, "pass" if result.passed else "FAIL",
            result.trials, result.worst_gap)
    return results
