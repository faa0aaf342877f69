"""
Configuration module for OT ambiguity-set propagation and DR-CVaR control.

Centralizes all numerical tolerances, solver parameters, experiment constants
and output settings. Algorithms read their defaults from here so that
precision and sweep policies can be adjusted without modifying core logic.
"""

from typing import Dict, List, Sequence

# Discrete distributions
DISTRIBUTION_CONFIG = {
    "weight_sum_tol": 1e-12,  # |sum(weights) - 1| allowed at construction
    "merge_tol": 1e-10,  # Euclidean distance under which pushed-forward atoms merge
    "product_cap": 100_000,  # Max atoms produced by full product enumeration
}

# Transportation simplex
TRANSPORT_CONFIG = {
    "lp_tol": 1e-9,  # Marginal / objective agreement of a TransportPlan
    "reference_tol": 1e-7,  # Agreement with the dense HiGHS reference LP
    "membership_tol": 1e-7,  # Default slack of AmbiguitySet.contains
    "perturbation": 1e-13,  # Lexicographic weight perturbation against degeneracy
    "reduced_cost_rtol": 1e-12,  # Optimality test relative to max |cost|
    "pivots_per_cell": 50,  # Pivot budget = pivots_per_cell * n * m
    "degenerate_streak_for_bland": 25,  # Zero-step pivots before Bland's rule
}

# Numerical linear algebra
LINALG_CONFIG = {
    "rank_rtol": 1e-12,  # Singular values below rtol * sigma_max count as zero
    "penrose_tol": 1e-9,  # Frobenius tolerance of the Penrose conditions
    "scalar_identity_tol": 1e-12,  # s*I detection in AmbiguitySet.absorb_scale
}

# Discrete Riccati fixed-point iteration
LQR_CONFIG = {
    "max_iters": 10_000,
    "tol": 1e-10,  # Frobenius distance between successive iterates
}

# Outer lambda search and inner LP / QP backends
SOLVER_CONFIG = {
    "lambda_min": 1e-6,
    "lambda_max": 1e6,
    "lambda_scan_points": 49,  # Log grid, 4 points per decade over [1e-6, 1e6]
    "golden_tol": 1e-7,  # Bracket width in log10(lambda)
    "outer_max_iters": 200,  # Golden-section iterations over log10(lambda)
    "scan_tie_rtol": 1e-12,  # Scanned values this close to the best count as ties
    "clamp_rel_margin": 1e-3,  # Optimum closer than this (in log10) to a clamp fails
    "feasibility_tol": 1e-9,  # Risk budget slack accepted as feasible
    "highs_method": "highs-ds",  # Dual simplex
    "osqp": {
        "eps_abs": 1e-8,
        "eps_rel": 1e-8,
        "eps_prim_inf": 1e-9,
        "eps_dual_inf": 1e-9,
        "max_iter": 200_000,
        "polishing": False,
        "verbose": False,
    },
    "verify_tol": 1e-6,  # Post-hoc worst-case CVaR accepted for a decision
    "probability_tol": 1e-9,  # Slack on CVaR weights: each >= -tol, sum within tol of 1
}

# Randomized instances per oracle check when no uniform count is given
ORACLE_CONFIG = {
    "trials": {
        "ot-permutation": 100,
        "ot-lp": 100,
        "penrose": 100,
        "propagation": 50,
        "product-lifting": 30,
        "cvar-grid": 30,
        "gamma-feasibility": 30,
    },
}

# Reproduction of the planar experiments
EXPERIMENT_DEFAULTS = {
    "A": [[0.5, -0.5], [1.0, 0.5]],
    "B": [[1.0, 0.0], [0.0, 1.0]],
    "D": [[0.1, 0.0], [0.0, 0.1]],
    "lqr_Q": [[1.0, 0.0], [0.0, 1.0]],
    "lqr_R": [[1.0, 0.0], [0.0, 1.0]],
    "x0": [0.0, 0.0],
    "horizon": 10,
    "gamma": 0.05,
    "train_count": 5,
    "test_count": 1000,
    "seed": 7,
    "radius_scale": 1.0,  # C in radius_rate(n, r, C)
    "target_lower": [1.0, 1.0],
    "target_upper": [2.0, 2.0],
    "mode": "trajectory",
    "workers": 1,
}

# Artifact emission
OUTPUT_CONFIG = {
    "float_format": ".17g",
    "results_file": "results.json",
    "scatter_file": "scatter.csv",
    "svg_file": "scatter.svg",
    "center_file": "center.csv",
    "cost_file": "cost.csv",
    "summary_file": "ambiguity.json",
    "svg_size": 480,
}

# Example experiment files written by setup_data.py
DATA_DIR = "data"
FIG1_CONFIG_FILE = f"{DATA_DIR}/fig1.json"
FIG2_CONFIG_FILE = f"{DATA_DIR}/fig2.json"
TRAIN_NOISE_FILE = f"{DATA_DIR}/train_noise.csv"
FIG2_EPSILONS = [0.0, 0.005, 0.01]  # Planning stays feasible on the [1, 2]^2 target

# Process exit codes of the command-line interface
EXIT_CODES = {
    "ok": 0,
    "verification_failure": 1,
    "config_error": 2,
    "numeric_failure": 3,
}


def grid_directions() -> List[List[float]]:
    """
    Return the eight planar directions [i, j] with i, j in {0, +1, -1}, origin excluded.

    Ordered row by row so that the offsets b_j of a reachability result keep a
    stable meaning across runs.
    """
    values = (0.0, 1.0, -1.0)
    return [[i, j] for i in values for j in values if (i, j) != (0.0, 0.0)]


def default_epsilons(n: int, r: int, scale: float = 1.0) -> List[float]:
    """
    Default radius sweep {0, rate/2, rate} with rate = scale * n^(-1/max(2, r)).

    Args:
        n: Number of noise samples
        r: Noise dimension
        scale: Scale constant of the radius rate

    Returns:
        Three increasing radii
    """
    rate = scale * float(n) ** (-1.0 / max(2, r))
    return [0.0, rate / 2.0, rate]


def format_float(value: float) -> str:
    """Format a float with 17 significant digits (bit-exact round trip)."""
    return format(float(value), OUTPUT_CONFIG["float_format"])


def format_row(values: Sequence[float]) -> str:
    """Comma-join a row of floats in the emission format."""
    return ",".join(format_float(v) for v in values)


def solver_option(name: str, overrides: Dict = None):
    """Look up a solver setting, preferring an explicit override."""
    if overrides and name in overrides:
        return overrides[name]
    return SOLVER_CONFIG[name]
