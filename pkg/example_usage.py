#!/usr/bin/env python3
"""
Example usage of the ambiguity-set propagation and DR-CVaR library.

Walks through the scalar propagation examples, the state ambiguity set of
the planar system and a small reachability and planning sweep.
"""

import numpy as np

from apps import ExperimentConfig, plan_trajectory, reachability, sample_noise, state_ball
from config import EXPERIMENT_DEFAULTS, FIG2_EPSILONS, format_float
from distributions import dirac
from drcvar import Polytope
from lti import LtiSystem
from oracle import naive_foil
from propagation import propagate_linear
from transport import AmbiguitySet, TransportationCost, ot_discrepancy


def planar_system() -> LtiSystem:
    return LtiSystem.from_dict({
        "A": EXPERIMENT_DEFAULTS["A"],
        "B": EXPERIMENT_DEFAULTS["B"],
        "D": EXPERIMENT_DEFAULTS["D"],
    })


def scalar_examples():
    """Propagation of a ball around the Dirac at 0 under |.|."""
    eps = 0.1
    ball = AmbiguitySet(dirac([0.0]), TransportationCost.power_norm(1.0), eps)

    doubled = propagate_linear(ball, [[2.0]]).absorb_scale()
    print(f"A = 2: radius {format_float(eps)} becomes {format_float(doubled.radius)}")

    collapsed = propagate_linear(ball, [[0.0]])
    print(f"A = 0: center {collapsed.center.atoms.ravel().tolist()}, exactness {collapsed.exactness.value}")

    foil = naive_foil(dirac([0.0]), [[2.0]], eps, TransportationCost.power_norm(1.0))
    witness = foil.witness("stretched")
    print(f"Stretched witness: in the true set {witness.true_member}, in the naive ball {witness.naive_member}")

    distance, _ = ot_discrepancy(TransportationCost.squared_euclidean(), dirac([0.0]), dirac([np.sqrt(eps)]))
    print(f"T(delta_0, delta_sqrt(eps)) = {format_float(distance)}")


def state_set_example():
    """Ambiguity set of x_10 for five noise trajectories."""
    system = planar_system()
    print(f"LQR gain K = {system.K.round(4).tolist()}")
    config = ExperimentConfig(system, epsilons=(0.1,))
    train, _ = sample_noise(config)
    ball = state_ball(config, train, 0.1)
    print(f"State radius {format_float(ball.radius)}, {ball.center.size} atoms, {ball.exactness.value}")
    print(f"Center mean {ball.center.mean().round(4).tolist()}")


def sweeps():
    """Reachability over the default radii, planning into [1, 2]^2."""
    system = planar_system()
    config = ExperimentConfig(system, test_count=200)
    for result in reachability(config):
        print(f"reach epsilon={result.epsilon:.4f}: {result.status}, sum(b)={result.objective:.4f}, "
              f"violations={result.violation_fraction:.3f}")

    target = Polytope.box(EXPERIMENT_DEFAULTS["target_lower"], EXPERIMENT_DEFAULTS["target_upper"])
    config = ExperimentConfig(system, epsilons=tuple(FIG2_EPSILONS), target=target, test_count=200)
    for result in plan_trajectory(config):
        inside = 1.0 - result.violation_fraction
        print(f"plan epsilon={result.epsilon:.4f}: {result.status}, |v|^2={result.objective:.4f}, "
              f"inside target={inside:.3f}")


def main():
    """Run the examples."""
    print("OT Ambiguity Propagation - Example Usage")
    print("=" * 60)

    print("\n[Example 1] Scalar propagation")
    scalar_examples()

    print("\n[Example 2] State ambiguity set")
    state_set_example()

    print("\n[Example 3] Reachability and planning")
    sweeps()
    print()


if __name__ == "__main__":
    main()
