"""
Reachability analysis and trajectory planning under OT noise ambiguity.

Both applications sweep the per-step radius epsilon. For each radius the
state ambiguity set at the horizon is built from the training noise
trajectories and the worst-case CVaR constraint is imposed on a polytope:

- reachability: the tightest offsets b of fixed directions a_j
  (maximize sum_j b_j)
- planning: the cheapest feedforward v steering into a target polytope
  (minimize ||v||^2)

Sweeps run concurrently over epsilon; results keep the input order.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import EXPERIMENT_DEFAULTS, OUTPUT_CONFIG, SOLVER_CONFIG, default_epsilons, format_float, format_row, grid_directions
from distributions import DiscreteDistribution, TrajectoryBatch, empirical, read_samples_csv
from drcvar import DecisionKind, Objective, Polytope, SolveReport, build_gamma, cvar, solve_outer
from errors import ConfigError, DimensionError, OtPropError
from lti import LiftedOperators, LtiSystem, lift, simulate, state_ambiguity
from transport import AmbiguitySet, CostKind, Exactness, TransportationCost

logger = logging.getLogger(__name__)

MODES = ("trajectory", "product")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """
    Everything needed to rerun an experiment.

    Attributes:
        system: Closed-loop system
        horizon: t
        gamma: CVaR risk level
        epsilons: Per-step radii (state radius is t * epsilon); None for the default sweep
        radius_scale: C in the default radius rate
        directions: (J, d) halfspace directions for reachability
        target: Target polytope for planning
        training: Training trajectories read from file, or None to sample
        train_count: Number of sampled training trajectories
        test_count: Number of sampled test trajectories
        seed: Root seed of the noise generator
        mode: "trajectory" (N-trajectory center) or "product" (enumerated product)
        workers: Threads for the epsilon sweep
    """

    system: LtiSystem
    horizon: int = EXPERIMENT_DEFAULTS["horizon"]
    gamma: float = EXPERIMENT_DEFAULTS["gamma"]
    epsilons: Optional[Tuple[float, ...]] = None
    radius_scale: float = EXPERIMENT_DEFAULTS["radius_scale"]
    directions: Optional[np.ndarray] = None
    target: Optional[Polytope] = None
    training: Optional[TrajectoryBatch] = None
    train_count: int = EXPERIMENT_DEFAULTS["train_count"]
    test_count: int = EXPERIMENT_DEFAULTS["test_count"]
    seed: int = EXPERIMENT_DEFAULTS["seed"]
    mode: str = EXPERIMENT_DEFAULTS["mode"]
    workers: int = EXPERIMENT_DEFAULTS["workers"]

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.epsilons is not None:
            epsilons = tuple(float(e) for e in self.epsilons)
            if not epsilons or any(not np.isfinite(e) or e < 0 for e in epsilons):
                raise ConfigError(f"epsilons must be finite and >= 0, got {self.epsilons}")
            object.__setattr__(self, "epsilons", epsilons)
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.train_count < 1 or self.test_count < 1 or self.workers < 1:
            raise ConfigError("train_count, test_count and workers must be positive")
        if self.radius_scale <= 0:
            raise ConfigError("radius_scale must be positive")
        if self.directions is None:
            if self.system.state_dim != 2:
                raise ConfigError("directions are required unless the state is planar")
            object.__setattr__(self, "directions", np.array(grid_directions()))
        directions = np.atleast_2d(np.asarray(self.directions, dtype=float))
        if directions.shape[1] != self.system.state_dim:
            raise ConfigError(f"directions must have {self.system.state_dim} columns")
        object.__setattr__(self, "directions", directions)
        if self.target is not None and self.target.dim != self.system.state_dim:
            raise ConfigError("target polytope dimension does not match the state")
        if self.training is not None and (
            self.training.horizon != self.horizon or self.training.noise_dim != self.system.noise_dim
        ):
            raise ConfigError("training trajectories do not match the horizon and noise dimension")

    @property
    def training_size(self) -> int:
        return self.training.size if self.training is not None else self.train_count

    def sweep(self) -> Tuple[float, ...]:
        """Radii to solve for, the default three-point sweep if none were given."""
        if self.epsilons is not None:
            return self.epsilons
        return tuple(default_epsilons(self.training_size, self.system.noise_dim, self.radius_scale))

    def with_overrides(self, seed: Optional[int] = None, epsilons: Optional[Sequence[float]] = None,
                       mode: Optional[str] = None) -> "ExperimentConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if epsilons is not None:
            changes["epsilons"] = tuple(epsilons)
        if mode is not None:
            changes["mode"] = mode
        return replace(self, **changes) if changes else self

    @classmethod
    def from_dict(cls, data: Dict, base_dir: Union[str, Path, None] = None) -> "ExperimentConfig":
        """
        Build from the experiment JSON document.

        Raises:
            ConfigError: on schema violations
        """
        if not isinstance(data, dict) or "system" not in data:
            raise ConfigError('experiment config needs a "system" object')
        known = {"system", "horizon", "gamma", "epsilons", "radius_scale", "directions", "target",
                 "training", "test_count", "seed", "mode", "workers"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            system = LtiSystem.from_dict(data["system"])
            horizon = int(data.get("horizon", EXPERIMENT_DEFAULTS["horizon"]))
            target = None
            if "target" in data:
                spec = data["target"]
                if "lower" in spec and "upper" in spec:
                    target = Polytope.box(spec["lower"], spec["upper"])
                else:
                    target = Polytope(spec["directions"], spec["offsets"])
            training, train_count = None, EXPERIMENT_DEFAULTS["train_count"]
            spec = data.get("training", {})
            if "samples" in spec:
                path = Path(spec["samples"])
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                rows = read_samples_csv(path, header=bool(spec.get("header", False)))
                training = TrajectoryBatch(rows, horizon, system.noise_dim)
            elif "count" in spec:
                train_count = int(spec["count"])
            return cls(
                system=system,
                horizon=horizon,
                gamma=float(data.get("gamma", EXPERIMENT_DEFAULTS["gamma"])),
                epsilons=data.get("epsilons"),
                radius_scale=float(data.get("radius_scale", EXPERIMENT_DEFAULTS["radius_scale"])),
                directions=data.get("directions"),
                target=target,
                training=training,
                train_count=train_count,
                test_count=int(data.get("test_count", EXPERIMENT_DEFAULTS["test_count"])),
                seed=int(data.get("seed", EXPERIMENT_DEFAULTS["seed"])),
                mode=data.get("mode", EXPERIMENT_DEFAULTS["mode"]),
                workers=int(data.get("workers", EXPERIMENT_DEFAULTS["workers"])),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid experiment config: {e}") from e

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"could not parse {path}: {e}") from e
        return cls.from_dict(data, base_dir=path.parent)


def sample_noise(config: ExperimentConfig) -> Tuple[TrajectoryBatch, TrajectoryBatch]:
    """
    Seeded standard Gaussian training and test noise trajectories.

    The two batches come from independent children of the root seed, so the
    test batch does not depend on the training count. A training batch read
    from file takes precedence over sampling.
    """
    train_seq, test_seq = np.random.SeedSequence(config.seed).spawn(2)
    shape = (config.horizon, config.system.noise_dim)
    if config.training is not None:
        train = config.training
    else:
        rng = np.random.default_rng(train_seq)
        train = TrajectoryBatch.from_steps(rng.standard_normal((config.train_count,) + shape))
    rng = np.random.default_rng(test_seq)
    test = TrajectoryBatch.from_steps(rng.standard_normal((config.test_count,) + shape))
    return train, test


def noise_ball(train: TrajectoryBatch, epsilon: float) -> AmbiguitySet:
    """Per-step ball around the pooled per-step noise samples."""
    return AmbiguitySet(empirical(train.pooled()), TransportationCost.squared_euclidean(), epsilon)


def state_ball(config: ExperimentConfig, train: TrajectoryBatch, epsilon: float, v=None,
               lifted: Optional[LiftedOperators] = None) -> AmbiguitySet:
    """Ambiguity set of x_t for the configured lifting mode."""
    mode = train if config.mode == "trajectory" else "enumerate"
    return state_ambiguity(config.system, config.horizon, v, noise_ball(train, epsilon), mode, lifted)


@dataclass(frozen=True, eq=False)
class SweepResult:
    """
    Solution for one radius of a sweep.

    Attributes:
        kind: "reach", "plan" or "cvar"
        epsilon: Per-step radius
        report: Outer solve report (None for pure evaluations)
        polytope: Resulting (reach) or target (plan, cvar) polytope
        feedforward: Stacked input v used for evaluation
        worst_case_cvar: Post-hoc worst-case CVaR of the decision
        empirical_cvar: Out-of-sample CVaR on the test batch
        violation_fraction: Fraction of test terminal states outside the polytope
        in_sample_cvar: CVaR over the training center atoms
        terminal_train, terminal_test: Terminal states under the decision
    """

    kind: str
    epsilon: float
    report: Optional[SolveReport]
    polytope: Optional[Polytope]
    feedforward: np.ndarray
    worst_case_cvar: float = float("nan")
    empirical_cvar: float = float("nan")
    violation_fraction: float = float("nan")
    in_sample_cvar: float = float("nan")
    terminal_train: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    terminal_test: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    @property
    def status(self) -> str:
        return "optimal" if self.report is None else self.report.status

    @property
    def objective(self) -> float:
        if self.report is None:
            return self.worst_case_cvar
        return self.report.objective

    @property
    def runtime_ms(self) -> float:
        return 0.0 if self.report is None else 1000.0 * self.report.wall_time


@dataclass(frozen=True, eq=False)
class Evaluation:
    terminal_states: np.ndarray
    empirical_cvar: float
    violation_fraction: float


def evaluate_out_of_sample(config: ExperimentConfig, polytope: Polytope, v,
                           test: TrajectoryBatch) -> Evaluation:
    """
    Simulate the test noise and score the terminal states against the polytope.

    Returns:
        Terminal states, the empirical CVaR of the polytope loss at level gamma
        and the fraction of states with positive loss
    """
    paths = simulate(config.system, v, test)
    terminal = paths[:, -1, :]
    losses = polytope.loss(terminal)
    return Evaluation(terminal, cvar(losses, None, config.gamma), float(np.mean(losses > 0.0)))


def _verify(program, decision, epsilon: float) -> float:
    try:
        value = program.fix(decision).worst_case_cvar()
    except OtPropError as e:
        logger.warning("post-hoc verification failed at epsilon=%s: %s", format_float(epsilon), e)
        return float("nan")
    if value > SOLVER_CONFIG["verify_tol"]:
        logger.warning("post-hoc worst-case CVaR %.3e exceeds tolerance at epsilon=%s", value, format_float(epsilon))
    return value


def _finish(config: ExperimentConfig, result: SweepResult, train: TrajectoryBatch,
            test: Optional[TrajectoryBatch]) -> SweepResult:
    if result.polytope is None:
        return result
    train_paths = simulate(config.system, result.feedforward, train)
    changes = {"terminal_train": train_paths[:, -1, :]}
    if test is not None:
        evaluation = evaluate_out_of_sample(config, result.polytope, result.feedforward, test)
        changes.update(
            terminal_test=evaluation.terminal_states,
            empirical_cvar=evaluation.empirical_cvar,
            violation_fraction=evaluation.violation_fraction,
        )
    return replace(result, **changes)


def _sweep(config: ExperimentConfig, solve_one) -> List[SweepResult]:
    epsilons = config.sweep()
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(solve_one, epsilons))


def reachability(config: ExperimentConfig, train: Optional[TrajectoryBatch] = None,
                 test: Optional[TrajectoryBatch] = None) -> List[SweepResult]:
    """
    Smallest polytope {x : a_j'x + b_j <= 0} meeting the worst-case CVaR constraint.

    Solves max sum_j b_j over the reformulated constraint for every radius of
    the sweep with zero feedforward.
    """
    if train is None or test is None:
        sampled_train, sampled_test = sample_noise(config)
        train = sampled_train if train is None else train
        test = sampled_test if test is None else test
    lifted = lift(config.system, config.horizon)
    zeros = Polytope(config.directions, np.zeros(config.directions.shape[0]))
    v = np.zeros(config.horizon * config.system.input_dim)

    def solve_one(epsilon: float) -> SweepResult:
        ball = state_ball(config, train, epsilon, v, lifted)
        program = build_gamma(ball, zeros, config.gamma, DecisionKind.OFFSETS)
        report = solve_outer(program, Objective.max_sum())
        logger.info("reach epsilon=%s: %s, sum(b)=%s", format_float(epsilon), report.status,
                    format_float(report.objective))
        if not report.optimal:
            return SweepResult("reach", epsilon, report, None, v)
        result = SweepResult(
            "reach", epsilon, report, zeros.with_offsets(report.decision), v,
            worst_case_cvar=_verify(program, report.decision, epsilon),
        )
        return _finish(config, result, train, test)

    return _sweep(config, solve_one)


def plan_trajectory(config: ExperimentConfig, train: Optional[TrajectoryBatch] = None,
                    test: Optional[TrajectoryBatch] = None) -> List[SweepResult]:
    """
    Cheapest feedforward steering x_t into the target under the worst-case CVaR constraint.

    Raises:
        ConfigError: if the config has no target polytope
    """
    if config.target is None:
        raise ConfigError("planning needs a target polytope")
    if train is None or test is None:
        sampled_train, sampled_test = sample_noise(config)
        train = sampled_train if train is None else train
        test = sampled_test if test is None else test
    lifted = lift(config.system, config.horizon)
    zero_input = np.zeros(config.horizon * config.system.input_dim)

    def solve_one(epsilon: float) -> SweepResult:
        ball = state_ball(config, train, epsilon, zero_input, lifted)
        program = build_gamma(ball, config.target, config.gamma, DecisionKind.FEEDFORWARD, lifted.B_lift)
        report = solve_outer(program, Objective.min_energy())
        logger.info("plan epsilon=%s: %s, |v|^2=%s", format_float(epsilon), report.status,
                    format_float(report.objective))
        if not report.optimal:
            return SweepResult("plan", epsilon, report, config.target, zero_input)
        result = SweepResult(
            "plan", epsilon, report, config.target, report.decision,
            worst_case_cvar=_verify(program, report.decision, epsilon),
        )
        return _finish(config, result, train, test)

    return _sweep(config, solve_one)


def cvar_sweep(config: ExperimentConfig, train: Optional[TrajectoryBatch] = None,
               test: Optional[TrajectoryBatch] = None) -> List[SweepResult]:
    """Worst-case and in-sample CVaR of the target loss with zero feedforward."""
    if config.target is None:
        raise ConfigError("CVaR evaluation needs a target polytope")
    if train is None or test is None:
        sampled_train, sampled_test = sample_noise(config)
        train = sampled_train if train is None else train
        test = sampled_test if test is None else test
    lifted = lift(config.system, config.horizon)
    v = np.zeros(config.horizon * config.system.input_dim)

    def solve_one(epsilon: float) -> SweepResult:
        ball = state_ball(config, train, epsilon, v, lifted)
        program = build_gamma(ball, config.target, config.gamma)
        result = SweepResult(
            "cvar", epsilon, None, config.target, v,
            worst_case_cvar=program.worst_case_cvar(),
            in_sample_cvar=cvar(config.target.loss(ball.center.atoms), ball.center.weights, config.gamma),
        )
        return _finish(config, result, train, test)

    return _sweep(config, solve_one)


RESULT_KEYS = ("epsilon", "status", "objective", "lam", "worst_case_cvar", "empirical_cvar",
               "violation_fraction")
DOCUMENT_KEYS = ("command", "horizon", "gamma", "seed", "mode", "results")


def results_document(config: ExperimentConfig, command: str, results: Sequence[SweepResult],
                     timing: bool = False) -> Dict:
    """
    Results as a JSON-ready dict.

    Runtimes are only included on request; without them the document is a
    deterministic function of config and seed.
    """
    entries = []
    for result in results:
        entry = {
            "epsilon": result.epsilon,
            "status": result.status,
            "objective": result.objective,
            "lam": float("nan") if result.report is None else result.report.lam,
            "worst_case_cvar": result.worst_case_cvar,
            "empirical_cvar": result.empirical_cvar,
            "violation_fraction": result.violation_fraction,
        }
        if result.kind == "reach":
            entry["b"] = [] if result.polytope is None else result.polytope.offsets.tolist()
        elif result.kind == "plan":
            entry["v"] = result.feedforward.tolist()
        else:
            entry["in_sample_cvar"] = result.in_sample_cvar
        if timing:
            entry["runtime_ms"] = result.runtime_ms
        entries.append(entry)
    return {
        "command": command,
        "horizon": config.horizon,
        "gamma": config.gamma,
        "seed": config.seed,
        "mode": config.mode,
        "directions": config.directions.tolist(),
        "results": entries,
    }


def validate_results(document: Dict) -> None:
    """
    Raises:
        ConfigError: if the document misses required keys
    """
    missing = [key for key in DOCUMENT_KEYS if key not in document]
    if missing:
        raise ConfigError(f"results document is missing {', '.join(missing)}")
    for entry in document["results"]:
        absent = [key for key in RESULT_KEYS if key not in entry]
        if absent:
            raise ConfigError(f"result entry is missing {', '.join(absent)}")
        if document["command"] == "reach" and "b" not in entry:
            raise ConfigError('reach results need "b"')
        if document["command"] == "plan" and "v" not in entry:
            raise ConfigError('plan results need "v"')


def to_json(value, indent: int = 2, level: int = 0) -> str:
    """
    JSON text with every float at 17 significant digits.

    Non-finite floats become null.
    """
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if value is None:
        return "null"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value) if np.isfinite(value) else "null"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, level + 1)}" for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) or v is None for v in value):
            return "[" + ", ".join(to_json(v) for v in value) + "]"
        items = [pad + to_json(v, indent, level + 1) for v in value]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise ConfigError(f"cannot serialize {type(value).__name__}")


def write_results_json(path: Union[str, Path], document: Dict) -> None:
    validate_results(document)
    with open(path, "w", encoding="utf-8") as f:
        f.write(to_json(document) + "\n")


def write_scatter_csv(path: Union[str, Path], train_states: np.ndarray, test_states: np.ndarray) -> None:
    """Rows (set_kind, x1, ..., xd) for training then test terminal states."""
    train_states = np.atleast_2d(train_states)
    test_states = np.atleast_2d(test_states)
    dim = max(train_states.shape[1], test_states.shape[1])
    with open(path, "w", encoding="utf-8") as f:
        f.write("set_kind," + ",".join(f"x{k + 1}" for k in range(dim)) + "\n")
        for kind, states in (("train", train_states), ("test", test_states)):
            for row in states:
                if row.size:
                    f.write(f"{kind},{format_row(row)}\n")


def write_ambiguity(out_dir: Union[str, Path], ball: AmbiguitySet, extra: Optional[Dict] = None) -> Dict[str, Path]:
    """
    Write an ambiguity set as center CSV (weight, atom...), cost matrix CSV and a JSON summary.

    Returns:
        Paths of the written files
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "center": out_dir / OUTPUT_CONFIG["center_file"],
        "cost": out_dir / OUTPUT_CONFIG["cost_file"],
        "summary": out_dir / OUTPUT_CONFIG["summary_file"],
    }
    with open(paths["center"], "w", encoding="utf-8") as f:
        for weight, atom in zip(ball.center.weights, ball.center.atoms):
            f.write(format_row(np.concatenate([[weight], atom])) + "\n")
    matrix = np.eye(ball.dim) if ball.cost.matrix is None else ball.cost.matrix
    with open(paths["cost"], "w", encoding="utf-8") as f:
        for row in matrix:
            f.write(format_row(row) + "\n")
    summary = {
        "radius": ball.radius,
        "exactness": ball.exactness.value,
        "notes": list(ball.notes),
        "cost_kind": ball.cost.kind.value,
        "cost_power": ball.cost.power,
        "center_file": paths["center"].name,
        "cost_file": paths["cost"].name,
    }
    summary.update(extra or {})
    with open(paths["summary"], "w", encoding="utf-8") as f:
        f.write(to_json(summary) + "\n")
    return paths


def read_ambiguity(out_dir: Union[str, Path]) -> AmbiguitySet:
    """Read back a set written by write_ambiguity."""
    out_dir = Path(out_dir)
    summary_path = out_dir / OUTPUT_CONFIG["summary_file"]
    if not summary_path.exists():
        raise ConfigError(f"ambiguity summary not found: {summary_path}")
    with open(summary_path, "r", encoding="utf-8") as f:
        summary = json.load(f)
    center = read_samples_csv(out_dir / summary["center_file"])
    matrix = read_samples_csv(out_dir / summary["cost_file"])
    try:
        cost = TransportationCost(CostKind(summary["cost_kind"]), matrix=matrix, power=float(summary["cost_power"]))
    except (KeyError, ValueError, DimensionError) as e:
        raise ConfigError(f"invalid ambiguity summary: {e}") from e
    return AmbiguitySet(
        DiscreteDistribution(center[:, 1:], center[:, 0]),
        cost,
        float(summary["radius"]),
        Exactness(summary["exactness"]),
        tuple(summary.get("notes", ())),
    )
