#!/usr/bin/env python3
"""
Command-line interface for OT ambiguity-set propagation and DR-CVaR control.

Subcommands:
    propagate  write the state ambiguity set of an experiment config
    reach      distributionally robust reachability sweep over epsilon
    plan       distributionally robust trajectory planning sweep
    cvar       worst-case and in-sample CVaR of the target with zero input
    verify     run the brute-force oracle suite
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from apps import (
    ExperimentConfig,
    MODES,
    SweepResult,
    cvar_sweep,
    plan_trajectory,
    reachability,
    results_document,
    sample_noise,
    state_ball,
    to_json,
    write_ambiguity,
    write_results_json,
    write_scatter_csv,
)
from config import EXIT_CODES, OUTPUT_CONFIG, format_float
from distributions import TrajectoryBatch, read_samples_csv
from drcvar import Polytope
from errors import CapExceededError, ConfigError, CostKindError, DimensionError, OtPropError, ParameterError
from lti import lift
from oracle import run_suite

logger = logging.getLogger(__name__)

CONFIG_ERRORS = (ConfigError, DimensionError, CapExceededError, ParameterError, CostKindError)


def epsilon_list(text: str) -> List[float]:
    """Parse a comma-separated list of nonnegative radii."""
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"invalid epsilon list {text!r}") from e
    if not values or any(not np.isfinite(v) or v < 0 for v in values):
        raise argparse.ArgumentTypeError(f"epsilons must be finite and >= 0, got {text!r}")
    return values


def seed_value(text: str) -> int:
    try:
        seed = int(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from e
    if not 0 <= seed < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return seed


def load_config(args) -> ExperimentConfig:
    """Experiment config with the command-line overrides applied."""
    config = ExperimentConfig.from_file(args.config)
    config = config.with_overrides(seed=args.seed, epsilons=args.epsilon, mode=args.mode)
    if getattr(args, "horizon", None) is not None:
        config = replace(config, horizon=args.horizon)
    if args.samples is not None:
        rows = read_samples_csv(args.samples, header=args.header)
        config = replace(config, training=TrajectoryBatch(rows, config.horizon, config.system.noise_dim))
    return config


def _svg_point(value: np.ndarray, lower: np.ndarray, span: np.ndarray, size: int, pad: int):
    x = pad + (value[0] - lower[0]) / span[0] * (size - 2 * pad)
    y = size - pad - (value[1] - lower[1]) / span[1] * (size - 2 * pad)
    return x, y


def render_svg(path, train_states: np.ndarray, test_states: np.ndarray,
               polytope: Optional[Polytope] = None, size: Optional[int] = None, title: str = "") -> None:
    """
    Planar scatter of terminal states with the polytope outline.

    Test states are drawn in blue, training states in red, polytope edges in
    black; the axes carry their data ranges.

    Raises:
        DimensionError: if the states are not planar
    """
    size = OUTPUT_CONFIG["svg_size"] if size is None else size
    pad = 40
    clouds = [np.atleast_2d(s) for s in (train_states, test_states) if np.size(s)]
    vertices = polytope.vertices_2d() if polytope is not None else np.empty((0, 2))
    if any(cloud.shape[1] != 2 for cloud in clouds):
        raise DimensionError("SVG scatter needs planar states")
    points = np.vstack(clouds + [vertices]) if clouds or vertices.size else np.zeros((1, 2))
    lower, upper = points.min(axis=0), points.max(axis=0)
    span = np.where(upper - lower > 0, upper - lower, 1.0)
    lower, span = lower - 0.05 * span, 1.1 * span

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<line x1="{pad}" y1="{size - pad}" x2="{size - pad}" y2="{size - pad}" stroke="gray"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{size - pad}" stroke="gray"/>',
        f'<text x="{pad}" y="{size - pad + 16}" font-size="10">{format_float(lower[0])}</text>',
        f'<text x="{size - pad}" y="{size - pad + 16}" font-size="10" text-anchor="end">'
        f'{format_float(lower[0] + span[0])}</text>',
        f'<text x="{pad - 4}" y="{size - pad}" font-size="10" text-anchor="end">{format_float(lower[1])}</text>',
        f'<text x="{pad - 4}" y="{pad}" font-size="10" text-anchor="end">{format_float(lower[1] + span[1])}</text>',
        f'<text x="{size - pad}" y="{size - pad + 30}" font-size="11" text-anchor="end">x1</text>',
        f'<text x="{pad - 30}" y="{pad - 10}" font-size="11">x2</text>',
    ]
    if title:
        lines.append(f'<text x="{size / 2:.2f}" y="20" font-size="12" text-anchor="middle">{title}</text>')
    for states, color in ((test_states, "blue"), (train_states, "red")):
        for row in (np.atleast_2d(states) if np.size(states) else []):
            x, y = _svg_point(row, lower, span, size, pad)
            lines.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{2 if color == "blue" else 3}" fill="{color}"/>')
    if vertices.shape[0] >= 2:
        outline = " ".join("{:.2f},{:.2f}".format(*_svg_point(v, lower, span, size, pad)) for v in vertices)
        lines.append(f'<polygon points="{outline}" fill="none" stroke="black"/>')
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _artifact_name(key: str, index: int) -> str:
    name = Path(OUTPUT_CONFIG[key])
    return f"{name.stem}_{index}{name.suffix}"


def cmd_propagate(args) -> int:
    """Write the state ambiguity set at the horizon for the first radius."""
    config = load_config(args)
    train, _ = sample_noise(config)
    epsilon = config.sweep()[0]
    lifted = lift(config.system, config.horizon)
    ball = state_ball(config, train, epsilon, None, lifted)
    out_dir = Path(args.out)
    paths = write_ambiguity(out_dir, ball, {
        "horizon": config.horizon,
        "epsilon": epsilon,
        "seed": config.seed,
        "mode": config.mode,
        "full_row_rank": lifted.full_row_rank,
    })
    if args.json:
        print(to_json({"radius": ball.radius, "exactness": ball.exactness.value, "atoms": ball.center.size}))
    else:
        print("\nState Ambiguity Set")
        print(f"{'=' * 50}")
        print(f"Horizon: {config.horizon}")
        print(f"Radius: {format_float(ball.radius)}")
        print(f"Exactness: {ball.exactness.value}")
        print(f"Center atoms: {ball.center.size}")
        for note in ball.notes:
            print(f"  • {note}")
        print(f"\nWritten: {', '.join(str(p) for p in paths.values())}\n")
    return EXIT_CODES["ok"]


def _run_sweep(args, command: str, runner: Callable[..., List[SweepResult]]) -> int:
    config = load_config(args)
    results = runner(config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    document = results_document(config, command, results, timing=args.timing)
    write_results_json(out_dir / OUTPUT_CONFIG["results_file"], document)
    for k, result in enumerate(results):
        if result.terminal_train.size or result.terminal_test.size:
            write_scatter_csv(out_dir / _artifact_name("scatter_file", k), result.terminal_train, result.terminal_test)
            if args.svg:
                render_svg(out_dir / _artifact_name("svg_file", k), result.terminal_train, result.terminal_test,
                           result.polytope, title=f"{command} epsilon={format_float(result.epsilon)}")

    if args.json:
        print(to_json(document))
    else:
        print(f"\n{command.capitalize()} Sweep (horizon {config.horizon}, gamma {format_float(config.gamma)})")
        print(f"{'=' * 50}")
        for result in results:
            print(f"epsilon {format_float(result.epsilon)}: {result.status}, objective {format_float(result.objective)}, "
                  f"violations {format_float(result.violation_fraction)}")
        print(f"\nResults written to {out_dir}\n")
    failed = [r for r in results if r.status != "optimal"]
    if failed:
        print(f"Error: {len(failed)} radii did not reach an optimum", file=sys.stderr)
        return EXIT_CODES["numeric_failure"]
    return EXIT_CODES["ok"]


def cmd_reach(args) -> int:
    return _run_sweep(args, "reach", reachability)


def cmd_plan(args) -> int:
    return _run_sweep(args, "plan", plan_trajectory)


def cmd_cvar(args) -> int:
    return _run_sweep(args, "cvar", cvar_sweep)


def cmd_verify(args) -> int:
    """Run the oracle suite; exit 0 iff every check passes."""
    results = run_suite(args.trials, 0 if args.seed is None else args.seed)
    if args.json:
        print(to_json([
            {"name": r.name, "passed": r.passed, "trials": r.trials, "worst_gap": r.worst_gap, "detail": r.detail}
            for r in results
        ]))
    else:
        print("\nOracle Verification")
        print(f"{'=' * 50}")
        for r in results:
            mark = "✓" if r.passed else "✗"
            print(f"{mark} {r.name:<22} trials={r.trials:<4} worst gap={r.worst_gap:.3e}  {r.detail}")
        print()
    if all(r.passed for r in results):
        return EXIT_CODES["ok"]
    print("Error: oracle verification failed", file=sys.stderr)
    return EXIT_CODES["verification_failure"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Propagate OT ambiguity sets through linear systems and solve DR-CVaR programs"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--verbose",
        action="store_true",
        help="Log progress at INFO level"
    )
    common.add_argument(
        "--seed",
        type=seed_value,
        help="Root seed of the noise generator (overrides the config)"
    )
    common.add_argument(
        "--json",
        action="store_true",
        help="Print results as JSON"
    )

    experiment = argparse.ArgumentParser(add_help=False, parents=[common])
    experiment.add_argument(
        "--config",
        required=True,
        help="Path to the experiment JSON"
    )
    experiment.add_argument(
        "--out",
        default="results",
        help="Output directory"
    )
    experiment.add_argument(
        "--epsilon",
        type=epsilon_list,
        help="Comma-separated per-step radii (overrides the config)"
    )
    experiment.add_argument(
        "--mode",
        choices=MODES,
        help="Center of the trajectory ambiguity set"
    )
    experiment.add_argument(
        "--samples",
        help="CSV of training noise trajectories (overrides the config)"
    )
    experiment.add_argument(
        "--header",
        action="store_true",
        help="The samples CSV has a header row"
    )

    propagate = subparsers.add_parser("propagate", parents=[experiment], help="Write the state ambiguity set")
    propagate.add_argument(
        "--horizon",
        type=int,
        help="Horizon t (overrides the config)"
    )
    propagate.set_defaults(handler=cmd_propagate)

    for name, handler, text in (
        ("reach", cmd_reach, "Reachability sweep"),
        ("plan", cmd_plan, "Trajectory planning sweep"),
        ("cvar", cmd_cvar, "Worst-case CVaR of the target"),
    ):
        sub = subparsers.add_parser(name, parents=[experiment], help=text)
        sub.add_argument(
            "--svg",
            action="store_true",
            help="Also render each scatter as SVG"
        )
        sub.add_argument(
            "--timing",
            action="store_true",
            help="Include solver runtimes in the results"
        )
        sub.set_defaults(handler=handler)

    verify = subparsers.add_parser("verify", parents=[common], help="Run the oracle suite")
    verify.add_argument(
        "--trials",
        type=int,
        help="Randomized trials for every check (default: per-check counts from config)"
    )
    verify.set_defaults(handler=cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.handler(args)
    except CONFIG_ERRORS as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CODES["config_error"]
    except OtPropError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CODES["numeric_failure"]
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CODES["config_error"]


if __name__ == "__main__":
    sys.exit(main())
