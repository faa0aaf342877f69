"""
Unit tests for the command-line interface.

Tests cover:
- Argument parsers for radii and seeds
- Exit codes for success, failed verification and bad configs
- Artifacts written by propagate and reach
- Machine-readable stdout of plan --json
- SVG rendering
"""

import argparse
import io
import json
import os
import subprocess
import sys
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from unittest import mock

import numpy as np

from cli import epsilon_list, main, render_svg, seed_value
from config import EXIT_CODES, EXPERIMENT_DEFAULTS, OUTPUT_CONFIG
from drcvar import Polytope
from errors import DimensionError
from oracle import CheckResult

CLI_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "cli.py")


def small_config() -> dict:
    return {
        "system": {
            "A": EXPERIMENT_DEFAULTS["A"],
            "B": EXPERIMENT_DEFAULTS["B"],
            "D": EXPERIMENT_DEFAULTS["D"],
        },
        "horizon": 3,
        "training": {"count": 5},
        "test_count": 50,
        "epsilons": [0.05],
        "seed": 11,
    }


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


class TestParsers(unittest.TestCase):
    """Test the argument type parsers."""

    def test_epsilon_list(self):
        """Comma-separated radii parse in order."""
        self.assertEqual(epsilon_list("0,0.5, 1e-3"), [0.0, 0.5, 0.001])

    def test_epsilon_list_rejects(self):
        """Negative, non-finite, empty and garbled lists are rejected."""
        for text in ("-0.1", "inf", "", "a,b"):
            with self.assertRaises(argparse.ArgumentTypeError):
                epsilon_list(text)

    def test_seed_value(self):
        """Seeds are unsigned 64-bit integers."""
        self.assertEqual(seed_value("7"), 7)
        self.assertEqual(seed_value(str(2 ** 64 - 1)), 2 ** 64 - 1)
        for text in ("-1", str(2 ** 64), "seven"):
            with self.assertRaises(argparse.ArgumentTypeError):
                seed_value(text)


class TestExitCodes(unittest.TestCase):
    """Test exit codes of the verify command and config failures."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_verify_passes(self):
        """All checks passing exits 0."""
        results = [CheckResult("ot-lp", True, 2, 1e-12, "ok"), CheckResult("penrose", True, 2, 0.0, "ok")]
        with mock.patch("cli.run_suite", return_value=results) as suite:
            code, out, _ = run_cli(["verify", "--trials", "2", "--seed", "4"])
        self.assertEqual(code, EXIT_CODES["ok"])
        suite.assert_called_once_with(2, 4)
        self.assertIn("✓ ot-lp", out)

    def test_verify_fails(self):
        """A failing check exits 1."""
        results = [CheckResult("ot-lp", False, 1, 0.5, "gap too large")]
        with mock.patch("cli.run_suite", return_value=results):
            code, out, err = run_cli(["verify"])
        self.assertEqual(code, EXIT_CODES["verification_failure"])
        self.assertIn("✗ ot-lp", out)
        self.assertIn("Error:", err)

    def test_verify_json(self):
        """--json prints one object per check."""
        results = [CheckResult("penrose", True, 3, 0.0, "ok")]
        with mock.patch("cli.run_suite", return_value=results):
            code, out, _ = run_cli(["verify", "--json"])
        self.assertEqual(code, EXIT_CODES["ok"])
        self.assertEqual(json.loads(out)[0]["name"], "penrose")

    def test_missing_config(self):
        """A missing config file exits 2."""
        code, _, err = run_cli(["reach", "--config", os.path.join(self.tmp.name, "absent.json")])
        self.assertEqual(code, EXIT_CODES["config_error"])
        self.assertIn("Error:", err)

    def test_invalid_config(self):
        """Schema violations exit 2."""
        path = os.path.join(self.tmp.name, "bad.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"system": {"A": [[1.0]]}}, f)
        code, _, _ = run_cli(["propagate", "--config", path, "--out", self.tmp.name])
        self.assertEqual(code, EXIT_CODES["config_error"])


class TestCommands(unittest.TestCase):
    """Test artifacts written by the experiment commands."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.config_path = os.path.join(self.tmp.name, "experiment.json")
        with open(self.config_path, "w", encoding="utf-8") as f:
            json.dump(small_config(), f)
        self.out = os.path.join(self.tmp.name, "out")

    def tearDown(self):
        self.tmp.cleanup()

    def test_propagate(self):
        """propagate writes the center, cost and summary."""
        code, out, _ = run_cli(["propagate", "--config", self.config_path, "--out", self.out])
        self.assertEqual(code, EXIT_CODES["ok"])
        for key in ("center_file", "cost_file", "summary_file"):
            self.assertTrue(os.path.exists(os.path.join(self.out, OUTPUT_CONFIG[key])))
        with open(os.path.join(self.out, OUTPUT_CONFIG["summary_file"]), encoding="utf-8") as f:
            summary = json.load(f)
        self.assertAlmostEqual(summary["radius"], 3 * 0.05)
        self.assertEqual(summary["horizon"], 3)
        self.assertIn("Radius:", out)

    def test_propagate_horizon_override(self):
        """--horizon replaces the config horizon."""
        code, out, _ = run_cli(["propagate", "--config", self.config_path, "--out", self.out,
                                "--horizon", "2", "--json"])
        self.assertEqual(code, EXIT_CODES["ok"])
        self.assertAlmostEqual(json.loads(out)["radius"], 2 * 0.05)

    def test_reach(self):
        """reach writes results, scatter and SVG artifacts."""
        code, _, _ = run_cli(["reach", "--config", self.config_path, "--out", self.out, "--svg"])
        self.assertEqual(code, EXIT_CODES["ok"])
        with open(os.path.join(self.out, OUTPUT_CONFIG["results_file"]), encoding="utf-8") as f:
            document = json.load(f)
        self.assertEqual(document["command"], "reach")
        self.assertEqual(len(document["results"]), 1)
        self.assertEqual(document["results"][0]["status"], "optimal")
        self.assertNotIn("runtime_ms", document["results"][0])
        self.assertTrue(os.path.exists(os.path.join(self.out, "scatter_0.csv")))
        self.assertTrue(os.path.exists(os.path.join(self.out, "scatter_0.svg")))

    def test_reach_overrides(self):
        """--epsilon and --timing are honored."""
        code, out, _ = run_cli(["reach", "--config", self.config_path, "--out", self.out,
                                "--epsilon", "0,0.1", "--timing", "--json"])
        self.assertEqual(code, EXIT_CODES["ok"])
        document = json.loads(out)
        self.assertEqual([r["epsilon"] for r in document["results"]], [0.0, 0.1])
        self.assertIn("runtime_ms", document["results"][0])

    def test_plan_json_stdout(self):
        """plan --json writes exactly one JSON document to the process stdout."""
        data = small_config()
        data["epsilons"] = [0.0, 1e-4]
        data["target"] = {"lower": [-5.0, -5.0], "upper": [5.0, 5.0]}
        with open(self.config_path, "w", encoding="utf-8") as f:
            json.dump(data, f)
        proc = subprocess.run(
            [sys.executable, CLI_PATH, "plan", "--config", self.config_path, "--out", self.out, "--json"],
            capture_output=True, text=True, cwd=os.path.dirname(CLI_PATH),
        )
        self.assertEqual(proc.returncode, EXIT_CODES["ok"], msg=proc.stderr)
        document = json.loads(proc.stdout)
        self.assertEqual(document["command"], "plan")
        for entry in document["results"]:
            self.assertEqual(entry["status"], "optimal")
            self.assertLess(entry["objective"], 1e-8)


class TestRenderSvg(unittest.TestCase):
    """Test the SVG scatter."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "scatter.svg")

    def tearDown(self):
        self.tmp.cleanup()

    def test_render(self):
        """Points and the polytope outline are drawn."""
        train = np.array([[1.5, 1.5], [1.2, 1.8]])
        test = np.array([[1.0, 1.0], [2.0, 2.0], [1.5, 1.0]])
        render_svg(self.path, train, test, Polytope.box([1.0, 1.0], [2.0, 2.0]), title="box")
        with open(self.path, encoding="utf-8") as f:
            text = f.read()
        self.assertTrue(text.startswith("<svg"))
        self.assertEqual(text.count('fill="red"'), 2)
        self.assertEqual(text.count('fill="blue"'), 3)
        self.assertIn("<polygon", text)

    def test_non_planar(self):
        """Only planar states can be drawn."""
        with self.assertRaises(DimensionError):
            render_svg(self.path, np.zeros((2, 3)), np.zeros((1, 3)))


if __name__ == "__main__":
    unittest.main()
