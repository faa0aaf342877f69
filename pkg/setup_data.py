"""
Setup script to write the example experiment files.

Creates the reachability and planning configs for the planar system and a
seeded CSV of training noise trajectories they both read.
"""

import json
import os
from pathlib import Path

import numpy as np

from config import DATA_DIR, EXPERIMENT_DEFAULTS, FIG1_CONFIG_FILE, FIG2_CONFIG_FILE, FIG2_EPSILONS, TRAIN_NOISE_FILE
from distributions import TrajectoryBatch, write_samples_csv


def system_description() -> dict:
    """Planar system with the LQR gain specified inline."""
    return {
        "A": EXPERIMENT_DEFAULTS["A"],
        "B": EXPERIMENT_DEFAULTS["B"],
        "D": EXPERIMENT_DEFAULTS["D"],
        "K": {"lqr": {"Q": EXPERIMENT_DEFAULTS["lqr_Q"], "R": EXPERIMENT_DEFAULTS["lqr_R"]}},
        "x0": EXPERIMENT_DEFAULTS["x0"],
    }


def create_training_noise(path: str = TRAIN_NOISE_FILE, seed: int = EXPERIMENT_DEFAULTS["seed"]):
    """
    Write standard Gaussian training trajectories, one latest-first row each.

    The draw uses the same seed child as apps.sample_noise, so the file holds
    the batch a config without a samples file would sample.
    """
    train_seq, _ = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(train_seq)
    shape = (EXPERIMENT_DEFAULTS["train_count"], EXPERIMENT_DEFAULTS["horizon"], len(EXPERIMENT_DEFAULTS["D"][0]))
    batch = TrajectoryBatch.from_steps(rng.standard_normal(shape))
    os.makedirs(os.path.dirname(path), exist_ok=True)
    write_samples_csv(path, batch.trajectories)
    print(f"✓ Wrote {batch.size} training trajectories to {path}")


def experiment_config(**extra) -> dict:
    config = {
        "system": system_description(),
        "horizon": EXPERIMENT_DEFAULTS["horizon"],
        "gamma": EXPERIMENT_DEFAULTS["gamma"],
        "training": {"samples": Path(TRAIN_NOISE_FILE).name},
        "test_count": EXPERIMENT_DEFAULTS["test_count"],
        "seed": EXPERIMENT_DEFAULTS["seed"],
        "mode": EXPERIMENT_DEFAULTS["mode"],
    }
    config.update(extra)
    return config


def write_config(path: str, config: dict):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2)
        f.write("\n")
    print(f"✓ Wrote {path}")


def main():
    """Main setup function."""
    print("Setting up example experiment files...")
    print()

    create_training_noise()
    write_config(FIG1_CONFIG_FILE, experiment_config())
    write_config(FIG2_CONFIG_FILE, experiment_config(
        epsilons=FIG2_EPSILONS,
        target={"lower": EXPERIMENT_DEFAULTS["target_lower"], "upper": EXPERIMENT_DEFAULTS["target_upper"]},
    ))

    print()
    print("Setup complete!")
    print(f"Data directory: {DATA_DIR}")


if __name__ == "__main__":
    main()
