"""Synthetic trajectory generation by sampling the per-timestep densities."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import LengthExceedsSupport
from .physics import PHYSICS_SCHEMA_VERSION, SensorPhysics


@dataclass
class SyntheticTrajectory:
    sensor_id: int
    values: np.ndarray  # (length,) normalized units
    seed: int
    mode_trace: np.ndarray  # (length,) sampled cluster index per timestep


def sample_path(physics: SensorPhysics, length: int, rng_seed: int) -> SyntheticTrajectory:
    """Draw one path: at each timestep pick a cluster by weight, then sample a
    Gaussian with that cluster's (mean, variance). Timesteps are independent."""
    if length > len(physics.grid):
        raise LengthExceedsSupport(f"length {length} > grid support {len(physics.grid)}")
    rng = np.random.default_rng(rng_seed)
    u = rng.random(length)
    z = rng.standard_normal(length)
    values = np.empty(length)
    modes = np.empty(length, dtype=np.int64)
    for k in range(length):
        w = physics.weights[k]
        m = int(np.searchsorted(np.cumsum(w), u[k]))
        m = min(m, len(w) - 1)
        values[k] = physics.mu[k][m] + np.sqrt(physics.rho[k][m]) * z[k]
        modes[k] = m
    return SyntheticTrajectory(physics.sensor_id, values, rng_seed, modes)


def generate_dataset(
    physics_list: list[SensorPhysics],
    n_paths: int,
    length: int,
    seed: int,
) -> dict[int, list[SyntheticTrajectory]]:
    """n_paths independent paths per sensor; per-path seeds are spawned
    deterministically from the master seed."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    out: dict[int, list[SyntheticTrajectory]] = {}
    for physics in physics_list:
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(physics.sensor_id,))
        child_seeds = ss.generate_state(n_paths)
        out[physics.sensor_id] = [
            sample_path(physics, length, int(child_seeds[i])) for i in range(n_paths)
        ]
    return out


def write_dataset_csv(dataset: dict[int, list[SyntheticTrajectory]], csv_path, sidecar_path, seed: int) -> None:
    """One row per (path_id, cycle) with a column per sensor, plus a JSON
    sidecar recording the master seed and schema version."""
    sensor_ids = sorted(dataset)
    n_paths = len(dataset[sensor_ids[0]])
    length = len(dataset[sensor_ids[0]][0].values)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "cycle"] + [f"s{sid}" for sid in sensor_ids])
        for p in range(n_paths):
            for k in range(length):
                writer.writerow(
                    [p, k + 1] + [repr(float(dataset[sid][p].values[k])) for sid in sensor_ids]
                )
    with open(sidecar_path, "w") as fh:
        json.dump(
            {
                "master_seed": seed,
                "physics_schema_version": PHYSICS_SCHEMA_VERSION,
                "n_paths": n_paths,
                "length": length,
                "sensor_ids": sensor_ids,
            },
            fh,
            indent=2,
        )
