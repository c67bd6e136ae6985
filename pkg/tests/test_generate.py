import csv
import json

import numpy as np
import pytest

from physrul import generate
from physrul.errors import LengthExceedsSupport
from physrul.physics import SensorPhysics


def make_physics(mu_grid, rho_grid, weights=None, sensor_id=2):
    n = len(mu_grid)
    weights = weights or [np.array([1.0])] * n
    mu = [np.atleast_1d(np.asarray(m, dtype=float)) for m in mu_grid]
    rho = [np.atleast_1d(np.asarray(r, dtype=float)) for r in rho_grid]
    r2 = np.array([float(w @ (r + m**2)) for w, m, r in zip(weights, mu, rho)])
    pooled = np.array([float(w @ m) for w, m in zip(weights, mu)])
    return SensorPhysics(
        sensor_id=sensor_id,
        grid=np.arange(1, n + 1, dtype=float),
        modality=np.array([len(m) for m in mu]),
        mu=mu,
        rho=rho,
        weights=[np.asarray(w, dtype=float) for w in weights],
        r2=r2,
        a_bar=np.gradient(pooled, 1.0) if n > 1 else np.zeros(n),
        alive=np.full(n, 100, dtype=np.int64),
    )


class TestSamplePath:
    def test_degenerate_density_is_deterministic(self):
        phys = make_physics([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
        path = generate.sample_path(phys, 3, rng_seed=0)
        np.testing.assert_array_equal(path.values, [1.0, 2.0, 3.0])

    def test_bimodal_mode_frequencies(self):
        n_draws = 10_000
        phys = make_physics(
            [[0.0, 10.0]], [[0.0, 0.0]], weights=[np.array([0.5, 0.5])]
        )
        draws = np.array(
            [generate.sample_path(phys, 1, rng_seed=s).values[0] for s in range(n_draws)]
        )
        assert set(np.unique(draws)) <= {0.0, 10.0}
        # binomial 4-sigma bound: 4 * sqrt(0.25 / n) = 0.02
        assert abs((draws == 10.0).mean() - 0.5) <= 0.02

    def test_length_beyond_support(self):
        phys = make_physics([1.0], [0.0])
        with pytest.raises(LengthExceedsSupport):
            generate.sample_path(phys, 2, rng_seed=0)

    def test_reproducible_from_seed(self):
        phys = make_physics([0.0, 1.0], [1.0, 2.0])
        a = generate.sample_path(phys, 2, rng_seed=5)
        b = generate.sample_path(phys, 2, rng_seed=5)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.mode_trace, b.mode_trace)


class TestGenerateDataset:
    def test_zero_paths_rejected(self):
        with pytest.raises(ValueError):
            generate.generate_dataset([make_physics([0.0], [1.0])], 0, 1, seed=0)

    def test_master_seed_determinism(self):
        phys = make_physics([0.0, 1.0, 2.0], [1.0, 1.0, 1.0])
        a = generate.generate_dataset([phys], 5, 3, seed=3)
        b = generate.generate_dataset([phys], 5, 3, seed=3)
        for pa, pb in zip(a[2], b[2]):
            np.testing.assert_array_equal(pa.values, pb.values)

    def test_clt_moment_recovery(self):
        n = 10_000
        phys = make_physics([0.5, -1.0, 2.0], [1.0, 0.25, 4.0])
        dataset = generate.generate_dataset([phys], n, 3, seed=7)
        values = np.stack([p.values for p in dataset[2]])
        for k in range(3):
            mu, rho = phys.mu[k][0], phys.rho[k][0]
            assert abs(values[:, k].mean() - mu) <= 4 * np.sqrt(rho / n)
            assert abs(values[:, k].var() - rho) <= 4 * np.sqrt(2.0 / n) * rho

    def test_csv_and_sidecar(self, tmp_path):
        phys = make_physics([0.0, 1.0], [0.0, 0.0])
        dataset = generate.generate_dataset([phys], 2, 2, seed=1)
        csv_path = tmp_path / "synthetic.csv"
        sidecar = tmp_path / "synthetic.json"
        generate.write_dataset_csv(dataset, csv_path, sidecar, seed=1)
        with open(csv_path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["path_id", "cycle", "s2"]
        assert len(rows) == 1 + 2 * 2
        assert float(rows[1][2]) == 0.0
        meta = json.loads(sidecar.read_text())
        assert meta["master_seed"] == 1
        assert meta["n_paths"] == 2


class TestGeneratedFromEstimatedPhysics:
    def test_unimodal_sensor_moments(self, fd001_physics):
        # pick the sensor with the fewest bimodal timesteps
        phys = min(fd001_physics.values(), key=lambda p: int((p.modality == 2).sum()))
        n = 2000
        length = 50
        dataset = generate.generate_dataset([phys], n, length, seed=0)
        values = np.stack([p.values for p in dataset[phys.sensor_id]])
        pooled_mu = phys.pooled_mu()[:length]
        pooled_rho = phys.pooled_rho()[:length]
        ok = 0
        for k in range(length):
            se = np.sqrt(pooled_rho[k] / n)
            ok += abs(values[:, k].mean() - pooled_mu[k]) <= 4 * se
        assert ok >= 0.99 * length
