import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from physrul import physics as ph
from physrul.errors import MissingPhysics, OutOfRange, TooFewPaths
from physrul.ingest import TrajectorySet


def brute_force_2means_sse(samples):
    """Independent oracle: minimum SSE over all contiguous splits of the
    sorted samples, computed the slow way."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    best = np.inf
    for split in range(1, len(x)):
        left, right = x[:split], x[split:]
        sse = ((left - left.mean()) ** 2).sum() + ((right - right.mean()) ** 2).sum()
        best = min(best, sse)
    return best


def ts_from_paths(paths, sensor_ids=None):
    paths = [np.asarray(p, dtype=np.float64) for p in paths]
    n_sensors = paths[0].shape[1] if paths[0].ndim == 2 else 1
    trajs = [p if p.ndim == 2 else p[:, None] for p in paths]
    sensor_ids = sensor_ids or list(range(2, 2 + n_sensors))
    return TrajectorySet(
        units=list(range(1, len(paths) + 1)),
        trajectories=trajs,
        retained_sensor_ids=sensor_ids,
        rul_labels=[np.arange(len(p) - 1, -1, -1, dtype=float) for p in trajs],
        norm_mean=np.zeros(n_sensors),
        norm_std=np.ones(n_sensors),
        split_tag="train",
    )


class TestEnsemble:
    def test_zero_extension(self):
        ts = ts_from_paths([np.ones(3), np.ones(5)])
        ens = ph.build_ensemble(ts, 2)
        assert ens.t_max == 5
        np.testing.assert_array_equal(ens.paths[0], [1, 1, 1, 0, 0])
        np.testing.assert_array_equal(ens.paths[1], np.ones(5))
        np.testing.assert_array_equal(ens.grid, [1, 2, 3, 4, 5])

    def test_single_path_rejected(self):
        ts = ts_from_paths([np.ones(3)])
        with pytest.raises(TooFewPaths):
            ph.build_ensemble(ts, 2)

    def test_equal_lengths_no_padding(self):
        ts = ts_from_paths([np.ones(4), 2 * np.ones(4)])
        ens = ph.build_ensemble(ts, 2)
        assert not np.any(ens.paths == 0)

    def test_unknown_sensor(self):
        ts = ts_from_paths([np.ones(3), np.ones(3)])
        with pytest.raises(MissingPhysics):
            ph.build_ensemble(ts, 99)


class TestKmeans1d:
    def test_k1_mean(self):
        res = ph.kmeans_1d([1.0, 1.0, 1.0], 1)
        assert res.centroids[0] == 1.0
        assert res.within_sse == 0.0

    def test_k1_equals_arithmetic_mean(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(37)
        res = ph.kmeans_1d(x, 1)
        assert abs(res.centroids[0] - x.mean()) < 1e-12

    def test_symmetric_separation(self):
        res = ph.kmeans_1d([0.0, 0.0, 10.0, 10.0], 2)
        np.testing.assert_allclose(res.centroids, [0.0, 10.0])
        np.testing.assert_allclose(res.weights, [0.5, 0.5])

    def test_derived_split(self):
        # brute force over the 3 sorted splits of [0,1,9,10] gives (0.5, 9.5)
        res = ph.kmeans_1d([0.0, 1.0, 9.0, 10.0], 2)
        np.testing.assert_allclose(res.centroids, [0.5, 9.5])
        assert abs(res.within_sse - 1.0) < 1e-12

    def test_degenerate_identical_samples(self):
        res = ph.kmeans_1d([3.0] * 10, 2)
        assert res.degenerate
        assert res.k == 1
        np.testing.assert_allclose(res.weights, [1.0])

    def test_unbalanced_input_still_optimal(self):
        # Lloyd from (min, max) stalls here; the polish must recover sse 50
        x = [0.0, 0.0, 0.0, 0.0, 0.0, 10.0, 20.0]
        res = ph.kmeans_1d(x, 2)
        assert abs(res.within_sse - brute_force_2means_sse(x)) < 1e-9

    def test_lloyd_sse_monotone(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            x = rng.standard_normal(rng.integers(4, 50))
            trace = ph.lloyd_sse_trace(x)
            assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))

    @given(
        st.lists(
            st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
            min_size=2,
            max_size=64,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_brute_force(self, xs):
        res = ph.kmeans_1d(xs, 2)
        if res.degenerate:
            assert max(xs) == min(xs)
            return
        expected = brute_force_2means_sse(xs)
        assert res.within_sse <= expected + 1e-6 * max(1.0, expected)


class TestDetectModality:
    def test_perfectly_separated(self):
        assert ph.detect_modality([0.0] * 4 + [10.0] * 4) == 2

    def test_tight_cluster(self):
        x = [1.0, 1.1, 0.9, 1.05, 0.95, 1.02, 0.98, 1.0]
        # hand check: split separation ~0.091 < 2 * pooled std ~0.114
        assert ph.detect_modality(x) == 1

    def test_below_length_guard(self):
        assert ph.detect_modality([0.0, 0.0, 0.0, 10.0, 10.0, 10.0, 10.0]) == 1

    def test_identical_samples(self):
        assert ph.detect_modality([2.0] * 20) == 1


class TestEstimatePhysics:
    def test_constant_paths(self):
        ts = ts_from_paths([3.0 * np.ones(6)] * 4)
        phys = ph.estimate_physics(ph.build_ensemble(ts, 2))
        for k in range(6):
            assert phys.modality[k] == 1
            np.testing.assert_allclose(phys.mu[k], [3.0])
            np.testing.assert_allclose(phys.rho[k], [0.0])
        np.testing.assert_allclose(phys.a_bar, 0.0)

    def test_two_constant_populations(self):
        paths = [np.zeros(10)] * 8 + [10.0 * np.ones(10)] * 8
        phys = ph.estimate_physics(ph.build_ensemble(ts_from_paths(paths), 2))
        for k in range(10):
            assert phys.modality[k] == 2
            np.testing.assert_allclose(phys.mu[k], [0.0, 10.0])
            np.testing.assert_allclose(phys.rho[k], [0.0, 0.0])
            np.testing.assert_allclose(phys.weights[k], [0.5, 0.5])

    def test_linear_paths_drift(self):
        t = np.arange(1, 21, dtype=float)
        phys = ph.estimate_physics(ph.build_ensemble(ts_from_paths([t.copy() for _ in range(5)]), 2))
        np.testing.assert_allclose(phys.pooled_mu(), t)
        np.testing.assert_allclose(phys.pooled_rho(), 0.0, atol=1e-12)
        np.testing.assert_allclose(phys.a_bar, 1.0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        paths = [rng.standard_normal(rng.integers(15, 30)) for _ in range(12)]
        a = ph.estimate_physics(ph.build_ensemble(ts_from_paths(paths), 2))
        order = rng.permutation(len(paths))
        b = ph.estimate_physics(ph.build_ensemble(ts_from_paths([paths[i] for i in order]), 2))
        np.testing.assert_allclose(a.pooled_mu(), b.pooled_mu(), atol=1e-12)
        np.testing.assert_allclose(a.pooled_rho(), b.pooled_rho(), atol=1e-12)
        np.testing.assert_array_equal(a.alive, b.alive)

    def test_weights_sum_and_rho_nonnegative(self, fd001_physics):
        for phys in fd001_physics.values():
            for k in range(len(phys.grid)):
                assert abs(phys.weights[k].sum() - 1.0) < 1e-12
                assert np.all(phys.rho[k] >= 0.0)

    def test_pooled_relation(self, fd001_physics):
        for phys in fd001_physics.values():
            pooled_var = phys.pooled_rho()
            pm = phys.pooled_mu()
            np.testing.assert_allclose(phys.r2 - pm**2, pooled_var, atol=1e-9)

    def test_alive_counts_decrease(self, fd001_physics):
        for phys in fd001_physics.values():
            assert np.all(np.diff(phys.alive) <= 0)


class TestInterpolate:
    def _phys(self):
        ts = ts_from_paths([np.array([0.0, 2.0, 4.0])] * 4)
        return ph.estimate_physics(ph.build_ensemble(ts, 2))

    def test_on_grid(self):
        phys = self._phys()
        mu, rho = ph.interpolate(phys, 2.0)
        np.testing.assert_allclose(mu, [2.0])

    def test_linear_midpoint(self):
        phys = self._phys()
        mu, _ = ph.interpolate(phys, 1.5)
        np.testing.assert_allclose(mu, [1.0])

    def test_out_of_range(self):
        phys = self._phys()
        with pytest.raises(OutOfRange):
            ph.interpolate(phys, 4.0)

    def test_modality_change_uses_nearest(self):
        phys = self._phys()
        phys.modality[2] = 2
        phys.mu[2] = np.array([3.0, 5.0])
        phys.rho[2] = np.array([0.0, 0.0])
        mu, _ = ph.interpolate(phys, 2.4)
        np.testing.assert_allclose(mu, [2.0])  # nearest grid point is k=2
        mu, _ = ph.interpolate(phys, 2.6)
        np.testing.assert_allclose(mu, [3.0, 5.0])


class TestMomentIdentity:
    def test_constant_physics_zero_residual(self):
        ts = ts_from_paths([3.0 * np.ones(6)] * 4)
        phys = ph.estimate_physics(ph.build_ensemble(ts, 2))
        assert ph.moment_identity_residual(phys) == 0.0

    def test_estimated_physics_below_tolerance(self, fd001_physics):
        for phys in fd001_physics.values():
            assert ph.moment_identity_residual(phys) <= 1e-9

    def test_corrupted_rho_detected(self, fd001_physics):
        phys = next(iter(fd001_physics.values()))
        corrupted = ph.SensorPhysics.from_json(phys.to_json())
        k = len(corrupted.grid) // 2
        corrupted.rho[k] = corrupted.rho[k] + 1.0
        assert ph.moment_identity_residual(corrupted) >= 0.5


class TestSerializationAndEstimator:
    def test_json_round_trip(self, fd001_physics):
        phys = next(iter(fd001_physics.values()))
        clone = ph.SensorPhysics.from_json(phys.to_json())
        np.testing.assert_array_equal(clone.grid, phys.grid)
        np.testing.assert_array_equal(clone.modality, phys.modality)
        for k in range(len(phys.grid)):
            np.testing.assert_array_equal(clone.mu[k], phys.mu[k])
            np.testing.assert_array_equal(clone.rho[k], phys.rho[k])
        np.testing.assert_array_equal(clone.r2, phys.r2)

    def test_schema_tag_checked(self, fd001_physics):
        phys = next(iter(fd001_physics.values()))
        doc = json.loads(phys.to_json())
        doc["schema_version"] = 99
        with pytest.raises(ValueError):
            ph.SensorPhysics.from_json(json.dumps(doc))

    def test_sklearn_estimator_fit(self, small_splits):
        train_ts, _ = small_splits
        est = ph.PhysicsEstimator().fit(train_ts)
        assert set(est.physics_) == set(train_ts.retained_sensor_ids)
        assert est.get_params()["min_alive"] == 8
