"""Per-timestep mean/variance function estimation from path ensembles.

Each sensor's multi-unit recordings are aligned on a common cycle grid
(shorter paths zero-extended), and at every grid point the cross-sectional
distribution is summarized by 1-D K-means: one centroid when unimodal, two
when bimodal. Cluster centroids and within-cluster variances form the
mean-function and variance-function grids consumed downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import DegenerateInput, MissingPhysics, OutOfRange, TooFewPaths
from .ingest import TrajectorySet

PHYSICS_SCHEMA_VERSION = 1


@dataclass
class PathEnsemble:
    sensor_id: int
    paths: np.ndarray  # (n_paths, t_max), zero-extended
    original_lengths: np.ndarray  # (n_paths,)
    grid: np.ndarray  # (t_max,) cycle indices 1..t_max

    @property
    def t_max(self) -> int:
        return int(self.grid[-1])


@dataclass
class ClusterResult:
    centroids: np.ndarray  # ascending
    assignments: np.ndarray
    within_sse: float
    weights: np.ndarray
    degenerate: bool = False

    @property
    def k(self) -> int:
        return len(self.centroids)


@dataclass
class SensorPhysics:
    """Estimated physics grids for one sensor (normalized units)."""

    sensor_id: int
    grid: np.ndarray  # (n,) cycle indices
    modality: np.ndarray  # (n,) 1 or 2
    mu: list[np.ndarray]  # per-timestep centroid list, ascending
    rho: list[np.ndarray]  # matching within-cluster variances
    weights: list[np.ndarray]  # matching cluster fractions
    r2: np.ndarray  # (n,) pooled second moment E[S^2]
    a_bar: np.ndarray  # (n,) drift estimate, central differences of pooled mean
    alive: np.ndarray  # (n,) paths not yet zero-extended

    def pooled_mu(self) -> np.ndarray:
        return np.array([float(w @ m) for w, m in zip(self.weights, self.mu)])

    def pooled_rho(self) -> np.ndarray:
        out = np.empty(len(self.grid))
        for k, (w, m, r) in enumerate(zip(self.weights, self.mu, self.rho)):
            pm = float(w @ m)
            out[k] = float(w @ (r + m**2)) - pm**2
        return out

    def to_json(self) -> str:
        doc = {
            "schema_version": PHYSICS_SCHEMA_VERSION,
            "sensor_id": self.sensor_id,
            "grid": self.grid.tolist(),
            "timesteps": [
                {
                    "k": int(self.grid[i]),
                    "modality": int(self.modality[i]),
                    "mu": self.mu[i].tolist(),
                    "rho": self.rho[i].tolist(),
                    "weights": self.weights[i].tolist(),
                    "r2": float(self.r2[i]),
                    "a_bar": float(self.a_bar[i]),
                    "alive": int(self.alive[i]),
                }
                for i in range(len(self.grid))
            ],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "SensorPhysics":
        doc = json.loads(text)
        if doc.get("schema_version") != PHYSICS_SCHEMA_VERSION:
            raise ValueError(f"unsupported physics schema {doc.get('schema_version')!r}")
        steps = doc["timesteps"]
        return cls(
            sensor_id=int(doc["sensor_id"]),
            grid=np.asarray(doc["grid"], dtype=np.float64),
            modality=np.array([s["modality"] for s in steps], dtype=np.int64),
            mu=[np.asarray(s["mu"], dtype=np.float64) for s in steps],
            rho=[np.asarray(s["rho"], dtype=np.float64) for s in steps],
            weights=[np.asarray(s["weights"], dtype=np.float64) for s in steps],
            r2=np.array([s["r2"] for s in steps], dtype=np.float64),
            a_bar=np.array([s["a_bar"] for s in steps], dtype=np.float64),
            alive=np.array([s["alive"] for s in steps], dtype=np.int64),
        )


def build_ensemble(ts: TrajectorySet, sensor_id: int) -> PathEnsemble:
    """Align one sensor's paths on a common grid, zero-extending short ones."""
    if ts.n_units < 2:
        raise TooFewPaths("need at least 2 trajectories")
    if sensor_id not in ts.retained_sensor_ids:
        raise MissingPhysics(sensor_id)
    col = ts.retained_sensor_ids.index(sensor_id)
    lengths = np.asarray(ts.lengths(), dtype=np.int64)
    t_max = int(lengths.max())
    paths = np.zeros((ts.n_units, t_max))
    for i, traj in enumerate(ts.trajectories):
        paths[i, : len(traj)] = traj[:, col]
    return PathEnsemble(
        sensor_id=sensor_id,
        paths=paths,
        original_lengths=lengths,
        grid=np.arange(1, t_max + 1, dtype=np.float64),
    )


def _lloyd_2means(samples: np.ndarray, tol: float, max_iter: int):
    """Lloyd's algorithm on scalars, seeded at (min, max). Returns the
    centroid pair plus the per-iteration SSE trace."""
    c = np.array([samples.min(), samples.max()], dtype=np.float64)
    history = []
    for _ in range(max_iter):
        assign = (samples > (c[0] + c[1]) / 2).astype(np.int64)
        for j in range(2):
            if not np.any(assign == j):
                # empty cluster: reseed at the point farthest from the other centroid
                far = np.argmax(np.abs(samples - c[1 - j]))
                assign[far] = j
        new_c = np.array([samples[assign == j].mean() for j in range(2)])
        sse = sum(float(((samples[assign == j] - new_c[j]) ** 2).sum()) for j in range(2))
        history.append(sse)
        if np.abs(new_c - c).max() < tol:
            c = new_c
            break
        c = new_c
    return c, assign, history


def _best_sorted_split(samples: np.ndarray):
    """Exact 1-D 2-means via the contiguity of optima in sorted order.

    Scans all n-1 splits of the sorted samples with prefix sums; O(n log n).
    """
    order = np.argsort(samples, kind="stable")
    x = samples[order]
    n = len(x)
    csum = np.cumsum(x)
    csq = np.cumsum(x * x)
    m = np.arange(1, n)  # left cluster size
    left_sum, left_sq = csum[:-1], csq[:-1]
    right_sum, right_sq = csum[-1] - left_sum, csq[-1] - left_sq
    sse = (left_sq - left_sum**2 / m) + (right_sq - right_sum**2 / (n - m))
    best = int(np.argmin(sse))
    split = best + 1
    centroids = np.array([left_sum[best] / split, right_sum[best] / (n - split)])
    assign = np.empty(n, dtype=np.int64)
    assign[order[:split]] = 0
    assign[order[split:]] = 1
    return centroids, assign, float(sse[best])


def kmeans_1d(
    samples,
    k: int,
    seed: int = 0,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> ClusterResult:
    """Cluster scalars into 1 or 2 groups.

    K=1 is the arithmetic mean. K=2 runs Lloyd from the (min, max) seed and
    then snaps to the globally optimal sorted split, which Lloyd can miss on
    heavily unbalanced inputs. Identical samples with K=2 yield a degenerate
    single-cluster result rather than a zero-weight cluster.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    if len(samples) < k:
        raise DegenerateInput(f"{len(samples)} samples for k={k}")
    if tol <= 0:
        raise ValueError("tol must be positive")

    if k == 1:
        c = float(samples.mean())
        sse = float(((samples - c) ** 2).sum())
        return ClusterResult(
            centroids=np.array([c]),
            assignments=np.zeros(len(samples), dtype=np.int64),
            within_sse=sse,
            weights=np.array([1.0]),
        )

    if samples.max() == samples.min():
        return ClusterResult(
            centroids=np.array([float(samples[0])]),
            assignments=np.zeros(len(samples), dtype=np.int64),
            within_sse=0.0,
            weights=np.array([1.0]),
            degenerate=True,
        )

    c_lloyd, assign, history = _lloyd_2means(samples, tol, max_iter)
    c_exact, assign_exact, sse_exact = _best_sorted_split(samples)
    if sse_exact < history[-1]:
        c, assign = c_exact, assign_exact
        sse = sse_exact
    else:
        c, sse = c_lloyd, history[-1]
    if c[0] > c[1]:
        c = c[::-1]
        assign = 1 - assign
    weights = np.array([float((assign == j).mean()) for j in range(2)])
    return ClusterResult(
        centroids=np.asarray(c, dtype=np.float64),
        assignments=assign,
        within_sse=float(sse),
        weights=weights,
    )


def lloyd_sse_trace(samples, tol: float = 1e-12, max_iter: int = 200) -> list[float]:
    """Per-iteration SSE of the raw Lloyd run (before the exact polish)."""
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.max() == samples.min():
        return [0.0]
    _, _, history = _lloyd_2means(samples, tol, max_iter)
    return history


def detect_modality(
    samples,
    sse_ratio_threshold: float = 0.5,
    separation_factor: float = 2.0,
) -> int:
    """Decide between a unimodal and a bimodal cross-section.

    Bimodal iff splitting into two clusters removes most of the spread
    (SSE ratio below threshold) and the centroids are well separated
    relative to the pooled standard deviation. Fewer than 8 samples is
    always treated as unimodal.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if len(samples) < 8:
        return 1
    one = kmeans_1d(samples, 1)
    if one.within_sse <= 0.0:
        return 1
    two = kmeans_1d(samples, 2)
    if two.degenerate:
        return 1
    ratio = two.within_sse / one.within_sse
    separation = float(two.centroids[1] - two.centroids[0])
    pooled_std = np.sqrt(one.within_sse / len(samples))
    # >= so that an exact half/half split (separation == 2 * pooled std) counts
    return 2 if (ratio < sse_ratio_threshold and separation >= separation_factor * pooled_std) else 1


@dataclass
class PhysicsConfig:
    include_extended_zeros: bool = False
    sse_ratio_threshold: float = 0.5
    separation_factor: float = 2.0
    min_alive: int = 8
    kmeans_tol: float = 1e-12
    kmeans_max_iter: int = 200


def estimate_physics(ensemble: PathEnsemble, config: PhysicsConfig | None = None) -> SensorPhysics:
    """Estimate per-timestep (mu, rho) grids for one sensor.

    Statistics at cycle t use only paths still alive at t unless
    ``include_extended_zeros`` is set. Timesteps with fewer than
    ``min_alive`` survivors reuse the last valid estimate.
    """
    cfg = config or PhysicsConfig()
    n = ensemble.paths.shape[1]
    modality = np.empty(n, dtype=np.int64)
    mu: list[np.ndarray] = []
    rho: list[np.ndarray] = []
    weights: list[np.ndarray] = []
    r2 = np.empty(n)
    alive = np.empty(n, dtype=np.int64)

    # never freeze estimation just because the whole ensemble is small
    threshold = min(cfg.min_alive, ensemble.paths.shape[0])
    last = None
    for k in range(n):
        alive_mask = ensemble.original_lengths > k
        alive[k] = int(alive_mask.sum())
        if cfg.include_extended_zeros:
            samples = ensemble.paths[:, k]
        else:
            samples = ensemble.paths[alive_mask, k]
        if len(samples) < threshold and last is not None:
            modality[k], mu_k, rho_k, w_k, r2[k] = last
        else:
            m = detect_modality(samples, cfg.sse_ratio_threshold, cfg.separation_factor)
            res = kmeans_1d(samples, m, tol=cfg.kmeans_tol, max_iter=cfg.kmeans_max_iter)
            if res.degenerate:
                m = 1
            mu_k = res.centroids.copy()
            rho_k = np.array(
                [float(samples[res.assignments == j].var()) for j in range(res.k)]
            )
            w_k = res.weights.copy()
            modality[k] = m
            r2[k] = float((samples**2).mean())
            last = (modality[k], mu_k, rho_k, w_k, r2[k])
        mu.append(mu_k)
        rho.append(rho_k)
        weights.append(w_k)

    pooled = np.array([float(w @ m) for w, m in zip(weights, mu)])
    a_bar = np.gradient(pooled, 1.0) if n > 1 else np.zeros(n)
    return SensorPhysics(
        sensor_id=ensemble.sensor_id,
        grid=ensemble.grid.copy(),
        modality=modality,
        mu=mu,
        rho=rho,
        weights=weights,
        r2=r2,
        a_bar=a_bar,
        alive=alive,
    )


def interpolate(physics: SensorPhysics, t: float):
    """Piecewise-linear (mu, rho) at time ``t``; nearest-grid values across a
    modality change."""
    grid = physics.grid
    if t < grid[0] or t > grid[-1]:
        raise OutOfRange(f"t={t} outside [{grid[0]}, {grid[-1]}]")
    idx = int(np.searchsorted(grid, t, side="right")) - 1
    if idx >= len(grid) - 1 or grid[idx] == t:
        return physics.mu[idx].copy(), physics.rho[idx].copy()
    lo, hi = idx, idx + 1
    if physics.modality[lo] != physics.modality[hi]:
        near = lo if (t - grid[lo]) <= (grid[hi] - t) else hi
        return physics.mu[near].copy(), physics.rho[near].copy()
    frac = (t - grid[lo]) / (grid[hi] - grid[lo])
    mu = physics.mu[lo] * (1 - frac) + physics.mu[hi] * frac
    rho = physics.rho[lo] * (1 - frac) + physics.rho[hi] * frac
    return mu, rho


def moment_identity_residual(physics: SensorPhysics) -> float:
    """Max interior defect of the discrete identity d(rho)/dt = dR/dt - 2 mu a_bar.

    One shared central-difference stencil is used throughout, with the mu
    factor taken as the stencil midpoint average so the discrete product rule
    is exact; on consistently estimated grids the residual is at rounding
    level.
    """
    pm = physics.pooled_mu()
    pr = physics.pooled_rho()
    r2 = physics.r2
    n = len(pm)
    if n < 3:
        return 0.0
    d_rho = (pr[2:] - pr[:-2]) / 2.0
    d_r2 = (r2[2:] - r2[:-2]) / 2.0
    a_bar = (pm[2:] - pm[:-2]) / 2.0
    mu_mid = (pm[2:] + pm[:-2]) / 2.0
    return float(np.abs(d_rho - (d_r2 - 2.0 * mu_mid * a_bar)).max())


class PhysicsEstimator(BaseEstimator):
    """Sklearn-style wrapper estimating physics grids for every retained sensor.

    ``fit`` consumes a :class:`TrajectorySet`; the result is the
    ``physics_`` dict keyed by original sensor id.
    """

    def __init__(
        self,
        include_extended_zeros: bool = False,
        sse_ratio_threshold: float = 0.5,
        separation_factor: float = 2.0,
        min_alive: int = 8,
    ):
        self.include_extended_zeros = include_extended_zeros
        self.sse_ratio_threshold = sse_ratio_threshold
        self.separation_factor = separation_factor
        self.min_alive = min_alive

    def fit(self, trajectory_set: TrajectorySet, y=None):
        cfg = PhysicsConfig(
            include_extended_zeros=self.include_extended_zeros,
            sse_ratio_threshold=self.sse_ratio_threshold,
            separation_factor=self.separation_factor,
            min_alive=self.min_alive,
        )
        self.physics_ = {
            sid: estimate_physics(build_ensemble(trajectory_set, sid), cfg)
            for sid in trajectory_set.retained_sensor_ids
        }
        return self
