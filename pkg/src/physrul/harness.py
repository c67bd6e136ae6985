"""Training harness: physics feature augmentation, per-condition training
with early stopping, test evaluation, and the mu/rho ablation suite."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from . import ingest, lstm
from .errors import EmptyBatch, MissingPhysics
from .ingest import TrajectorySet, WindowBatchSet
from .physics import PhysicsConfig, SensorPhysics, build_ensemble, estimate_physics

logger = logging.getLogger(__name__)

DEFAULT_EPOCHS = {"FD001": 100, "FD002": 1000, "FD003": 100, "FD004": 1000}


@dataclass
class TrainConfig:
    condition: str = "FD001"
    use_mu: bool = False
    use_rho: bool = False
    batch_size: int = 64
    lr: float = 0.001
    epochs: int | None = None  # None: condition default (100 or 1000)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    early_stopping: bool = True
    val_fraction: float = 0.1
    paper_protocol: bool = False  # select best epoch on the test metric instead
    normalize_rul: bool = False
    rul_cap: float | None = None
    hidden_dim: int = 12
    mlp_hidden: int = 12
    grad_clip: float | None = None
    window_len: int = 20
    master_seed: int = 0
    include_extended_zeros: bool = False
    sse_ratio_threshold: float = 0.5
    separation_factor: float = 2.0
    min_alive: int = 8
    feed_both_centroids: bool = False

    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return DEFAULT_EPOCHS.get(self.condition, 100)

    def physics_config(self) -> PhysicsConfig:
        return PhysicsConfig(
            include_extended_zeros=self.include_extended_zeros,
            sse_ratio_threshold=self.sse_ratio_threshold,
            separation_factor=self.separation_factor,
            min_alive=self.min_alive,
        )


def estimate_all_physics(train_ts: TrajectorySet, cfg: PhysicsConfig | None = None) -> dict[int, SensorPhysics]:
    """Physics grids for every retained sensor, from the train split only."""
    cfg = cfg or PhysicsConfig()
    return {sid: estimate_physics(build_ensemble(train_ts, sid), cfg) for sid in train_ts.retained_sensor_ids}


def _per_sensor_lookup(physics: SensorPhysics):
    """Dense (t_max,) lookup arrays; bimodal entries keep both centroids."""
    n = len(physics.grid)
    mu1 = np.empty(n)
    mu2 = np.full(n, np.nan)
    rho1 = np.empty(n)
    rho2 = np.full(n, np.nan)
    for k in range(n):
        mu1[k] = physics.mu[k][0]
        rho1[k] = physics.rho[k][0]
        if physics.modality[k] == 2 and len(physics.mu[k]) == 2:
            mu2[k] = physics.mu[k][1]
            rho2[k] = physics.rho[k][1]
    return mu1, mu2, rho1, rho2


def augment_features(
    features: np.ndarray,
    cycles: np.ndarray,
    physics: dict[int, SensorPhysics],
    sensor_ids: list[int],
    use_mu: bool,
    use_rho: bool,
    feed_both_centroids: bool = False,
) -> np.ndarray:
    """Append per-sensor mu/rho grids to windows.

    ``features`` is (N, T, S); ``cycles`` is (N, T) absolute 1-based cycle
    indices, clamped to the physics grid. At bimodal timesteps the centroid
    nearest to the observed value (and its variance) is fed, keeping the
    feature count fixed; ``feed_both_centroids`` widens the block instead.
    """
    if not use_mu and not use_rho:
        return features
    for sid in sensor_ids:
        if sid not in physics:
            raise MissingPhysics(sid)
    n, t, s = features.shape
    if s != len(sensor_ids):
        raise ValueError("feature column count does not match sensor_ids")

    mu_cols, rho_cols = [], []
    for j, sid in enumerate(sensor_ids):
        phys = physics[sid]
        mu1, mu2, rho1, rho2 = _per_sensor_lookup(phys)
        idx = np.clip(cycles - 1, 0, len(phys.grid) - 1).astype(np.int64)
        m1, m2 = mu1[idx], mu2[idx]
        r1, r2v = rho1[idx], rho2[idx]
        if feed_both_centroids:
            mu_cols.extend([m1, np.where(np.isnan(m2), m1, m2)])
            rho_cols.extend([r1, np.where(np.isnan(r2v), r1, r2v)])
        else:
            x = features[:, :, j]
            pick_second = ~np.isnan(m2) & (np.abs(x - m2) < np.abs(x - m1))
            mu_cols.append(np.where(pick_second, m2, m1))
            rho_cols.append(np.where(pick_second, r2v, r1))
    blocks = [features]
    if use_mu:
        blocks.append(np.stack(mu_cols, axis=2))
    if use_rho:
        blocks.append(np.stack(rho_cols, axis=2))
    return np.concatenate(blocks, axis=2)


def augment_windows(
    windows: WindowBatchSet,
    physics: dict[int, SensorPhysics],
    sensor_ids: list[int],
    use_mu: bool,
    use_rho: bool,
    feed_both_centroids: bool = False,
) -> WindowBatchSet:
    t = windows.window_len
    cycles = windows.end_cycles[:, None] - np.arange(t - 1, -1, -1)[None, :]
    feats = augment_features(
        windows.features, cycles, physics, sensor_ids, use_mu, use_rho, feed_both_centroids
    )
    return WindowBatchSet(
        features=feats,
        targets=windows.targets,
        unit_ids=windows.unit_ids,
        end_cycles=windows.end_cycles,
        window_len=windows.window_len,
        shuffle_seed=windows.shuffle_seed,
    )


@dataclass
class TargetScaler:
    mean: float = 0.0
    std: float = 1.0

    def transform(self, y):
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.std

    def inverse(self, y):
        return np.asarray(y, dtype=np.float64) * self.std + self.mean


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1


def _split_by_unit(windows: WindowBatchSet, val_fraction: float, rng: np.random.Generator):
    units = np.unique(windows.unit_ids)
    n_val = int(round(val_fraction * len(units)))
    if n_val == 0 or n_val >= len(units):
        return np.arange(len(windows)), np.array([], dtype=np.int64)
    val_units = set(rng.choice(units, size=n_val, replace=False).tolist())
    mask = np.array([u in val_units for u in windows.unit_ids])
    return np.nonzero(~mask)[0], np.nonzero(mask)[0]


def train(
    config: TrainConfig,
    windows: WindowBatchSet,
    seed: int,
    selection_windows: WindowBatchSet | None = None,
):
    """Train one model on pre-augmented windows.

    A fraction of training units is held out for epoch selection; the
    checkpoint with the lowest validation MSE is returned. When
    ``selection_windows`` is given (paper_protocol), it replaces the
    validation split for selection. Targets are optionally z-scored; the
    fitted scaler is returned so predictions can be mapped back to cycles.
    """
    rng = np.random.default_rng(seed)
    train_idx, val_idx = _split_by_unit(windows, config.val_fraction, rng)
    if selection_windows is not None:
        train_idx = np.arange(len(windows))
        val_idx = np.array([], dtype=np.int64)

    x_train = windows.features[train_idx]
    y_train_raw = windows.targets[train_idx]
    scaler = TargetScaler()
    if config.normalize_rul:
        std = float(y_train_raw.std())
        scaler = TargetScaler(mean=float(y_train_raw.mean()), std=std if std > 1e-12 else 1.0)
    y_train = scaler.transform(y_train_raw)

    if selection_windows is not None:
        x_val, y_val = selection_windows.features, scaler.transform(selection_windows.targets)
    else:
        x_val, y_val = windows.features[val_idx], scaler.transform(windows.targets[val_idx])

    model = lstm.init_model(
        input_dim=x_train.shape[2],
        hidden_dim=config.hidden_dim,
        mlp_hidden=config.mlp_hidden,
        seed=int(rng.integers(2**63)),
    )
    state = lstm.AdamState.for_model(model)
    history = TrainHistory()
    best = model.copy()
    best_val = np.inf

    epochs = config.resolved_epochs()
    n_train = len(x_train)
    for epoch in range(epochs):
        perm = rng.permutation(n_train)
        epoch_losses = []
        for start in range(0, n_train, config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss, grads = lstm.backward(model, x_train[idx], y_train[idx])
            lstm.adam_step(model, grads, state, lr=config.lr, grad_clip=config.grad_clip)
            epoch_losses.append(loss)
        history.train_loss.append(float(np.mean(epoch_losses)))
        if len(x_val):
            preds, _ = lstm.forward(model, x_val)
            val = lstm.mse_loss(preds, y_val)
        else:
            val = history.train_loss[-1]
        history.val_loss.append(float(val))
        if config.early_stopping and val < best_val:
            best_val = val
            best = model.copy()
            history.best_epoch = epoch

    if not config.early_stopping or history.best_epoch < 0:
        best = model
        history.best_epoch = epochs - 1
    return best, scaler, history


def final_window(
    traj: np.ndarray,
    length: int,
    window_len: int,
    physics: dict[int, SensorPhysics] | None,
    sensor_ids: list[int],
    use_mu: bool,
    use_rho: bool,
    feed_both_centroids: bool = False,
) -> np.ndarray:
    feats = traj[length - window_len : length][None]
    if use_mu or use_rho:
        cycles = np.arange(length - window_len + 1, length + 1)[None, :]
        feats = augment_features(
            feats, cycles, physics, sensor_ids, use_mu, use_rho, feed_both_centroids
        )
    return feats[0]


def evaluate(
    model: lstm.LstmModel,
    scaler: TargetScaler,
    test_ts: TrajectorySet,
    physics: dict[int, SensorPhysics] | None,
    use_mu: bool,
    use_rho: bool,
    window_len: int = 20,
    feed_both_centroids: bool = False,
):
    """One prediction per test unit from its final window; returns
    (mse, l1) in raw cycles against the provided final RUL."""
    preds, targets = [], []
    for unit_id, traj, labels in zip(test_ts.units, test_ts.trajectories, test_ts.rul_labels):
        if len(traj) < window_len:
            logger.warning("test unit %d shorter than window; skipped", unit_id)
            continue
        feats = final_window(
            traj, len(traj), window_len, physics, test_ts.retained_sensor_ids,
            use_mu, use_rho, feed_both_centroids,
        )
        pred, _ = lstm.forward(model, feats)
        preds.append(scaler.inverse(pred)[0])
        targets.append(labels[-1])
    if not preds:
        raise EmptyBatch("no evaluable test units")
    err = np.asarray(preds) - np.asarray(targets)
    return float(np.mean(err**2)), float(np.mean(np.abs(err)))


class LstmRulRegressor(BaseEstimator, RegressorMixin):
    """Sklearn-style facade over the training loop.

    ``fit`` takes a :class:`WindowBatchSet` (already augmented); ``predict``
    maps (N, T, D) windows to RUL in raw cycles.
    """

    def __init__(self, config: TrainConfig | None = None, seed: int = 0):
        self.config = config
        self.seed = seed

    def fit(self, windows: WindowBatchSet, y=None):
        cfg = self.config or TrainConfig()
        self.model_, self.scaler_, self.history_ = train(cfg, windows, self.seed)
        return self

    def predict(self, windows):
        feats = windows.features if isinstance(windows, WindowBatchSet) else np.asarray(windows)
        preds, _ = lstm.forward(self.model_, feats)
        return self.scaler_.inverse(preds)


ABLATION_CELLS = [(False, False), (True, False), (False, True), (True, True)]


@dataclass
class ReportRow:
    condition: str
    use_mu: bool
    use_rho: bool
    per_seed_mse: list[float]
    per_seed_l1: list[float]

    @property
    def mean_mse(self) -> float:
        return float(np.mean(self.per_seed_mse))

    @property
    def mean_l1(self) -> float:
        return float(np.mean(self.per_seed_l1))

    @property
    def std_mse(self) -> float:
        return float(np.std(self.per_seed_mse))


@dataclass
class MetricsReport:
    rows: list[ReportRow]
    seeds: list[int]

    def row(self, use_mu: bool, use_rho: bool, condition: str | None = None) -> ReportRow:
        for r in self.rows:
            if r.use_mu == use_mu and r.use_rho == use_rho and (condition is None or r.condition == condition):
                return r
        raise KeyError((condition, use_mu, use_rho))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["condition", "mu", "rho", "seed", "test_mse", "test_l1"])
            for row in self.rows:
                for seed, mse, l1 in zip(self.seeds, row.per_seed_mse, row.per_seed_l1):
                    writer.writerow(
                        [row.condition, int(row.use_mu), int(row.use_rho), seed, repr(mse), repr(l1)]
                    )

    def write_markdown(self, path) -> None:
        lines = [
            "| Condition | Mu | Rho | Test MSE | Test L1 |",
            "|---|---|---|---|---|",
        ]
        mark = {True: "x", False: "-"}
        for row in self.rows:
            lines.append(
                f"| {row.condition} | {mark[row.use_mu]} | {mark[row.use_rho]} | "
                f"{row.mean_mse:.2f} | {row.mean_l1:.2f} |"
            )
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def run_condition(
    config: TrainConfig,
    train_ts: TrajectorySet,
    test_ts: TrajectorySet,
    physics: dict[int, SensorPhysics] | None = None,
) -> MetricsReport:
    """Run the 4-cell mu/rho ablation grid over the configured seeds."""
    if physics is None:
        physics = estimate_all_physics(train_ts, config.physics_config())
    base_windows = ingest.make_windows(train_ts, config.window_len, seed=config.master_seed)
    rows = []
    for use_mu, use_rho in ABLATION_CELLS:
        windows = augment_windows(
            base_windows, physics, train_ts.retained_sensor_ids,
            use_mu, use_rho, config.feed_both_centroids,
        )
        cell_cfg = replace(config, use_mu=use_mu, use_rho=use_rho)
        mses, l1s = [], []
        for seed in config.seeds:
            model, scaler, _ = train(cell_cfg, windows, seed)
            mse, l1 = evaluate(
                model, scaler, test_ts, physics, use_mu, use_rho,
                config.window_len, config.feed_both_centroids,
            )
            mses.append(mse)
            l1s.append(l1)
        rows.append(ReportRow(config.condition, use_mu, use_rho, mses, l1s))
    return MetricsReport(rows=rows, seeds=list(config.seeds))
