"""C-MAPSS-format ingestion: parsing, RUL labels, sensor selection, windowing.

The text files carry 26 whitespace-separated columns per row:
unit id, cycle, 3 operational settings, 21 sensor readings.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyBatch,
    MalformedLine,
    MissingRulFile,
    NonContiguousCycles,
)

logger = logging.getLogger(__name__)

SENSOR_COUNT = 21
OP_SETTING_COUNT = 3
FIELDS_PER_RECORD = 2 + OP_SETTING_COUNT + SENSOR_COUNT

#: Sensor indices dropped from the raw files. Index 22 does not exist in the
#: 21-column layout and is ignored with a warning at selection time.
DEFAULT_DROP_SENSORS = frozenset({1, 5, 6, 10, 16, 18, 19, 22})

WINDOW_LEN = 20

_STD_EPS = 1e-12


@dataclass(frozen=True)
class RawRecord:
    unit_id: int
    cycle: int
    op_settings: tuple[float, float, float]
    sensor_values: tuple[float, ...]


@dataclass
class TrajectorySet:
    """Per-unit sensor matrices with RUL labels and normalization metadata."""

    units: list[int]
    trajectories: list[np.ndarray]  # each (n_cycles, n_retained), z-scored
    retained_sensor_ids: list[int]  # original 1-based sensor indices
    rul_labels: list[np.ndarray]  # each (n_cycles,)
    norm_mean: np.ndarray  # (n_retained,) raw-unit mean
    norm_std: np.ndarray  # (n_retained,) raw-unit std (pre-guard)
    split_tag: str  # "train" | "test"

    def __post_init__(self):
        for traj, labels in zip(self.trajectories, self.rul_labels):
            if len(traj) != len(labels):
                raise ValueError("label vector length differs from cycle count")

    @property
    def n_units(self) -> int:
        return len(self.units)

    def lengths(self) -> list[int]:
        return [len(t) for t in self.trajectories]

    def save(self, path) -> None:
        arrays = {}
        for i, (traj, labels) in enumerate(zip(self.trajectories, self.rul_labels)):
            arrays[f"traj_{i}"] = traj
            arrays[f"rul_{i}"] = labels
        np.savez_compressed(
            path,
            units=np.asarray(self.units, dtype=np.int64),
            retained=np.asarray(self.retained_sensor_ids, dtype=np.int64),
            norm_mean=self.norm_mean,
            norm_std=self.norm_std,
            split_tag=np.asarray(self.split_tag),
            **arrays,
        )

    @classmethod
    def load(cls, path) -> "TrajectorySet":
        with np.load(path, allow_pickle=False) as data:
            units = [int(u) for u in data["units"]]
            return cls(
                units=units,
                trajectories=[data[f"traj_{i}"] for i in range(len(units))],
                retained_sensor_ids=[int(s) for s in data["retained"]],
                rul_labels=[data[f"rul_{i}"] for i in range(len(units))],
                norm_mean=data["norm_mean"],
                norm_std=data["norm_std"],
                split_tag=str(data["split_tag"]),
            )


@dataclass
class WindowBatchSet:
    """Shuffled fixed-length training windows with end-of-window RUL targets."""

    features: np.ndarray  # (n_windows, window_len, feature_dim)
    targets: np.ndarray  # (n_windows,)
    unit_ids: np.ndarray  # (n_windows,)
    end_cycles: np.ndarray  # (n_windows,) 1-based cycle of the last row
    window_len: int
    shuffle_seed: int

    def __len__(self) -> int:
        return len(self.targets)


def parse_cmapss_file(stream) -> list[RawRecord]:
    """Parse one trajectory file into records, preserving file order.

    ``stream`` is an iterable of lines (an open text file works). Blank lines
    are skipped; anything else must hold at least 26 numeric tokens.
    """
    records = []
    for line_no, line in enumerate(stream, start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) < FIELDS_PER_RECORD:
            raise MalformedLine(line_no, f"expected {FIELDS_PER_RECORD} fields, got {len(tokens)}")
        try:
            values = [float(tok) for tok in tokens[:FIELDS_PER_RECORD]]
        except ValueError:
            raise MalformedLine(line_no, "non-numeric token") from None
        records.append(
            RawRecord(
                unit_id=int(values[0]),
                cycle=int(values[1]),
                op_settings=tuple(values[2 : 2 + OP_SETTING_COUNT]),
                sensor_values=tuple(values[2 + OP_SETTING_COUNT :]),
            )
        )
    _check_contiguous(group_by_unit(records))
    return records


def group_by_unit(records: list[RawRecord]) -> dict[int, list[RawRecord]]:
    groups: dict[int, list[RawRecord]] = {}
    for rec in records:
        groups.setdefault(rec.unit_id, []).append(rec)
    return groups


def _check_contiguous(groups: dict[int, list[RawRecord]]) -> None:
    for unit_id, recs in groups.items():
        cycles = [r.cycle for r in recs]
        if cycles != list(range(1, len(cycles) + 1)):
            raise NonContiguousCycles(unit_id)


def read_rul_file(stream) -> list[int]:
    """Read the per-unit final-RUL file (one integer per line)."""
    out = []
    for line in stream:
        line = line.strip()
        if line:
            out.append(int(float(line)))
    return out


def compute_rul_labels(
    groups: dict[int, list[RawRecord]],
    split: str,
    provided_final_rul: dict[int, int] | None = None,
) -> dict[int, np.ndarray]:
    """RUL label vector per unit.

    Train units run to failure: label(t) = L - t, ending at 0. Test units are
    truncated; label(t) = r + (L - t) with r the provided final RUL.
    """
    labels = {}
    for unit_id, recs in groups.items():
        length = len(recs)
        base = np.arange(length - 1, -1, -1, dtype=np.float64)
        if split == "train":
            labels[unit_id] = base
        elif split == "test":
            if provided_final_rul is None or unit_id not in provided_final_rul:
                raise MissingRulFile(f"no final RUL provided for test unit {unit_id}")
            labels[unit_id] = base + float(provided_final_rul[unit_id])
        else:
            raise ValueError(f"unknown split {split!r}")
    return labels


def select_and_normalize(
    records: list[RawRecord],
    split: str,
    drop_ids: frozenset[int] | set[int] = DEFAULT_DROP_SENSORS,
    stats: tuple[np.ndarray, np.ndarray] | None = None,
    provided_final_rul: dict[int, int] | None = None,
    rul_cap: float | None = None,
) -> TrajectorySet:
    """Drop sensors, z-score the rest, and attach RUL labels.

    ``stats`` carries (mean, std) computed on the train split; pass the train
    set's values when building the test set. Constant sensors are guarded so
    they normalize to all-zero columns.
    """
    for idx in sorted(drop_ids):
        if not 1 <= idx <= SENSOR_COUNT:
            logger.warning("drop index %d outside sensor range 1..%d; ignored", idx, SENSOR_COUNT)
    effective_drop = {i for i in drop_ids if 1 <= i <= SENSOR_COUNT}
    retained = [i for i in range(1, SENSOR_COUNT + 1) if i not in effective_drop]

    groups = group_by_unit(records)
    labels = compute_rul_labels(groups, split, provided_final_rul)
    if rul_cap is not None:
        labels = {u: np.minimum(v, float(rul_cap)) for u, v in labels.items()}

    units = list(groups.keys())
    cols = [i - 1 for i in retained]
    raw = {
        u: np.array([[r.sensor_values[c] for c in cols] for r in groups[u]], dtype=np.float64)
        for u in units
    }

    if stats is None:
        stacked = np.concatenate([raw[u] for u in units], axis=0)
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
    else:
        mean, std = (np.asarray(stats[0], dtype=np.float64), np.asarray(stats[1], dtype=np.float64))
        if len(mean) != len(retained) or len(std) != len(retained):
            raise ValueError("provided stats do not cover all retained sensors")
    safe_std = np.where(std < _STD_EPS, 1.0, std)

    return TrajectorySet(
        units=units,
        trajectories=[(raw[u] - mean) / safe_std for u in units],
        retained_sensor_ids=retained,
        rul_labels=[labels[u] for u in units],
        norm_mean=mean,
        norm_std=std,
        split_tag=split,
    )


def denormalize(ts: TrajectorySet, normalized: np.ndarray) -> np.ndarray:
    safe_std = np.where(ts.norm_std < _STD_EPS, 1.0, ts.norm_std)
    return normalized * safe_std + ts.norm_mean


def make_windows(ts: TrajectorySet, window_len: int = WINDOW_LEN, seed: int = 0) -> WindowBatchSet:
    """Tile non-overlapping windows backward from each trajectory's end.

    The final cycle is always covered; a leading remainder shorter than
    ``window_len`` is discarded. Units shorter than one window are skipped
    with a warning. Window order is shuffled by a seeded PRNG.
    """
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    feats, targets, unit_ids, end_cycles = [], [], [], []
    for unit_id, traj, labels in zip(ts.units, ts.trajectories, ts.rul_labels):
        length = len(traj)
        n_windows = length // window_len
        if n_windows == 0:
            logger.warning("unit %d: trajectory length %d < window %d; skipped", unit_id, length, window_len)
            continue
        for j in range(n_windows):
            end = length - j * window_len  # 1-based end cycle
            feats.append(traj[end - window_len : end])
            targets.append(labels[end - 1])
            unit_ids.append(unit_id)
            end_cycles.append(end)
    if not feats:
        raise EmptyBatch("no windows produced")
    features = np.stack(feats)
    targets_arr = np.asarray(targets, dtype=np.float64)
    unit_arr = np.asarray(unit_ids, dtype=np.int64)
    end_arr = np.asarray(end_cycles, dtype=np.int64)
    perm = np.random.default_rng(seed).permutation(len(features))
    return WindowBatchSet(
        features=features[perm],
        targets=targets_arr[perm],
        unit_ids=unit_arr[perm],
        end_cycles=end_arr[perm],
        window_len=window_len,
        shuffle_seed=seed,
    )


def load_condition(data_dir, condition: str, drop_ids=DEFAULT_DROP_SENSORS, rul_cap=None):
    """Read train/test/RUL files for one condition and build both splits."""
    import os

    train_path = os.path.join(data_dir, f"train_{condition}.txt")
    test_path = os.path.join(data_dir, f"test_{condition}.txt")
    rul_path = os.path.join(data_dir, f"RUL_{condition}.txt")

    with open(train_path) as fh:
        train_records = parse_cmapss_file(fh)
    train_ts = select_and_normalize(train_records, "train", drop_ids=drop_ids, rul_cap=rul_cap)

    test_ts = None
    if os.path.exists(test_path):
        with open(test_path) as fh:
            test_records = parse_cmapss_file(fh)
        if not os.path.exists(rul_path):
            raise MissingRulFile(f"missing {rul_path}")
        with open(rul_path) as fh:
            final_ruls = read_rul_file(fh)
        test_units = list(group_by_unit(test_records).keys())
        provided = dict(zip(test_units, final_ruls))
        test_ts = select_and_normalize(
            test_records,
            "test",
            drop_ids=drop_ids,
            stats=(train_ts.norm_mean, train_ts.norm_std),
            provided_final_rul=provided,
            rul_cap=rul_cap,
        )
    return train_ts, test_ts
