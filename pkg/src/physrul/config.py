"""Flat TOML run configuration with strict unknown-key rejection."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .harness import TrainConfig
from .ingest import DEFAULT_DROP_SENSORS


@dataclass
class RunConfig:
    """Every knob of the pipeline, loadable from a flat TOML file.

    Keys map 1:1 onto field names; unknown keys are rejected.
    """

    condition: str = "FD001"
    master_seed: int = 0
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    drop_sensors: list[int] = field(default_factory=lambda: sorted(DEFAULT_DROP_SENSORS))
    window_len: int = 20
    batch_size: int = 64
    lr: float = 0.001
    epochs: int = -1  # -1: condition default (100 or 1000)
    val_fraction: float = 0.1
    early_stopping: bool = True
    paper_protocol: bool = False
    use_mu: bool = False
    use_rho: bool = False
    normalize_rul: bool = False
    rul_cap: float = -1.0  # -1: no cap
    hidden_dim: int = 12
    mlp_hidden: int = 12
    grad_clip: float = -1.0  # -1: off
    include_extended_zeros: bool = False
    sse_ratio_threshold: float = 0.5
    separation_factor: float = 2.0
    min_alive: int = 8
    feed_both_centroids: bool = False
    gen_n_paths: int = 100
    gen_length: int = -1  # -1: full grid support

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            condition=self.condition,
            use_mu=self.use_mu,
            use_rho=self.use_rho,
            batch_size=self.batch_size,
            lr=self.lr,
            epochs=None if self.epochs < 0 else self.epochs,
            seeds=list(self.seeds),
            early_stopping=self.early_stopping,
            val_fraction=self.val_fraction,
            paper_protocol=self.paper_protocol,
            normalize_rul=self.normalize_rul,
            rul_cap=None if self.rul_cap < 0 else self.rul_cap,
            hidden_dim=self.hidden_dim,
            mlp_hidden=self.mlp_hidden,
            grad_clip=None if self.grad_clip < 0 else self.grad_clip,
            window_len=self.window_len,
            master_seed=self.master_seed,
            include_extended_zeros=self.include_extended_zeros,
            sse_ratio_threshold=self.sse_ratio_threshold,
            separation_factor=self.separation_factor,
            min_alive=self.min_alive,
            feed_both_centroids=self.feed_both_centroids,
        )

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()
        ).hexdigest()[:16]


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    current = getattr(RunConfig(), key)
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("1", "true", "yes"):
            return True
        if str(value).lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"cannot parse boolean for {key!r}: {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, list):
        if isinstance(value, str):
            value = [v for v in value.split(",") if v]
        return [int(v) for v in value]
    return str(value)


def load_config(path: str | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Build a RunConfig from an optional TOML file plus key=value overrides."""
    data = {}
    if path is not None:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in data.items()})
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override must be key=value, got {item!r}")
        key, value = item.split("=", 1)
        if key not in known:
            raise ValueError(f"unknown config key in override: {key!r}")
        setattr(cfg, key, _coerce(key, value))
    return cfg
