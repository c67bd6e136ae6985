"""Command-line entry point: ingest / estimate / generate / train / evaluate /
ablate / gradcheck subcommands with config-driven, reproducible runs."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__, generate, harness, ingest, lstm
from .config import RunConfig, load_config
from .errors import PhysrulError
from .physics import SensorPhysics

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2

GRADCHECK_THRESHOLD = 1e-5


def _add_common(parser):
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--data-dir", default=".")
    parser.add_argument("--out-dir", default="out")
    parser.add_argument("--seed", type=int, default=None, help="override master_seed")
    parser.add_argument("--condition", default=None)
    parser.add_argument("--quiet", action="store_true")
    parser.add_argument("--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="physrul")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ingest", "estimate", "generate", "train", "evaluate", "ablate", "gradcheck"):
        p = sub.add_parser(name)
        _add_common(p)
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config, args.overrides)
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.condition is not None:
        cfg.condition = args.condition
    return cfg


class OutDirLock:
    """Reject concurrent invocations on the same out_dir."""

    def __init__(self, out_dir):
        self.path = os.path.join(out_dir, ".physrul.lock")

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise PhysrulError(f"out_dir is locked by another run: {self.path}") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        if os.path.exists(self.path):
            os.remove(self.path)


def _write_manifest(out_dir, cfg: RunConfig, command: str) -> None:
    manifest = {
        "command": command,
        "config": cfg.__dict__,
        "config_hash": cfg.config_hash(),
        "seeds": list(cfg.seeds),
        "master_seed": cfg.master_seed,
        "physrul_version": __version__,
        "numpy_version": np.__version__,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load_splits(cfg: RunConfig, args):
    drop = frozenset(cfg.drop_sensors)
    cap = None if cfg.rul_cap < 0 else cfg.rul_cap
    return ingest.load_condition(args.data_dir, cfg.condition, drop_ids=drop, rul_cap=cap)


def _splits_from_out(cfg: RunConfig, args):
    train_path = os.path.join(args.out_dir, f"train_{cfg.condition}.npz")
    test_path = os.path.join(args.out_dir, f"test_{cfg.condition}.npz")
    if not os.path.exists(train_path):
        return _load_splits(cfg, args)
    train_ts = ingest.TrajectorySet.load(train_path)
    test_ts = ingest.TrajectorySet.load(test_path) if os.path.exists(test_path) else None
    return train_ts, test_ts


def _physics_paths(out_dir, condition):
    return os.path.join(out_dir, f"physics_{condition}.json")


def _load_or_estimate_physics(cfg: RunConfig, args, train_ts):
    path = _physics_paths(args.out_dir, cfg.condition)
    if os.path.exists(path):
        with open(path) as fh:
            doc = json.load(fh)
        return {int(k): SensorPhysics.from_json(json.dumps(v)) for k, v in doc.items()}
    return harness.estimate_all_physics(train_ts, cfg.train_config().physics_config())


def cmd_ingest(cfg, args):
    train_ts, test_ts = _load_splits(cfg, args)
    train_ts.save(os.path.join(args.out_dir, f"train_{cfg.condition}.npz"))
    if test_ts is not None:
        test_ts.save(os.path.join(args.out_dir, f"test_{cfg.condition}.npz"))
    logger.info("ingested %s: %d train units", cfg.condition, train_ts.n_units)
    return EXIT_OK


def cmd_estimate(cfg, args):
    train_ts, _ = _splits_from_out(cfg, args)
    physics = harness.estimate_all_physics(train_ts, cfg.train_config().physics_config())
    doc = {str(sid): json.loads(p.to_json()) for sid, p in physics.items()}
    with open(_physics_paths(args.out_dir, cfg.condition), "w") as fh:
        json.dump(doc, fh)
    logger.info("estimated physics for %d sensors", len(physics))
    return EXIT_OK


def cmd_generate(cfg, args):
    train_ts, _ = _splits_from_out(cfg, args)
    physics = _load_or_estimate_physics(cfg, args, train_ts)
    plist = [physics[sid] for sid in sorted(physics)]
    length = cfg.gen_length if cfg.gen_length > 0 else len(plist[0].grid)
    dataset = generate.generate_dataset(plist, cfg.gen_n_paths, length, cfg.master_seed)
    generate.write_dataset_csv(
        dataset,
        os.path.join(args.out_dir, f"synthetic_{cfg.condition}.csv"),
        os.path.join(args.out_dir, f"synthetic_{cfg.condition}.json"),
        cfg.master_seed,
    )
    return EXIT_OK


def cmd_train(cfg, args):
    train_ts, _ = _splits_from_out(cfg, args)
    physics = _load_or_estimate_physics(cfg, args, train_ts)
    tc = cfg.train_config()
    windows = ingest.make_windows(train_ts, tc.window_len, seed=cfg.master_seed)
    windows = harness.augment_windows(
        windows, physics, train_ts.retained_sensor_ids, tc.use_mu, tc.use_rho, tc.feed_both_centroids
    )
    seed = tc.seeds[0] if tc.seeds else cfg.master_seed
    model, scaler, history = harness.train(tc, windows, seed)
    meta = {
        "scaler_mean": scaler.mean,
        "scaler_std": scaler.std,
        "use_mu": tc.use_mu,
        "use_rho": tc.use_rho,
        "config_hash": cfg.config_hash(),
        "seed": seed,
    }
    lstm.save_checkpoint(
        os.path.join(args.out_dir, f"model_{cfg.condition}.npz"),
        model,
        lstm.AdamState.for_model(model),
        meta,
    )
    with open(os.path.join(args.out_dir, f"history_{cfg.condition}.json"), "w") as fh:
        json.dump(
            {"train_loss": history.train_loss, "val_loss": history.val_loss, "best_epoch": history.best_epoch},
            fh,
        )
    return EXIT_OK


def cmd_evaluate(cfg, args):
    train_ts, test_ts = _splits_from_out(cfg, args)
    if test_ts is None:
        raise FileNotFoundError(
            os.path.join(args.data_dir, f"RUL_{cfg.condition}.txt")
        )
    physics = _load_or_estimate_physics(cfg, args, train_ts)
    model, _, meta = lstm.load_checkpoint(os.path.join(args.out_dir, f"model_{cfg.condition}.npz"))
    scaler = harness.TargetScaler(meta["scaler_mean"], meta["scaler_std"])
    mse, l1 = harness.evaluate(
        model, scaler, test_ts, physics, meta["use_mu"], meta["use_rho"], cfg.window_len
    )
    with open(os.path.join(args.out_dir, f"metrics_{cfg.condition}.json"), "w") as fh:
        json.dump({"test_mse": mse, "test_l1": l1}, fh)
    print(f"{cfg.condition}: test_mse={mse:.4f} test_l1={l1:.4f}")
    return EXIT_OK


def cmd_ablate(cfg, args):
    train_ts, test_ts = _load_splits(cfg, args)
    if test_ts is None:
        raise FileNotFoundError(os.path.join(args.data_dir, f"test_{cfg.condition}.txt"))
    report = harness.run_condition(cfg.train_config(), train_ts, test_ts)
    report.write_csv(os.path.join(args.out_dir, "report.csv"))
    report.write_markdown(os.path.join(args.out_dir, "report.md"))
    for row in report.rows:
        print(
            f"{row.condition} mu={int(row.use_mu)} rho={int(row.use_rho)} "
            f"mse={row.mean_mse:.4f} l1={row.mean_l1:.4f}"
        )
    return EXIT_OK


def cmd_gradcheck(cfg, args):
    rng = np.random.default_rng(cfg.master_seed)
    model = lstm.init_model(input_dim=6, hidden_dim=cfg.hidden_dim, mlp_hidden=cfg.mlp_hidden,
                            seed=int(rng.integers(2**63)))
    windows = rng.standard_normal((2, cfg.window_len, 6))
    targets = rng.standard_normal(2)
    err = lstm.grad_check(model, windows, targets)
    print(f"gradcheck max relative error: {err:.3e}")
    return EXIT_OK if err <= GRADCHECK_THRESHOLD else EXIT_VALIDATION


COMMANDS = {
    "ingest": cmd_ingest,
    "estimate": cmd_estimate,
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    os.makedirs(args.out_dir, exist_ok=True)
    try:
        with OutDirLock(args.out_dir):
            _write_manifest(args.out_dir, cfg, args.command)
            return COMMANDS[args.command](cfg, args)
    except (OSError, PhysrulError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
