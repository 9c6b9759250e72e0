"""Command-line entry point.

Subcommands: pretrain, distill, probe, features, dcor, report.
Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import (
    ExperimentConfig,
    apply_overrides,
    config_digest,
    default_config,
    load_config,
    serialize_config,
)
from .data import Dataset, SyntheticSpec, make_synthetic, read_matrix, read_stl10, write_matrix
from .dcor import dcor_stat
from .descriptors import apply_bank
from .errors import ConfigError, DataError, NumericAbort
from .evalsuite import ProbeConfig, ablation_report, linear_probe
from .model import load_checkpoint
from .seeds import FEATURE_AUGMENT, stream
from .tensor import set_default_dtype
from .train import Trainer


def _limit_threads() -> None:
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(1)
    except Exception:
        pass


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config()
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed={args.seed}")
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def _load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset | None]:
    d = cfg.data
    if d.source == "synthetic":
        spec = SyntheticSpec(
            classes=d.classes,
            image_size=d.image_size,
            train_per_class=d.train_per_class,
            test_per_class=d.test_per_class,
            frequency=d.frequency,
            phase_jitter=d.phase_jitter,
            noise=d.noise,
            seed=cfg.train.seed,
        )
        return make_synthetic(spec)
    if not d.stl10_images:
        raise ConfigError("data.source=stl10 needs data.stl10_images")
    train = read_stl10(
        d.stl10_images,
        d.stl10_labels or None,
        limit=d.limit or None,
        image_size=d.image_size,
    )
    return train, None


def _cmd_pretrain(args, mode: str) -> int:
    cfg = _resolve_config(args)
    if mode == "distill":
        cfg = apply_overrides(cfg, ["train.mode=distill"])
    train_set, _ = _load_datasets(cfg)
    if args.deterministic:
        _limit_threads()
    trainer = Trainer(cfg, train_set, out_dir=Path(args.out_dir), deterministic=args.deterministic)
    trainer.run()
    print(
        json.dumps(
            {
                "out_dir": str(args.out_dir),
                "digest": config_digest(cfg),
                "steps": trainer.step,
                "final_loss": trainer.metrics[-1]["loss_total"] if trainer.metrics else None,
                "parameters": trainer.model.parameter_count(),
            }
        )
    )
    return 0


def _cmd_probe(args) -> int:
    model, extras = load_checkpoint(args.checkpoint)
    cfg = extras["config"]
    if args.set or args.seed is not None:
        overrides = list(args.set or [])
        if args.seed is not None:
            overrides.append(f"train.seed={args.seed}")
        cfg = apply_overrides(cfg, overrides)
    set_default_dtype(np.float64 if cfg.train.float_width == "fp64" else np.float32)
    train_set, test_set = _load_datasets(cfg)
    if test_set is None:
        raise DataError("probe needs a labeled test split (synthetic source provides one)")
    probe = ProbeConfig(
        epochs=cfg.eval.probe_epochs,
        lr=cfg.eval.probe_lr,
        batch_size=cfg.eval.probe_batch,
        seed=cfg.train.seed,
    )
    result = linear_probe(model, train_set, test_set, probe)
    print(json.dumps(result))
    return 0


def _cmd_features(args) -> int:
    cfg = _resolve_config(args)
    dataset, test_set = _load_datasets(cfg)
    if args.split == "test":
        if test_set is None:
            raise DataError("no test split for this data source")
        dataset = test_set
    images = dataset.images
    if args.limit:
        images = images[: args.limit]
    seed = cfg.train.seed
    outputs = apply_bank(
        images,
        cfg.descriptor_specs(),
        rng_factory=lambda i: stream(seed, FEATURE_AUGMENT, 0, i),
        augment_params=cfg.augment_params(),
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for out in outputs:
        path = out_dir / f"{out.name}.mvte"
        write_matrix(path, out.values.astype(np.float32))
        written[out.name] = {"path": str(path), "rows": out.values.shape[0], "cols": out.d_k}
    print(json.dumps(written))
    return 0


def _cmd_dcor(args) -> int:
    x = read_matrix(args.matrix_x)
    y = read_matrix(args.matrix_y)
    result = dcor_stat(x, y)
    print(json.dumps(result.to_dict()))
    return 0


def _cmd_report(args) -> int:
    cfg = _resolve_config(args)
    grids = ("loss", "descriptors", "projector", "augment") if args.grid == "all" else (args.grid,)
    report = ablation_report(cfg, Path(args.out_dir), grids=grids)
    print(json.dumps({"out_dir": str(args.out_dir), "grids": list(report["grids"])}))
    return 0


def _add_common(p, config=True):
    if config:
        p.add_argument("--config", help="TOML config path (defaults apply when omitted)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
        p.add_argument("--seed", type=int, default=None, help="override train.seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depmax")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("pretrain", "distill"):
        p = sub.add_parser(name, help=f"run {name} and write checkpoints + metrics")
        _add_common(p)
        p.add_argument("--out-dir", required=True)
        p.add_argument("--deterministic", action="store_true")

    p = sub.add_parser("probe", help="linear probe on a checkpoint; prints accuracies as JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("features", help="write descriptor matrices as .mvte files")
    _add_common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--limit", type=int, default=0)

    p = sub.add_parser("dcor", help="distance correlation between two .mvte matrices")
    p.add_argument("matrix_x")
    p.add_argument("matrix_y")

    p = sub.add_parser("report", help="run the ablation grids and write report.json/report.md")
    _add_common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--grid", choices=("all", "loss", "descriptors", "projector", "augment"), default="all")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "pretrain":
            return _cmd_pretrain(args, "ssl")
        if args.command == "distill":
            return _cmd_pretrain(args, "distill")
        if args.command == "probe":
            return _cmd_probe(args)
        if args.command == "features":
            return _cmd_features(args)
        if args.command == "dcor":
            return _cmd_dcor(args)
        if args.command == "report":
            return _cmd_report(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
