"""Batch command-line entry point.

Subcommands: ``gen-data``, ``preprocess``, ``train``, ``eval``, ``report``.
Exit codes: 0 success, 2 usage/config errors, 3 numeric failure. The
environment variable ``S2P_SEED`` provides a default seed. Every run writes
its resolved configuration next to its outputs.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data, evaluate, models
from .imaging import EmptyMaskError, preprocess
from .nn import DivergenceError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _default_seed() -> int:
    return int(os.environ.get("S2P_SEED", "0"))


def _write_resolved_config(out_dir: Path, name: str, config: dict) -> None:
    with open(out_dir / f"{name}_config.json", "w") as f:
        json.dump(config, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        dataset = data.gen_dataset(args.per_class, seed=args.seed)
        written = data.save_dataset(dataset, out)
        _write_resolved_config(out, "gen_data", {"per_class": args.per_class, "seed": args.seed})
    except (OSError, ValueError) as exc:
        print(f"gen-data failed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"wrote {len(written)} images under {out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    src = Path(args.input)
    out = Path(args.out)
    if not src.is_dir():
        print(f"preprocess failed: {src} is not a directory", file=sys.stderr)
        return EXIT_USAGE
    count = 0
    try:
        for path in sorted(src.rglob("*.pgm")):
            img = data.load_pgm(path)
            try:
                result = preprocess(img)
            except EmptyMaskError:
                print(f"skipping {path}: no foreground found", file=sys.stderr)
                continue
            target = out / path.relative_to(src)
            target.parent.mkdir(parents=True, exist_ok=True)
            data.save_pgm(result, target)
            count += 1
    except (OSError, data.FormatError) as exc:
        print(f"preprocess failed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"preprocessed {count} images into {out}")
    return EXIT_OK


def _load_train_config(args) -> models.TrainConfig:
    values: dict = {}
    if args.config:
        with open(args.config) as f:
            values.update(json.load(f))
    overrides = {
        "epochs_max": args.epochs, "batch": args.batch, "patience": args.patience,
        "lr": args.lr, "weight_decay": args.weight_decay, "loss": args.loss,
        "augment_factor": args.augment_factor, "seed": args.seed,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    values.setdefault("seed", _default_seed())
    if "loss" not in values:
        values["loss"] = "focal" if args.model == "s2p" else "ce"
    values["rotation_augment"] = args.experiment == "full_data"
    known = {f.name for f in dataclasses.fields(models.TrainConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return models.TrainConfig(**values)


def _split_for(experiment: str, dataset, seed: int) -> data.DatasetSplit:
    if experiment == "low_data":
        return data.split_low_data(dataset, n_per_class=3, seed=seed)
    return data.split_stratified(dataset, train_frac=0.75, seed=seed)


def cmd_train(args) -> int:
    try:
        config = _load_train_config(args)
        dataset = data.load_dataset(args.data)
        split = _split_for(args.experiment, dataset, config.seed)
        aug = data.FULL_DATA_AUGMENT if config.rotation_augment else data.LOW_DATA_AUGMENT
        assert aug.rotation == (args.experiment == "full_data")
        num_classes = len({item.label for item in dataset})
        if args.model == "s2p":
            model = models.build_s2p_classifier(num_classes, seed=config.seed)
        else:
            model = models.build_simple_cnn(num_classes, seed=config.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"train failed: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        ckpt = models.train(model, split, config, aug)
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    ckpt.extra = {"experiment": args.experiment, "seed": config.seed,
                  "data_dir": str(args.data), "loss": config.loss}

    stem = f"{args.model}_{args.experiment}"
    models.save_checkpoint(ckpt, out / f"{stem}.ckpt")
    with open(out / f"{stem}_history.json", "w") as f:
        json.dump(ckpt.history, f, indent=2)
        f.write("\n")
    _write_resolved_config(out, stem, {**dataclasses.asdict(config), "experiment": args.experiment,
                                       "model": args.model, "data": str(args.data)})
    print(f"trained {stem}: {len(ckpt.history)} epochs, "
          f"final loss {ckpt.history[-1]['loss']:.6f}, saved to {out / (stem + '.ckpt')}")
    return EXIT_OK


def _sweep_checkpoint(ckpt_path: str, data_dir: str | None):
    ckpt = models.load_checkpoint(ckpt_path)
    model = models.build_from_checkpoint(ckpt)
    experiment = ckpt.extra.get("experiment", "low_data")
    seed = int(ckpt.extra.get("seed", 0))
    dataset = data.load_dataset(data_dir or ckpt.extra.get("data_dir"))
    split = _split_for(experiment, dataset, seed)
    report = evaluate.angle_sweep(model, split.test)
    return report, experiment


def cmd_eval(args) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.compare:
            reports = []
            for path in args.compare:
                report, experiment = _sweep_checkpoint(path, args.data)
                reports.append(report)
                _emit_pair(report, out, experiment)
            table = evaluate.format_comparison(reports)
            with open(out / "comparison.txt", "w") as f:
                f.write(table + "\n")
            print(table)
        else:
            report, experiment = _sweep_checkpoint(args.ckpt, args.data)
            _emit_pair(report, out, experiment)
            print(evaluate.format_comparison([report]))
    except (OSError, ValueError, models.FormatError) as exc:
        print(f"eval failed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def _emit_pair(report, out: Path, experiment: str) -> None:
    stem = f"{report.model_name}_{experiment}_sweep"
    evaluate.emit_report(report, out / f"{stem}.csv", fmt="csv")
    evaluate.emit_report(report, out / f"{stem}.json", fmt="json")


def cmd_report(args) -> int:
    try:
        reports = [evaluate.load_report(p) for p in args.sweeps]
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"report failed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(evaluate.format_comparison(reports))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s2pnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic shape dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=20, dest="per_class")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("preprocess", help="segment and center-resize raw PGM images")
    p.add_argument("--in", required=True, dest="input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--experiment", choices=("low_data", "full_data"), required=True)
    p.add_argument("--model", choices=("s2p", "cnn"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON training config; flags override file values")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None, dest="weight_decay")
    p.add_argument("--augment-factor", type=int, default=None, dest="augment_factor")
    p.add_argument("--loss", choices=("focal", "ce"), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run the 12-angle rotation sweep on a checkpoint")
    p.add_argument("--ckpt")
    p.add_argument("--compare", nargs=2, metavar=("A_CKPT", "B_CKPT"))
    p.add_argument("--data", default=None, help="dataset directory (defaults to the one recorded at training)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="print a per-angle table from sweep JSON files")
    p.add_argument("sweeps", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval" and bool(args.ckpt) == bool(args.compare):
        parser.error("eval needs exactly one of --ckpt or --compare")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
