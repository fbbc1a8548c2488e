"""Command-line entry point: ``ucad {gen-data,train,eval,ablate,print-config}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import config as cfgmod
from .data import DatasetSpec, generate_dataset, load_dataset, save_dataset, write_pgm
from .exceptions import ConfigError, DataError, ParameterError, TrainingError
from .metrics import evaluate
from .model import load_checkpoint, predict_labels, save_checkpoint
from .training import STRATEGIES, train

log = logging.getLogger("ucad")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

_TRAIN_FLAGS = [
    "strategy", "k-target", "compactness", "slic-iterations", "temperature", "n-regions",
    "w-l", "w-u", "lambda", "beta-max", "beta-min", "alpha", "lr", "momentum",
    "weight-decay", "warmup-steps", "steps", "eval-every", "batch", "hidden", "seed",
]


def _add_train_flags(p, with_seed=True):
    p.add_argument("--config", help="key=value config file; flags override it")
    for flag in _TRAIN_FLAGS:
        if flag == "seed" and not with_seed:
            continue
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), default=None,
                       metavar="V")


def _resolve_config(args):
    file_values = cfgmod.load_config_file(args.config) if getattr(args, "config", None) else {}
    overrides = {}
    for flag in _TRAIN_FLAGS:
        dest = flag.replace("-", "_")
        val = getattr(args, dest, None)
        if val is not None:
            overrides[dest] = val
    return cfgmod.build_config(file_values, overrides)


def _write_text(path, text):
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def cmd_gen_data(args):
    if args.labeled < 1 or args.unlabeled < 1:
        raise ConfigError("--labeled and --unlabeled must be >= 1")
    if args.val < 0:
        raise ConfigError("--val must be >= 0")
    if args.size < 8:
        raise ConfigError("--size must be >= 8")
    if args.classes < 2:
        raise ConfigError("--classes must be >= 2")
    spec = DatasetSpec(
        height=args.size, width=args.size, num_classes=args.classes,
        n_labeled=args.labeled, n_unlabeled=args.unlabeled, n_val=args.val,
        seed=args.seed, noise_std=args.noise,
        min_radius=args.size * 6 / 64, max_radius=args.size * 14 / 64,
        waviness=args.size * 2.5 / 64,
    )
    try:
        text = save_dataset(args.out, generate_dataset(spec))
    except OSError as exc:
        raise DataError(f"cannot write dataset to {args.out}: {exc}") from exc
    sys.stdout.write(text)
    return EXIT_OK


def cmd_train(args):
    cfg = _resolve_config(args)
    dataset = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    student, teacher, history = train(cfg, dataset)
    save_checkpoint(os.path.join(args.out, "student.ckpt"), student)
    save_checkpoint(os.path.join(args.out, "teacher.ckpt"), teacher)
    _write_text(os.path.join(args.out, "history.csv"), history.to_csv())
    _write_text(os.path.join(args.out, "config.txt"), cfgmod.dump_config(cfg))
    print(f"final val_dsc={history.final_val_dsc():.6f} steps={len(history)}")
    return EXIT_OK


def _overlay(img, pred, gt, num_classes):
    scale = 255 // (num_classes - 1)
    img8 = np.round(np.clip(img, 0, 1) * 255).astype(np.int64)
    sep = np.full((img.shape[0], 1), 255, dtype=np.int64)
    return np.hstack([img8, sep, pred * scale, sep, gt * scale])


def cmd_eval(args):
    if not os.path.exists(args.checkpoint):
        raise DataError(f"checkpoint {args.checkpoint} not found")
    params = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    pairs = dataset.split_pairs(args.split)
    if not pairs:
        raise DataError(f"split {args.split!r} is empty")
    report = evaluate(params, pairs, dataset.num_classes)
    os.makedirs(args.out, exist_ok=True)
    _write_text(os.path.join(args.out, "metrics.csv"), report.to_csv())
    if args.overlays:
        odir = os.path.join(args.out, "overlays")
        os.makedirs(odir, exist_ok=True)
        for i, (img, gt) in enumerate(pairs):
            pred = predict_labels(params, img)
            write_pgm(os.path.join(odir, f"{args.split}_{i:04d}.pgm"),
                      _overlay(img, pred, gt, dataset.num_classes), 255)
    print(f"{args.split}: mean_dsc={report.mean_dsc:.6f} mean_asd={report.mean_asd:.6f}")
    return EXIT_OK


def _ablation_cell(job):
    data_dir, cfg = job
    dataset = load_dataset(data_dir)
    student, _, _ = train(cfg, dataset)
    report = evaluate(student, dataset.val, dataset.num_classes)
    return report.mean_dsc, report.mean_asd


def ablation_csv(rows):
    """CSV text for ``(strategy, seed, dsc, asd)`` rows plus one median row per strategy."""
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["strategy", "seed", "dsc", "asd"])
    for strategy, seed, d, a in rows:
        out.writerow([strategy, seed, f"{d:.6f}", f"{a:.6f}"])
    for strategy in STRATEGIES:
        mine = [(d, a) for s, _, d, a in rows if s == strategy]
        if mine:
            out.writerow([strategy, "median", f"{np.median([d for d, _ in mine]):.6f}",
                          f"{np.median([a for _, a in mine]):.6f}"])
    return buf.getvalue()


def cmd_ablate(args):
    base = _resolve_config(args)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds must be a comma-separated list of integers, got {args.seeds!r}")
    if not seeds:
        raise ConfigError("--seeds must name at least one seed")
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    load_dataset(args.data)
    jobs = [(strategy, seed, (args.data, dataclasses.replace(base, strategy=strategy, seed=seed)))
            for strategy in STRATEGIES for seed in seeds]
    if args.jobs == 1:
        results = [_ablation_cell(job) for _, _, job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_ablation_cell, [job for _, _, job in jobs]))
    rows = [(s, seed, d, a) for (s, seed, _), (d, a) in zip(jobs, results)]
    os.makedirs(args.out, exist_ok=True)
    text = ablation_csv(rows)
    _write_text(os.path.join(args.out, "ablation.csv"), text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_print_config(args):
    sys.stdout.write(cfgmod.dump_config(_resolve_config(args)))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="ucad", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--out", default="data")
    p.add_argument("--labeled", type=int, default=2)
    p.add_argument("--unlabeled", type=int, default=38)
    p.add_argument("--val", type=int, default=10)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--noise", type=float, default=DatasetSpec.noise_std)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train student/teacher on a dataset directory")
    p.add_argument("--data", default="data")
    p.add_argument("--out", default="run")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", default="data")
    p.add_argument("--checkpoint", default=os.path.join("run", "student.ckpt"))
    p.add_argument("--split", choices=("val", "labeled", "unlabeled"), default="val")
    p.add_argument("--out", default="eval")
    p.add_argument("--overlays", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run every strategy over several seeds")
    p.add_argument("--data", default="data")
    p.add_argument("--out", default="ablation")
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--jobs", type=int, default=1)
    _add_train_flags(p, with_seed=False)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("print-config", help="print the resolved configuration")
    _add_train_flags(p)
    p.set_defaults(func=cmd_print_config)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
