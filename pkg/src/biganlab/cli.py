"""Command-line entry point: ``biganlab {train,eval,oracle,sample,reconstruct}``.

Configuration files are plain ``key = value`` lines (``#`` starts a
comment). Keys are the :class:`~biganlab.training.TrainConfig` fields plus
the data/output keys in ``RUN_KEYS``. Command-line flags override the file.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import theory
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import Dataset, MixtureSpec, load_mnist, make_rng, sample_mixture
from .evaluation import extract_features, image_grid, one_nn_accuracy, write_pgm
from .estimators import make_estimator
from .training import TrainConfig, TrainingDiverged, default_gx, reconstruct, run

log = logging.getLogger("biganlab")

RUN_KEYS = {
    "train_images": str,   # IDX image file, Dataset CSV, or "mixture"
    "train_labels": str,
    "subset": int,         # keep only the first N rows (0 = all)
    "mixture_samples": int,
    "out": str,
}

EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3


class ConfigError(ValueError):
    pass


def _coerce(key, raw, kind):
    try:
        if kind is bool:
            return raw.lower() in ("1", "true", "yes")
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from exc


def config_types():
    types = {f.name: type(f.default) for f in fields(TrainConfig)}
    types.update(RUN_KEYS)
    return types


def parse_config(text):
    """Parse ``key = value`` lines; unknown keys are errors."""
    types = config_types()
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, raw, types[key])
    return out


def format_config(values):
    return "".join(f"{k} = {values[k]}\n" for k in sorted(values))


def resolve_run_config(args):
    values = {"subset": 0, "mixture_samples": 10240, "train_labels": ""}
    if args.config:
        values.update(parse_config(Path(args.config).read_text()))
    overrides = {"model_kind": args.model, "epochs": args.epochs, "seed": args.seed, "out": args.out}
    for item in args.set or []:
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in config_types():
            raise ConfigError(f"unknown key {key!r}")
        overrides[key] = _coerce(key, raw.strip(), config_types()[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "train_images" not in values:
        raise ConfigError("train_images is required")
    values.setdefault("out", f"runs/{values.get('model_kind', 'bigan')}")
    train_keys = {f.name for f in fields(TrainConfig)}
    config = TrainConfig(**{k: v for k, v in values.items() if k in train_keys})
    values.update(asdict(config))
    return config, values


def load_dataset(path, labels=None, seed=0, mixture_samples=10240):
    if path == "mixture":
        return sample_mixture(MixtureSpec.ring(), mixture_samples, make_rng(seed, 7))
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    if p.suffix == ".csv":
        return Dataset.from_csv(p)
    if not labels:
        guess = p.with_name(p.name.replace("images-idx3", "labels-idx1"))
        labels = str(guess) if guess != p and guess.exists() else None
    elif not Path(labels).exists():
        raise FileNotFoundError(f"label file not found: {labels}")
    return load_mnist(p, labels)


def cmd_train(args):
    config, values = resolve_run_config(args)
    data = load_dataset(values["train_images"], values.get("train_labels"), config.seed,
                        values["mixture_samples"])
    if values["subset"]:
        data = data.subset(values["subset"])
    out = Path(values["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(values))

    est = make_estimator(config.model_kind, **{
        k: v for k, v in asdict(config).items()
        if k not in ("model_kind", "snapshot_every", "downsample") or
        (k == "downsample" and config.model_kind == "bigan")
    })
    X = data.features
    total = config.total_epochs
    try:
        while not (hasattr(est, "bundle_") and est.bundle_.done):
            est.partial_fit(X, n_epochs=config.snapshot_every)
            epoch = est.bundle_.epoch
            if epoch < total:
                save_checkpoint(out / f"snapshot_{epoch:04d}.bglb", est.bundle_)
            log.info("epoch %d/%d", epoch, total)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        est.report_.to_csv(out / "report.csv")
        return EXIT_DIVERGED
    save_checkpoint(out / "final.bglb", est.bundle_)
    est.report_.to_csv(out / "report.csv")
    print(f"wrote {out / 'final.bglb'}")
    return 0


def cmd_eval(args):
    train = load_dataset(args.train_data, args.train_labels)
    test = load_dataset(args.test_data, args.test_labels)
    if train.labels is None or test.labels is None:
        raise ConfigError("1NN evaluation needs labels for both splits")
    rows = []
    for path in args.checkpoint:
        bundle = load_checkpoint(path)
        if bundle.data_dim != train.features.shape[1]:
            raise CheckpointError(f"{path}: model expects {bundle.data_dim}-dim data, "
                                  f"got {train.features.shape[1]}")
        ftrain = extract_features(bundle, train.features)
        ftest = extract_features(bundle, test.features)
        acc = one_nn_accuracy(ftrain, train.labels, ftest, test.labels)
        rows.append((bundle.kind, f"{acc:.2f}", ftrain.shape[1], Path(path).name))
    header = ("model_kind", "accuracy", "feature_dim", "checkpoint")
    writer = csv.writer(sys.stdout)
    writer.writerow(header)
    writer.writerows(rows)
    if args.out:
        tmp = Path(args.out + ".tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        os.replace(tmp, args.out)
    return 0


def _print_checks(label, checks):
    ok = True
    for c in checks:
        ok &= c.passed
        print(f"[{'PASS' if c.passed else 'FAIL'}] {label}{c.name}: {c.detail}")
    return ok


def cmd_oracle(args):
    ok = True
    if args.world:
        world = theory.DiscreteWorld.load(args.world)
        ok = _print_checks("", theory.verify_world(world, np.random.default_rng(args.seed)))
    elif args.random is not None:
        rng = np.random.default_rng(args.seed)
        failures = 0
        for i in range(args.random):
            world = theory.DiscreteWorld.random(rng)
            checks = theory.verify_world(world, rng, n_random_tables=args.tables)
            bad = [c for c in checks if not c.passed]
            if bad:
                failures += 1
                _print_checks(f"world {i}: ", bad)
        print(f"{args.random - failures}/{args.random} random worlds passed every check")
        ok = failures == 0
    else:
        m, n = args.brute
        best, minimizers = theory.brute_force_optimum(m, n)
        gap = best + theory.LOG4
        print(f"brute force m={m} n={n}: min C(E,G) = {best:.6f} (-log 4 = {-theory.LOG4:.6f}, gap {gap:.3e})")
        print(f"{len(minimizers)} minimizer pair(s)")
        at_optimum = abs(gap) <= theory.MEASURE_TOL
        p_x, p_z = np.full(m, 1.0 / m), np.full(n, 1.0 / n)
        for e, g in minimizers:
            inv = theory.check_inversion(theory.DiscreteWorld(p_x, p_z, e, g))
            passed = inv.ok or not at_optimum
            ok &= passed
            print(f"[{'PASS' if passed else 'FAIL'}] E={list(e)} G={list(g)} "
                  f"fail mass x={inv.x_fail_mass} z={inv.z_fail_mass}")
    return 0 if ok else EXIT_FAIL


def _grid_shape(count, rows, cols):
    if rows and cols:
        return rows, cols
    if rows:
        return rows, -(-count // rows)
    cols = cols or min(count, 10)
    return -(-count // cols), cols


def cmd_sample(args):
    bundle = load_checkpoint(args.checkpoint)
    if "G" not in bundle.nets:
        raise CheckpointError(f"{bundle.kind} checkpoint has no generator")
    est = make_estimator(bundle.kind).from_bundle(bundle)
    x = est.sample(args.count, seed=args.seed)
    rows, cols = _grid_shape(args.count, args.rows, args.cols)
    write_pgm(args.out, image_grid(x, rows, cols))
    print(f"wrote {args.out}")
    return 0


def cmd_reconstruct(args):
    bundle = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data, args.labels)
    X = data.features[: args.count]
    out = reconstruct(bundle, X, default_gx(bundle.config))
    if out is None:
        raise CheckpointError(f"{bundle.kind} checkpoint cannot reconstruct (needs encoder and decoder)")
    recon, target = out
    rows, cols = _grid_shape(len(X), args.rows, args.cols)
    prefix = Path(args.out_prefix)
    write_pgm(f"{prefix}_x.pgm", image_grid(target, rows, cols))
    write_pgm(f"{prefix}_recon.pgm", image_grid(recon, rows, cols))
    print(f"wrote {prefix}_x.pgm and {prefix}_recon.pgm")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="biganlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoints + report")
    p.add_argument("--config")
    p.add_argument("--model", choices=("bigan", "gan", "lr", "jlr", "ae_l1", "ae_l2"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="1NN accuracy of checkpoint features")
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--train-data", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--train-labels")
    p.add_argument("--test-labels")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", help="verify the theory on finite spaces")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--world")
    mode.add_argument("--random", type=int, metavar="N")
    mode.add_argument("--brute", type=int, nargs=2, metavar=("M", "N"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tables", type=int, default=1000, help="random discriminators per world")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("sample", help="write a grid of generator samples")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--out", default="samples.pgm")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("reconstruct", help="write paired x and G(E(x)) grids")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--labels")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--out-prefix", default="reconstruct")
    p.set_defaults(func=cmd_reconstruct)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, theory.WorldError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
