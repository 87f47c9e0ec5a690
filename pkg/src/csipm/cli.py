"""Command-line entry point: generate -> train -> eval -> ablate -> plot-export."""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config, load_config
from .errors import CsipmError
from .evaluation import (AblationReport, export_constellation, nearest_instance, run_ablation)
from .features import TABLE_FEATURE_SETS, FeatureSet, make_windows
from .lstm import mse_loss, predict, train
from .pipeline import build_dataset, deserialize_dataset, real_to_csi, serialize_dataset, split

log = logging.getLogger("csipm")


@contextmanager
def _atomic_outputs():
    """Collect (tmp, final) pairs; rename all on success, delete all on failure."""
    pending: list[tuple[Path, Path]] = []

    def reserve(final) -> Path:
        final = Path(final)
        final.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{final.name}.", dir=final.parent)
        os.close(fd)
        pending.append((Path(tmp), final))
        return Path(tmp)

    try:
        yield reserve
    except BaseException:
        for tmp, _ in pending:
            tmp.unlink(missing_ok=True)
        raise
    for tmp, final in pending:
        os.replace(tmp, final)


def _overrides(args) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CsipmError(f"--set expects section.key=value, got {item!r}")
        pairs[key.strip()] = value.strip()
    if args.seed is not None:
        pairs["seed"] = str(args.seed)
    for flag, key in (("lr", "train.learning_rate"), ("epochs", "train.epochs"),
                      ("batch_size", "train.batch_size"), ("target_instances", "dataset.target_instances"),
                      ("window", "model.window")):
        value = getattr(args, flag, None)
        if value is not None:
            pairs[key] = str(value)
    return pairs


def _config(args) -> RunConfig:
    return load_config(args.config, _overrides(args))


def _dataset_name(path: Path) -> str:
    m = re.search(r"(\d+)$", path.stem)
    return m.group(1) if m else path.stem


def _feature_set(text: str) -> FeatureSet:
    try:
        return FeatureSet.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _write_history(path: Path, history) -> None:
    lines = ["epoch,train_mse,test_mse"]
    lines += [f"{h.epoch},{h.train_mse!r},{h.test_mse!r}" for h in history]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_generate(args) -> int:
    cfg = _config(args)
    out = Path(args.out or "data")
    ranges = args.range or list(cfg.dataset.ranges)
    sim = cfg.simulation()
    with _atomic_outputs() as reserve:
        for r in ranges:
            target = cfg.dataset.target_for(r)
            ds = build_dataset(sim, r, cfg.seed, target)
            final = out / f"dataset-{r}.txt"
            serialize_dataset(ds, reserve(final))
            print(f"range {r}: {len(ds)} instances from {len(ds.vehicles())} vehicles -> {final}")
    return 0


def _prepare(cfg: RunConfig, dataset_path: Path, feature_set: FeatureSet, split_seed: int,
             train_fraction: float, window: int):
    ds = deserialize_dataset(dataset_path)
    tr, te = split(ds, train_fraction, split_seed)
    w_tr = make_windows(tr, feature_set, window)
    w_te = make_windows(te, feature_set, window, w_tr.standardizer)
    return w_tr, w_te


def cmd_train(args) -> int:
    cfg = _config(args)
    fs = args.features
    w_tr, w_te = _prepare(cfg, Path(args.dataset), fs, cfg.seed, cfg.dataset.train_fraction,
                          cfg.model.window)
    result = train(w_tr.inputs, w_tr.targets, w_te.inputs, w_te.targets,
                   replace(cfg.train, seed=cfg.seed), cfg.model.hidden_size)
    ckpt_path = Path(args.out or "model.ckpt")
    with _atomic_outputs() as reserve:
        save_checkpoint(result.params, result.adam, reserve(ckpt_path), feature_set=fs,
                        window=cfg.model.window, standardizer=w_tr.standardizer, scaler=result.scaler,
                        split_seed=cfg.seed, train_fraction=cfg.dataset.train_fraction)
        _write_history(reserve(ckpt_path.with_name(ckpt_path.name + ".history.csv")), result.history)
    print(f"features={fs.name} train_windows={len(w_tr)} test_windows={len(w_te)} "
          f"initial_test_mse={result.initial_test_mse!r} final_test_mse={result.history[-1].test_mse!r}")
    return 0


def _load_for_eval(args, cfg: RunConfig):
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise CsipmError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    fs = args.features or ckpt.feature_set
    if fs is None:
        raise CsipmError("checkpoint has no feature set; pass --features")
    if ckpt.feature_set is not None and fs != ckpt.feature_set:
        raise CsipmError(f"--features {fs.name} does not match checkpoint ({ckpt.feature_set.name})")
    if ckpt.standardizer is None or ckpt.scaler is None:
        raise CsipmError("checkpoint lacks normalization sections")
    split_seed = cfg.seed if ckpt.split_seed is None else ckpt.split_seed
    fraction = ckpt.train_fraction or cfg.dataset.train_fraction
    window = ckpt.window or cfg.model.window
    ds = deserialize_dataset(args.dataset)
    _, te = split(ds, fraction, split_seed)
    w_te = make_windows(te, fs, window, ckpt.standardizer)
    return ckpt, fs, w_te


def cmd_eval(args) -> int:
    cfg = _config(args)
    ckpt, fs, w_te = _load_for_eval(args, cfg)
    if len(w_te) == 0:
        raise CsipmError("test split has no windows")
    pred = w_te.targets.copy() if args.oracle else predict(ckpt.params, ckpt.scaler, w_te.inputs)
    mse = mse_loss(pred, w_te.targets)
    out = Path(args.out or (str(args.checkpoint) + ".eval.txt"))
    with _atomic_outputs() as reserve:
        reserve(out).write_text(f"features={fs.name}\ntest_windows={len(w_te)}\ntest_mse={mse!r}\n",
                                encoding="utf-8")
    print(f"test_mse={mse!r}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    fsets = ([FeatureSet.parse(s) for s in args.feature_sets.split(",")]
             if args.feature_sets else list(TABLE_FEATURE_SETS))
    datasets = {_dataset_name(Path(p)): deserialize_dataset(p) for p in args.dataset}

    def progress(cell):
        print(f"  {cell.dataset:>6} {cell.feature_set.name:<16} test_mse={cell.test_mse:.4e} "
              f"(untrained {cell.initial_test_mse:.4e})", flush=True)

    report = run_ablation(datasets, fsets, cfg.model.window, cfg.train, cfg.model.hidden_size,
                          cfg.dataset.train_fraction, cfg.seed, on_cell=progress)
    out = Path(args.out or "ablation")
    with _atomic_outputs() as reserve:
        reserve(out / "ablation.txt").write_text(report.to_table(), encoding="utf-8")
        reserve(out / "ablation.csv").write_text(report.to_csv(), encoding="utf-8")
    print(report.to_table(), end="")
    for d in report.datasets:
        avg = report.mobility_average(d)
        if np.isfinite(avg):
            print(f"mean over mobility-only columns, dataset {d}: {avg:.4e}")
    return 0


def cmd_plot_export(args) -> int:
    cfg = _config(args)
    ckpt, fs, w_te = _load_for_eval(args, cfg)
    if len(w_te) == 0:
        raise CsipmError("test split has no windows")
    out = Path(args.out or "constellation")
    pred = predict(ckpt.params, ckpt.scaler, w_te.inputs)
    with _atomic_outputs() as reserve:
        for i in args.instance or [0]:
            if not 0 <= i < len(w_te):
                raise CsipmError(f"instance {i} outside test windows [0, {len(w_te)})")
            match = nearest_instance(pred[i], w_te.targets)
            meta = {"features": fs.name, "window": i, "nearest_mse": match.by_mse,
                    "nearest_mae": match.by_mae, "agree": match.agree}
            export_constellation(real_to_csi(w_te.targets[match.by_mse]), real_to_csi(pred[i]),
                                 reserve(out / f"constellation-{i}.csv"), meta)
            print(f"window {i}: nearest by MSE={match.by_mse} by MAE={match.by_mae} "
                  f"agree={match.agree}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="config file of 'section.key = value' lines")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed (overrides config)")
    common.add_argument("--out", metavar="PATH", help="output file or directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config entry, e.g. train.epochs=50 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="csipm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="simulate vehicles and write datasets")
    p.add_argument("--range", type=int, action="append", metavar="ROWS",
                   help="max row distance from the gNB row (repeatable; default 250, 500, 750)")
    p.add_argument("--target-instances", type=int, metavar="N",
                   help="stop once this many instances are collected (default per range)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="train one predictor")
    p.add_argument("--dataset", required=True, metavar="PATH", help="dataset file from 'generate'")
    p.add_argument("--features", type=_feature_set, default=FeatureSet.parse("pos"),
                   help="'+'-joined tokens from acc, speed, pos, csi1, csi2 (default pos)")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--batch-size", type=int, help="mini-batch size")
    p.add_argument("--window", type=int, help="input window length")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="test-split MSE of a checkpoint")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--dataset", required=True, metavar="PATH")
    p.add_argument("--features", type=_feature_set, help="must match the checkpoint if given")
    p.add_argument("--oracle", action="store_true", help="test hook: predict the true labels")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="train one model per feature set and tabulate MSE")
    p.add_argument("--dataset", required=True, action="append", metavar="PATH",
                   help="dataset file (repeatable); the trailing number of the name labels the row")
    p.add_argument("--feature-sets", metavar="LIST",
                   help="comma-separated feature sets (default: all ten table columns)")
    p.add_argument("--epochs", type=int, help="training epochs per cell")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot-export", parents=[common], help="write true/predicted constellation data")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--dataset", required=True, metavar="PATH")
    p.add_argument("--features", type=_feature_set, help="must match the checkpoint if given")
    p.add_argument("--instance", type=int, action="append", metavar="I",
                   help="test window index to export (repeatable; default 0)")
    p.set_defaults(func=cmd_plot_export)

    p = sub.add_parser("show-config", parents=[common], help="print the effective configuration")
    p.set_defaults(func=lambda a: print(dump_config(_config(a)), end="") or 0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CsipmError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
