"""Command-line interface.

Every command accepts the :class:`RunConfig` fields as flags (``--hidden 64``,
``--no-ordering``, ``--intervals 1,5,10``), a ``--config`` JSON file and a
``--seed`` override; explicit flags win over the file. Exit status is 0 on
success, 2 for invalid input and 3 for numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

from . import ablation, analysis
from .bundle import bundle_dirs, read_bundle, read_bundles, write_bundle
from .config import RunConfig
from .diffcore import load_checkpoint
from .downstream import (FINETUNE_MODE, PROBE, evaluate, labeled_from_trajectory, split_dataset,
                         train_downstream, synthetic_stiffness)
from .errors import InvalidDataset, InvalidInput, InvalidParameter, NumericalError
from .model import MDModel
from .pretrain import pretrain
from .synthmd import ToyComplexSpec, generate_trajectory

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
METRIC_COLUMNS = ("task", "mode", "seed", "RMSE", "pearson", "spearman", "auroc", "auprc")
LOSS_COLUMNS = ("epoch", "L_gen", "L_ord", "total", "lr")


# ---------------------------------------------------------------- helpers

def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def write_csv(path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _field_parser(f):
    text = str(f.type)  # annotations are strings under postponed evaluation
    if "tuple" in text:
        cast = float if "float" in text else int
        return lambda s: tuple(cast(v) for v in s.split(",") if v.strip())
    if "Optional" in text or "None" in text:
        cast = float if "float" in text else int
        return lambda s: None if s.lower() == "none" else cast(s)
    return {"int": int, "float": float, "str": str}.get(text, str)


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run configuration")
    group.add_argument("--config", type=Path, help="JSON file with RunConfig fields")
    group.add_argument("--seed", type=int)
    for f in fields(RunConfig):
        if f.name == "seed":
            continue
        flag = "--" + f.name
        if str(f.type) == "bool":
            group.add_argument(flag, action=argparse.BooleanOptionalAction, default=None)
        else:
            group.add_argument(flag, type=_field_parser(f), default=None, metavar=f.name.upper())


def resolve_config(args: argparse.Namespace) -> RunConfig:
    base = {}
    if args.config is not None:
        try:
            base = RunConfig.from_json(Path(args.config).read_text()).to_dict()
        except OSError as exc:
            raise InvalidParameter(f"cannot read config: {exc}") from None
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            base[f.name] = value
    return RunConfig.from_dict(base)


def _load_model(config: RunConfig, checkpoint: Optional[Path]) -> MDModel:
    model = MDModel(config.model_config(), seed=config.seed)
    if checkpoint is not None:
        try:
            model.load_tensors(load_checkpoint(checkpoint))
        except OSError as exc:
            raise InvalidDataset(f"cannot read checkpoint: {exc}") from None
    return model


def _labeled(config: RunConfig, data: Path, task: Optional[str] = None):
    task = task or config.task
    items = []
    for d in bundle_dirs(data):
        traj = read_bundle(d)
        _check_features(traj, config)
        items.append(labeled_from_trajectory(traj, task, name=d.name, radius=config.radius(task),
                                             atom_cap=config.atom_cap))
    return items


def _check_features(traj, config: RunConfig) -> None:
    if traj.features.shape[1] != config.feature_dim:
        raise InvalidDataset(f"atom features have width {traj.features.shape[1]} "
                             f"but feature_dim is {config.feature_dim}")
    if len(traj.elements) > config.node_cap:
        raise InvalidDataset(f"{len(traj.elements)} atoms exceeds node_cap {config.node_cap}")


def _metric_row(config: RunConfig, mode: str, m: dict) -> dict:
    return dict(task=config.task, mode=mode, seed=config.seed, RMSE=m["rmse"],
                pearson=m["pearson"], spearman=m["spearman"], auroc=m["auroc"], auprc=m["auprc"])


def _out_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------- commands

def cmd_gen_synthetic(args, config: RunConfig) -> int:
    out = _out_dir(args.out)
    ks = synthetic_stiffness(args.count, config.seed, (args.k_min, args.k_max))
    index = []
    for i, k in enumerate(ks):
        spec = ToyComplexSpec(seed=config.seed * 10_000 + i, k=float(k), n_frames=args.n_frames,
                              temperature=args.temperature, drift=args.drift,
                              drift_rate=args.drift_rate, tether_pull=args.tether_pull,
                              feature_dim=config.feature_dim)
        name = f"complex_{i:04d}"
        traj = generate_trajectory(spec)
        write_bundle(out / name, traj)
        index.append(dict(id=name, k=float(k), label=traj.label))
    write_csv(out / "index.csv", ("id", "k", "label"), index)
    print(f"wrote {len(index)} bundles to {out}")
    return EXIT_OK


def cmd_pretrain(args, config: RunConfig) -> int:
    out = _out_dir(args.out)
    trajs = read_bundles(args.data)
    for t in trajs:
        _check_features(t, config)
    model = _load_model(config, args.checkpoint)
    history = pretrain(model, trajs, config.pretrain_config(),
                       log=(lambda r: print(f"epoch {r['epoch']}: total {r['total']:.6g}")) if args.verbose else None)
    model.save(out / "model.ckpt")
    write_csv(out / "loss.csv", LOSS_COLUMNS, history)
    (out / "config.json").write_text(config.to_json())
    print(f"pre-trained {len(history)} epochs; checkpoint at {out / 'model.ckpt'}")
    return EXIT_OK


def _cmd_downstream(args, config: RunConfig, mode: str) -> int:
    out = _out_dir(args.out)
    items = _labeled(config, args.data)
    train, val, test = split_dataset(items, config.split_fractions, config.split_seed)
    model = _load_model(config, args.checkpoint)
    result = train_downstream(model, train, val, test, config.downstream_config(mode))
    model.save(out / "model.ckpt")
    write_csv(out / "metrics.csv", METRIC_COLUMNS, [_metric_row(config, mode, result.metrics["test"])])
    write_csv(out / "history.csv", ("epoch", "train_loss", "val_loss", "lr"), result.history)
    (out / "config.json").write_text(config.to_json())
    print(f"{mode}: {result.n_trainable} trainable scalars; test metrics {result.metrics['test']}")
    return EXIT_OK


def cmd_finetune(args, config):
    return _cmd_downstream(args, config, FINETUNE_MODE)


def cmd_probe(args, config):
    return _cmd_downstream(args, config, PROBE)


def cmd_eval(args, config: RunConfig) -> int:
    out = _out_dir(args.out)
    model = _load_model(config, args.checkpoint)
    metrics = evaluate(model, _labeled(config, args.data), config.task)
    write_csv(out / "metrics.csv", METRIC_COLUMNS, [_metric_row(config, "eval", metrics)])
    print(f"eval: {metrics}")
    return EXIT_OK


def cmd_analyze(args, config: RunConfig) -> int:
    out = _out_dir(args.out)
    model = _load_model(config, args.checkpoint)
    dirs = bundle_dirs(args.data)
    trajs = [read_bundle(d) for d in dirs]
    for t in trajs:
        _check_features(t, config)
    res = analysis.space_shift_analysis(model, trajs, args.interval, ids=[d.name for d in dirs])
    write_csv(out / "shift.csv", ("id", "delta_x_lr", "label"),
              [dict(id=i, delta_x_lr=float(x), label=float(y))
               for i, x, y in zip(res.ids, res.shifts, res.labels)])
    write_csv(out / "fit.csv", ("slope", "intercept", "r2", "pearson", "spearman"),
              [dict(slope=res.slope, intercept=res.intercept, r2=res.r2,
                    pearson=res.pearson, spearman=res.spearman)])
    items = _labeled(config, args.data)
    proj = analysis.embedding_projection(model, [c.snapshot for c in items])
    write_csv(out / "pca.csv", ("id", "pc1", "pc2", "label"),
              [dict(id=c.name, pc1=float(p[0]), pc2=float(p[1]), label=c.label)
               for c, p in zip(items, proj)])
    print(f"space shift vs label: slope {res.slope:.4g}, intercept {res.intercept:.4g}, "
          f"R^2 {res.r2:.3f}, Pearson {res.pearson:.3f}")
    return EXIT_OK


def cmd_ablate(args, config: RunConfig) -> int:
    out = _out_dir(args.out)
    pre = read_bundles(args.pretrain_data)
    for t in pre:
        _check_features(t, config)
    items = _labeled(config.updated(task="affinity"), args.data, "affinity")
    train, val, test = split_dataset(items, config.split_fractions, config.split_seed)
    seeds = [int(s) for s in args.seeds.split(",")]
    results = ablation.run_ablation(pre, train, val, test, config, seeds,
                                    log=(lambda r: print(r["row"], r["seed"], r["val_rmse"])) if args.verbose else None)
    write_csv(out / "ablation.csv", ablation.COLUMNS, results)
    (out / "config.json").write_text(config.to_json())
    wins, n = ablation.full_beats_baseline(results)
    print(f"full fine-tuned configuration matches or beats no-pretrain on {wins}/{n} seeds")
    return EXIT_OK


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
    "probe": cmd_probe, "eval": cmd_eval, "analyze": cmd_analyze, "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdpretrain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="simulate toy complexes into trajectory bundles")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--n-frames", type=int, default=200)
    p.add_argument("--temperature", type=float, default=0.01)
    p.add_argument("--k-min", type=float, default=0.25)
    p.add_argument("--k-max", type=float, default=10.0)
    p.add_argument("--drift", action="store_true")
    p.add_argument("--drift-rate", type=float, default=0.01)
    p.add_argument("--tether-pull", type=float, default=0.0)

    p = sub.add_parser("pretrain", help="self-supervised pre-training on trajectory bundles")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, help="resume from these weights")

    for name, text in (("finetune", "fine-tune encoder and head"), ("probe", "train head and prompt only")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--data", type=Path, required=True)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--checkpoint", type=Path, help="pre-trained weights (random init if omitted)")

    p = sub.add_parser("eval", help="metrics of a model on a labelled set")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("analyze", help="space-shift regression and embedding PCA")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--interval", type=int, help="prompt interval (default: the longest)")

    p = sub.add_parser("ablate", help="pre-training toggle grid")
    p.add_argument("--pretrain-data", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seeds", default="0,1,2")

    for p in sub.choices.values():
        p.add_argument("-v", "--verbose", action="store_true")
        add_config_flags(p)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](args, config)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    raise SystemExit(main())
