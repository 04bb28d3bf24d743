"""Command-line entry point wiring configs to data, training, and evaluation.

Exit codes: 0 success; 1 missing file; 2 usage or configuration error;
3 failed --check threshold.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .bench import (AblationSpec, EvalProtocol, evaluate,
                    export_mi_distribution, run_ablation)
from .config import (ConfigError, apply_overrides, config_fingerprint,
                     load_config, write_snapshot)
from .episodes import (RasterDatasetSpec, SamplingError, SyntheticDatasetSpec,
                       load_dataset, make_raster, make_synthetic, save_dataset)
from .model import Model, ModelConfig
from .train import TrainConfig, meta_train

WORKERS_ENV = "PROTOREFINE_WORKERS"

VARIANT_AXES = ("uncertainty_onoff", "weight_generator_variant")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protorefine",
        description="Few-shot classification with uncertainty-weighted "
                    "iterative prototype refinement.",
        epilog=f"Default worker count comes from ${WORKERS_ENV} when set.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file layered over defaults")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        dest="overrides",
                        help="dotted config override, repeatable (flag wins)")
    common.add_argument("--seed", type=int, help="seed for the selected mode")
    common.add_argument("--out", help="output directory (default runs/<mode>)")

    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("make-data", parents=[common],
                   help="generate a dataset file from the dataset section")

    p_train = sub.add_parser("train", parents=[common],
                             help="meta-train a model and save the best checkpoint")
    p_train.add_argument("--episodes", type=int, help="training episode budget")

    p_eval = sub.add_parser("eval", parents=[common],
                            help="evaluate a checkpoint on random episodes")
    p_eval.add_argument("--episodes", type=int, help="evaluation episode count")
    p_eval.add_argument("--workers", type=int, help="parallel episode workers")
    p_eval.add_argument("--checkpoint", help="model checkpoint path")
    p_eval.add_argument("--check", action="store_true",
                        help="fail (exit 3) below eval.min_accuracy")

    p_abl = sub.add_parser("ablate", parents=[common],
                           help="sweep one ablation axis with paired episodes")
    p_abl.add_argument("--axis", help="ablation axis name")
    p_abl.add_argument("--episodes", type=int, help="episodes per cell")
    p_abl.add_argument("--workers", type=int, help="parallel episode workers")
    p_abl.add_argument("--check", action="store_true",
                       help="fail (exit 3) unless ablation.check_ordering "
                            "cells are non-decreasing")

    p_exp = sub.add_parser("export-mi", parents=[common],
                           help="export per-episode uncertainty/weight rows")
    p_exp.add_argument("--episodes", type=int, help="episodes per variant")
    return parser


def _resolved_config(args) -> dict:
    cfg = load_config(args.config)
    apply_overrides(cfg, args.overrides)
    # dedicated flags win over --set
    seed_key = {"make-data": ("dataset", "seed"), "train": ("train", "seed"),
                "eval": ("eval", "seed"), "ablate": ("ablation", "seed"),
                "export-mi": ("export", "seed")}[args.command]
    if args.seed is not None:
        cfg[seed_key[0]][seed_key[1]] = args.seed
    episodes_key = {"train": "train", "eval": "eval", "ablate": "ablation",
                    "export-mi": "export"}.get(args.command)
    if episodes_key and getattr(args, "episodes", None) is not None:
        cfg[episodes_key]["episodes"] = args.episodes
    if getattr(args, "checkpoint", None):
        cfg["eval"]["checkpoint"] = args.checkpoint
    if getattr(args, "axis", None):
        cfg["ablation"]["axis"] = args.axis
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else Path("runs") / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _workers(args, cfg) -> int:
    if getattr(args, "workers", None):
        return args.workers
    if cfg["eval"]["workers"]:
        return int(cfg["eval"]["workers"])
    env = os.environ.get(WORKERS_ENV)
    return int(env) if env else 1


def _dataset(cfg):
    d = cfg["dataset"]
    if d["path"]:
        return load_dataset(d["path"])
    fractions = tuple(d["split_fractions"])
    if d["kind"] == "synthetic":
        return make_synthetic(SyntheticDatasetSpec(
            num_classes=d["num_classes"],
            instances_per_class=d["instances_per_class"],
            feature_dim=d["feature_dim"],
            class_center_scale=d["class_center_scale"],
            within_class_sigma=d["within_class_sigma"],
            split_fractions=fractions, seed=d["seed"]))
    if d["kind"] == "raster":
        return make_raster(RasterDatasetSpec(
            num_classes=d["num_classes"],
            instances_per_class=d["instances_per_class"],
            image_size=d["image_size"], channels=d["channels"],
            split_fractions=fractions, seed=d["seed"]))
    raise ConfigError(f"unknown dataset.kind {d['kind']!r}")


def _protocol(cfg, predict=None, iterations=None) -> EvalProtocol:
    e = cfg["episode"]
    return EvalProtocol(
        n_way=e["n_way"], k_shot=e["k_shot"], n_query=e["n_query"],
        n_unlabeled=e["n_unlabeled"], distractors=e["distractors"],
        iterations=iterations, predict=predict or "a0")


def _load_model(path, key: str) -> Model:
    if not path:
        raise ConfigError(f"{key} must name a checkpoint file")
    model, _ = Model.load(path)
    return model


def _emit(payload: dict) -> None:
    print(json.dumps(payload))


def _cmd_make_data(args, cfg, out: Path) -> int:
    dataset = _dataset(cfg)
    path = out / "dataset.npz"
    save_dataset(path, dataset)
    _emit({"dataset": str(path), "mode": dataset.mode,
           "classes": dataset.num_classes,
           "instances_per_class": dataset.instances_per_class})
    return 0


def _cmd_train(args, cfg, out: Path) -> int:
    dataset = _dataset(cfg)
    model = Model(ModelConfig.from_dict(cfg["model"]))
    t, e = cfg["train"], cfg["episode"]
    train_cfg = TrainConfig(
        episodes=t["episodes"], n_way=e["n_way"], k_shot=e["k_shot"],
        n_query=e["n_query"], n_unlabeled=e["n_unlabeled"],
        distractors=e["distractors"], lam=t["lam"], lr=t["lr"],
        encoder_lr=t["encoder_lr"], momentum=t["momentum"],
        val_interval=t["val_interval"], val_episodes=t["val_episodes"],
        val_seed=t["val_seed"], val_predict=t["val_predict"],
        log_interval=t["log_interval"])
    result = meta_train(model, dataset, train_cfg, seed=t["seed"],
                        log_path=out / "train_log.ldjson")
    checkpoint = out / "model.json"
    model.save(checkpoint, extra_meta={
        "final_val_accuracy": result.final_val_accuracy,
        "best_episode": result.best_episode,
        "train_seed": t["seed"],
        "val_seed": t["val_seed"] if t["val_seed"] is not None else t["seed"] + 7919,
        "val_episodes": t["val_episodes"],
        "val_predict": t["val_predict"],
        "config_fingerprint": config_fingerprint(cfg),
    })
    _emit({"checkpoint": str(checkpoint),
           "episodes": result.episodes_run,
           "final_val_accuracy": result.final_val_accuracy,
           "best_episode": result.best_episode})
    return 0


def _cmd_eval(args, cfg, out: Path) -> int:
    model = _load_model(cfg["eval"]["checkpoint"], "eval.checkpoint")
    dataset = _dataset(cfg)
    ev = cfg["eval"]
    protocol = _protocol(cfg, predict=ev["predict"], iterations=ev["iterations"])
    report = evaluate(model, dataset, ev["split"], protocol,
                      episodes=ev["episodes"], seed=ev["seed"],
                      workers=_workers(args, cfg))
    payload = report.to_dict()
    payload.pop("elapsed_s")  # results must be reproducible bit for bit
    with open(out / "eval_report.json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    _emit({"split": ev["split"], "accuracy": report.accuracy,
           "ci95": report.ci95, "n_episodes": report.n_episodes,
           "elapsed_s": report.elapsed_s})
    if args.check:
        threshold = ev["min_accuracy"]
        if threshold is None:
            raise ConfigError("--check needs eval.min_accuracy")
        if report.accuracy < float(threshold):
            print(f"check failed: accuracy {report.accuracy:.2f} "
                  f"< {float(threshold):.2f}", file=sys.stderr)
            return 3
    return 0


def _cmd_ablate(args, cfg, out: Path) -> int:
    ab = cfg["ablation"]
    axis, grid = ab["axis"], ab["grid"]
    if not isinstance(grid, list):
        raise ConfigError("ablation.grid must be a list")
    grid = tuple(tuple(v) if isinstance(v, list) else v for v in grid)
    if axis in VARIANT_AXES:
        labels = [str(v) for v in grid]
        missing = [l for l in labels if l not in ab["checkpoints"]]
        if missing:
            raise ConfigError(
                f"ablation.checkpoints missing {missing[0]!r}")
        models = {l: _load_model(ab["checkpoints"][l],
                                 f"ablation.checkpoints.{l}")
                  for l in labels}
    else:
        models = _load_model(ab["checkpoint"], "ablation.checkpoint")
    spec = AblationSpec(axis=axis, grid=grid, episodes=ab["episodes"],
                        seed=ab["seed"], protocol=_protocol(cfg))
    result = run_ablation(spec, models, _dataset(cfg), split=ab["split"],
                          workers=_workers(args, cfg))
    result.write_csv(out / "ablation_episodes.csv")
    result.write_json(out / "ablation.json")
    summary = result.summary_rows()
    with open(out / "ablation_summary.csv", "w") as fh:
        fh.write("axis,cell,accuracy,ci95,n_episodes,seed\n")
        for row in summary:
            fh.write(f"{axis},{row['cell']},{row['accuracy']:.10g},"
                     f"{row['ci95']:.10g},{row['n_episodes']},{row['seed']}\n")
    _emit({"axis": axis, "cells": [{k: r[k] for k in ("cell", "accuracy", "ci95")}
                                   for r in summary]})
    if args.check:
        ordering = ab["check_ordering"]
        if not ordering:
            raise ConfigError("--check needs ablation.check_ordering")
        by_label = {label: rep.accuracy for label, rep in result.cells}
        unknown = [l for l in ordering if l not in by_label]
        if unknown:
            raise ConfigError(
                f"ablation.check_ordering names absent cell {unknown[0]!r}")
        values = [by_label[l] for l in ordering]
        if any(b < a for a, b in zip(values, values[1:])):
            print(f"check failed: ordering {ordering} not non-decreasing: "
                  f"{values}", file=sys.stderr)
            return 3
    return 0


def _cmd_export_mi(args, cfg, out: Path) -> int:
    ex = cfg["export"]
    if not ex["checkpoints"]:
        raise ConfigError("export.checkpoints must map variants to files")
    models = {label: _load_model(path, f"export.checkpoints.{label}")
              for label, path in ex["checkpoints"].items()}
    path = out / "mi_distribution.csv"
    rows = export_mi_distribution(models, _dataset(cfg), path,
                                  split=ex["split"], episodes=ex["episodes"],
                                  top_k=ex["top_k"], seed=ex["seed"],
                                  protocol=_protocol(cfg))
    _emit({"csv": str(path), "rows": rows, "variants": sorted(models)})
    return 0


_COMMANDS = {
    "make-data": _cmd_make_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "export-mi": _cmd_export_mi,
}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return int(exc.code or 0)
    try:
        cfg = _resolved_config(args)
        out = _out_dir(args)
        write_snapshot(cfg, out / "config.yaml")
        return _COMMANDS[args.command](args, cfg, out)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, SamplingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
