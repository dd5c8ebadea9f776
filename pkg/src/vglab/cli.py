"""Command-line pipeline: synth, augment, train, eval, ablate, report.

Every command reads an optional JSON config file (sections "model", "train",
"experiment", "seeds"), applies flag overrides, writes its outputs under
--out, and finishes with a manifest listing each produced file and its
sha256. Exit codes: 0 success, 1 bad config, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .evaluate import evaluate, validate_report_dict
from .model import ModelConfig, load_checkpoint, save_checkpoint, stable_json_hash
from .queries import Dataset, build_augmented_dataset, export_relation_vocab
from .train import (
    ExperimentConfig,
    TrainConfig,
    build_experiment_data,
    grid_figure1_csv,
    grid_figure3_csv,
    grid_markdown,
    run_ablation_grid,
    run_aug_size_sweep,
    train,
)


class ConfigError(ValueError):
    """Bad or inconsistent configuration input."""


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _parse_sections(cfg: dict, args) -> tuple[ModelConfig, TrainConfig, ExperimentConfig, list[int]]:
    try:
        model_cfg = ModelConfig.from_json_dict(
            {**ModelConfig().to_json_dict(), **cfg.get("model", {})}
        )
        train_cfg = TrainConfig.from_json_dict(
            {**TrainConfig().to_json_dict(), **cfg.get("train", {})}
        )
        exp_cfg = ExperimentConfig.from_json_dict(
            {**ExperimentConfig().to_json_dict(), **cfg.get("experiment", {})}
        )
        seeds = list(cfg.get("seeds", [0, 1, 2]))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config: {e}") from e

    if getattr(args, "use_prior", False):
        train_cfg = replace(train_cfg, use_prior=True)
    if getattr(args, "use_aug", False):
        train_cfg = replace(train_cfg, use_aug=True)
    if getattr(args, "mix_ratio", None) is not None:
        try:
            train_cfg = replace(train_cfg, mix_ratio=args.mix_ratio)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    if getattr(args, "images_per_category", None) is not None:
        if args.images_per_category < 0:
            raise ConfigError("--images-per-category must be >= 0")
        exp_cfg = replace(exp_cfg, images_per_category=args.images_per_category)
    return model_cfg, train_cfg, exp_cfg, seeds


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, args, files: list[Path], seed) -> Path:
    manifest = {
        "command": command,
        "config_path": getattr(args, "config", None),
        "seed": seed,
        "outputs": {str(p.relative_to(out_dir)): _sha256(p) for p in sorted(files)},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    _, _, exp, _ = _parse_sections(cfg, args)
    out = _out_dir(args)
    from .queries import build_base_dataset
    from .train import _fold

    train_data = build_base_dataset(exp.n_train, seed=_fold(args.seed, 1))
    test_data = build_base_dataset(exp.n_test, seed=_fold(args.seed, 2))
    files = [*train_data.save(out, "train"), *test_data.save(out, "test")]
    _write_manifest(out, "synth", args, files, args.seed)
    print(f"synth: {len(train_data)} train / {len(test_data)} test samples -> {out}")
    return 0


def cmd_augment(args) -> int:
    cfg = _load_config(args.config)
    _, _, exp, _ = _parse_sections(cfg, args)
    out = _out_dir(args)
    from .train import _fold

    data = build_augmented_dataset(
        images_per_category=exp.images_per_category,
        noise=exp.noise(),
        seed=_fold(args.seed, 3),
    )
    files = list(data.save(out, "aug"))
    vocab_path = out / "relation_vocab.json"
    export_relation_vocab(vocab_path)
    files.append(vocab_path)
    _write_manifest(out, "augment", args, files, args.seed)
    print(
        f"augment: {len(data.scenes)} scenes, {len(data)} pseudo-query samples -> {out}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    model_cfg, train_cfg, _, _ = _parse_sections(cfg, args)
    out = _out_dir(args)
    data_dir = Path(args.data)
    try:
        real = Dataset.load(data_dir, "train")
    except FileNotFoundError as e:
        raise ConfigError(f"missing dataset under {data_dir}: {e}") from e
    aug = None
    if train_cfg.use_aug:
        try:
            aug = Dataset.load(data_dir, "aug")
        except FileNotFoundError as e:
            raise ConfigError(f"use_aug set but no augmented data in {data_dir}") from e

    params, log = train(model_cfg, train_cfg, real, aug, seed=args.seed)
    ckpt_files = save_checkpoint(
        out / "checkpoint", params, model_cfg,
        extra={"use_prior": train_cfg.use_prior, "seed": args.seed,
               "train": train_cfg.to_json_dict()},
    )
    runlog_path = out / "runlog.json"
    runlog_path.write_text(json.dumps(log.to_json_dict(), indent=2) + "\n")
    _write_manifest(out, "train", args, [*ckpt_files, runlog_path], args.seed)
    print(f"train: final loss {log.epoch_losses[-1]:.4f} over {log.n_train} samples -> {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    _ = _parse_sections(cfg, args)
    out = _out_dir(args)
    params, model_cfg, extra = load_checkpoint(args.ckpt)
    data = Dataset.load(Path(args.data), "test")
    report = evaluate(params, model_cfg, data, use_prior=bool(extra.get("use_prior")))
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")
    csv_path = out / "report.csv"
    csv_path.write_text(report.to_csv())
    files = [report_path, csv_path]
    if args.dump_iou:
        dump_path = out / "per_sample_iou.jsonl"
        with open(dump_path, "w") as fh:
            for r in report.results:
                fh.write(json.dumps(r.__dict__, separators=(",", ":")) + "\n")
        files.append(dump_path)
    _write_manifest(out, "eval", args, files, args.seed)
    print(f"eval: overall accuracy {report.overall:.4f} on {report.n} samples -> {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    model_cfg, train_cfg, exp, seeds = _parse_sections(cfg, args)
    if args.seed is not None and args.seed != 0:
        seeds = [args.seed]
    out = _out_dir(args)
    grid = run_ablation_grid(model_cfg, train_cfg, exp, seeds=seeds, jobs=args.jobs)
    files = [out / "summary.json"]
    files[0].write_text(json.dumps(grid, indent=2) + "\n")
    if args.images_sweep:
        values = [int(v) for v in args.images_sweep.split(",")]
        sweep = run_aug_size_sweep(values, model_cfg, train_cfg, exp,
                                   seed=seeds[0], jobs=args.jobs)
        sweep_path = out / "sweep.json"
        sweep_path.write_text(json.dumps(sweep, indent=2) + "\n")
        files.append(sweep_path)
    _write_manifest(out, "ablate", args, files, seeds)
    for name, acc in grid["mean_overall"].items():
        print(f"ablate: {name:9s} mean overall {acc:.4f}")
    return 0


def cmd_report(args) -> int:
    out = _out_dir(args)
    grid = json.loads(Path(args.ablation).read_text())
    for cell in grid["cells"]:
        validate_report_dict(cell["report"])
    md = grid_markdown(grid)
    sweep_md = ""
    if args.sweep:
        sweep = json.loads(Path(args.sweep).read_text())
        lines = ["", "## Augmented pool size sweep", "",
                 "| images per category | pseudo-query pool | overall accuracy |",
                 "|---|---|---|"]
        for row in sweep["rows"]:
            lines.append(
                f"| {row['images_per_category']} | {row['n_aug_samples']} "
                f"| {row['overall']:.4f} |"
            )
        sweep_md = "\n".join(lines) + "\n"
    md_path = out / "report.md"
    md_path.write_text(md + sweep_md)
    f1_path = out / "figure1.csv"
    f1_path.write_text(grid_figure1_csv(grid))
    f3_path = out / "figure3.csv"
    f3_path.write_text(grid_figure3_csv(grid))
    _write_manifest(out, "report", args, [md_path, f1_path, f3_path], None)
    print(f"report: wrote {md_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vglab",
        description="Synthetic visual-grounding laboratory pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, ckpt=False):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--use-prior", action="store_true", dest="use_prior")
        p.add_argument("--use-aug", action="store_true", dest="use_aug")
        p.add_argument("--images-per-category", type=int, default=None,
                       dest="images_per_category")
        p.add_argument("--mix-ratio", type=float, default=None, dest="mix_ratio")
        if data:
            p.add_argument("--data", required=True, help="dataset directory")
        if ckpt:
            p.add_argument("--ckpt", required=True, help="checkpoint base path")

    common(sub.add_parser("synth", help="generate the base train/test datasets"))
    common(sub.add_parser("augment", help="generate the pseudo-query pool"))
    common(sub.add_parser("train", help="train a model"), data=True)
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p_eval, data=True, ckpt=True)
    p_eval.add_argument("--dump-iou", action="store_true", dest="dump_iou")
    p_abl = sub.add_parser("ablate", help="run the 4-configuration grid")
    common(p_abl)
    p_abl.add_argument("--images-sweep", default=None,
                       help="comma list of images-per-category values")
    p_rep = sub.add_parser("report", help="merge results into tables")
    common(p_rep)
    p_rep.add_argument("--ablation", required=True, help="ablate summary.json")
    p_rep.add_argument("--sweep", default=None, help="ablate sweep.json")
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "augment": cmd_augment,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(json.dumps({"error": "config", "message": str(e)}), file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - single-line runtime failure contract
        print(json.dumps({"error": "runtime", "message": f"{type(e).__name__}: {e}"}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
