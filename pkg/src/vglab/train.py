"""Dataset mixing, the decoupled-weight-decay training loop, ablation grid.

Training is plain per-sample gradient accumulation in a fixed order, global
norm clipping, and AdamW-style updates with a x0.1 learning-rate drop
partway through. Encoders run at a reduced learning rate relative to the
decoder and head. Everything is seeded; identical (config, seed, platform)
reproduces the checkpoint bit-for-bit.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .evaluate import EvalReport, evaluate
from .model import (
    ENCODER_PREFIXES,
    FeatureCache,
    ModelConfig,
    init_params,
    loss_and_grads,
    stable_json_hash,
)
from .queries import Dataset, build_augmented_dataset, build_base_dataset
from .scene import DetectorNoise

ABLATION_CELLS: tuple[tuple[str, bool, bool], ...] = (
    # (name, use_aug, use_prior)
    ("baseline", False, False),
    ("+aug", True, False),
    ("+prior", False, True),
    ("+both", True, True),
)


@dataclass(frozen=True)
class TrainConfig:
    # The learning rate is deliberately conservative: the structured init
    # starts from a working lookup circuit, and hotter rates (1e-3) tear it
    # down faster than the head can calibrate, landing in the query-only
    # blind optimum.
    lr: float = 1e-4
    encoder_lr_mult: float = 0.1
    epochs: int = 15
    lr_drop_epoch: int = 10  # 2/3 of the way through, mirroring the 60-of-90 schedule
    batch_size: int = 8
    mix_ratio: float = 1.0 / 3.0
    use_aug: bool = False
    use_prior: bool = False
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    warmup_steps: int = 100
    redraw_mix_each_epoch: bool = False

    def __post_init__(self) -> None:
        if not (0.0 <= self.mix_ratio <= 1.0):
            raise ValueError(f"mix_ratio {self.mix_ratio} outside [0, 1]")
        if not (0 <= self.lr_drop_epoch < self.epochs):
            raise ValueError(
                f"lr_drop_epoch {self.lr_drop_epoch} must precede epochs {self.epochs}"
            )

    def to_json_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class RunLog:
    seed: int
    config_hash: str
    n_train: int
    epoch_losses: list[float] = field(default_factory=list)
    epoch_lrs: list[float] = field(default_factory=list)
    wall_time_s: float = 0.0
    eval: dict | None = None

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_hash": self.config_hash,
            "n_train": self.n_train,
            "epoch_losses": self.epoch_losses,
            "epoch_lrs": self.epoch_lrs,
            "wall_time_s": self.wall_time_s,
            "eval": self.eval,
        }


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step


def mix_datasets(real, augmented, ratio: float, seed: int) -> list:
    """All real samples plus floor(ratio * |real|) augmented ones, shuffled.

    Augmented samples are drawn without replacement, cycling through fresh
    permutations when the pool is smaller than the request. Deterministic
    given seed.
    """
    if not (0.0 <= ratio <= 1.0):
        raise ValueError(f"ratio {ratio} outside [0, 1]")
    rng = np.random.default_rng((0xF6, seed))
    n_aug = int(ratio * len(real))
    picks: list = []
    if augmented and n_aug > 0:
        while len(picks) < n_aug:
            perm = rng.permutation(len(augmented))
            for idx in perm[: n_aug - len(picks)]:
                picks.append(augmented[idx])
    mixed = list(real) + picks
    order = rng.permutation(len(mixed))
    return [mixed[i] for i in order]


class AdamW:
    """Decoupled weight decay; zero-gradient steps shrink weights only."""

    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def lr_for(self, name: str, base_lr: float) -> float:
        if name.startswith(ENCODER_PREFIXES):
            return base_lr * self.cfg.encoder_lr_mult
        return base_lr

    def step(self, params, grads, base_lr: float) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m[name] = c.beta1 * self.m[name] + (1.0 - c.beta1) * g
            v = self.v[name] = c.beta2 * self.v[name] + (1.0 - c.beta2) * g * g
            lr = self.lr_for(name, base_lr)
            update = (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps)
            params[name] = p - lr * (update + c.weight_decay * p)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0.0:
        factor = max_norm / total
        for k in grads:
            grads[k] = grads[k] * factor
    return total


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    real_data: Dataset,
    aug_data: Dataset | None = None,
    seed: int = 0,
) -> tuple[dict[str, np.ndarray], RunLog]:
    """Optimize a fresh model on real (plus optionally mixed augmented) data.

    The training list is all real samples plus, when use_aug is on,
    mix_ratio * |real| augmented samples (fixed once by default; redrawn per
    epoch behind the config flag). Non-finite losses abort with the offending
    step recorded.
    """
    if not real_data.samples:
        raise ValueError("training dataset is empty")
    if train_cfg.use_aug and (aug_data is None or not aug_data.samples):
        raise ValueError("use_aug requires a non-empty augmented pool")

    scenes = dict(real_data.scenes)
    if aug_data is not None:
        scenes.update(aug_data.scenes)

    def epoch_samples(epoch: int) -> list:
        if not train_cfg.use_aug:
            return list(real_data.samples)
        mix_seed = (seed, epoch) if train_cfg.redraw_mix_each_epoch else (seed, 0)
        return mix_datasets(
            real_data.samples, aug_data.samples, train_cfg.mix_ratio, _fold(*mix_seed)
        )

    params = init_params(model_cfg, seed)
    opt = AdamW(params, train_cfg)
    cache = FeatureCache(model_cfg)
    rng = np.random.default_rng((0xAB, seed))
    log = RunLog(
        seed=seed,
        config_hash=stable_json_hash(
            {"model": model_cfg.to_json_dict(), "train": train_cfg.to_json_dict()}
        ),
        n_train=0,
    )

    t_start = time.perf_counter()
    samples = epoch_samples(0)
    log.n_train = len(samples)
    step = 0
    for epoch in range(train_cfg.epochs):
        if epoch > 0 and train_cfg.use_aug and train_cfg.redraw_mix_each_epoch:
            samples = epoch_samples(epoch)
        base_lr = train_cfg.lr * (0.1 if epoch >= train_cfg.lr_drop_epoch else 1.0)
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        for lo in range(0, len(order), train_cfg.batch_size):
            if train_cfg.warmup_steps and opt.t < train_cfg.warmup_steps:
                lr_now = base_lr * (opt.t + 1) / train_cfg.warmup_steps
            else:
                lr_now = base_lr
            batch = order[lo : lo + train_cfg.batch_size]
            grad_sum: dict[str, np.ndarray] | None = None
            for idx in batch:
                s = samples[idx]
                fr, grads = loss_and_grads(
                    s, scenes[s.scene_id], params, model_cfg,
                    use_prior=train_cfg.use_prior, cache=cache,
                )
                step += 1
                if not math.isfinite(fr.loss.total):
                    raise TrainingDivergedError(epoch, step, fr.loss.total)
                epoch_loss += fr.loss.total
                if grad_sum is None:
                    grad_sum = grads
                else:
                    for k in grad_sum:
                        grad_sum[k] = grad_sum[k] + grads[k]
            assert grad_sum is not None
            inv = 1.0 / len(batch)
            for k in grad_sum:
                grad_sum[k] = grad_sum[k] * inv
            clip_global_norm(grad_sum, train_cfg.clip_norm)
            opt.step(params, grad_sum, lr_now)
        log.epoch_losses.append(epoch_loss / len(samples))
        log.epoch_lrs.append(base_lr)
    log.wall_time_s = time.perf_counter() - t_start
    return params, log


def _fold(seed: int, salt: int) -> int:
    return (seed * 2_654_435_761 + salt) & 0x7FFFFFFF


@dataclass(frozen=True)
class ExperimentConfig:
    """Data sizes shared by every ablation cell."""

    n_train: int = 600
    n_test: int = 1000
    images_per_category: int = 50
    detector_sigma: float = 0.02
    detector_drop_p: float = 0.05
    detector_spurious_p: float = 0.05

    def noise(self) -> DetectorNoise:
        return DetectorNoise(
            sigma=self.detector_sigma,
            drop_p=self.detector_drop_p,
            spurious_p=self.detector_spurious_p,
        )

    def to_json_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)


def build_experiment_data(exp: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """(train, test, augmented-pool) datasets for one seed, deterministic."""
    train_data = build_base_dataset(exp.n_train, seed=_fold(seed, 1))
    test_data = build_base_dataset(exp.n_test, seed=_fold(seed, 2))
    aug_data = build_augmented_dataset(
        images_per_category=exp.images_per_category,
        noise=exp.noise(),
        seed=_fold(seed, 3),
    )
    return train_data, test_data, aug_data


def _run_cell(args: tuple) -> dict:
    (cell_name, use_aug, use_prior, seed, model_d, train_d, exp_d) = args
    model_cfg = ModelConfig.from_json_dict(model_d)
    train_cfg = replace(
        TrainConfig.from_json_dict(train_d), use_aug=use_aug, use_prior=use_prior
    )
    exp = ExperimentConfig.from_json_dict(exp_d)
    train_data, test_data, aug_data = build_experiment_data(exp, seed)
    params, log = train(model_cfg, train_cfg, train_data, aug_data, seed=seed)
    report = evaluate(params, model_cfg, test_data, use_prior=use_prior)
    log.eval = report.to_json_dict()
    return {
        "cell": cell_name,
        "seed": seed,
        "report": report.to_json_dict(),
        "runlog": log.to_json_dict(),
    }


def run_ablation_grid(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    exp: ExperimentConfig,
    seeds=(0, 1, 2),
    jobs: int = 1,
) -> dict:
    """4 configurations x |seeds| runs over identical per-seed data splits.

    Returns {"cells": [...], "seeds": [...], "mean_overall": {cell: acc}}.
    """
    tasks = [
        (name, use_aug, use_prior, seed,
         model_cfg.to_json_dict(), train_cfg.to_json_dict(), exp.to_json_dict())
        for seed in seeds
        for (name, use_aug, use_prior) in ABLATION_CELLS
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_run_cell, tasks))
    else:
        cells = [_run_cell(t) for t in tasks]

    mean_overall = {
        name: float(np.mean([c["report"]["overall"] for c in cells if c["cell"] == name]))
        for name, _, _ in ABLATION_CELLS
    }
    return {
        "seeds": list(seeds),
        "cells": cells,
        "mean_overall": mean_overall,
        "experiment": exp.to_json_dict(),
        "model": model_cfg.to_json_dict(),
        "train": train_cfg.to_json_dict(),
    }


def run_aug_size_sweep(
    values,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    exp: ExperimentConfig,
    seed: int = 0,
    jobs: int = 1,
) -> dict:
    """+aug runs across augmented-pool sizes (images per category).

    No accuracy ordering is asserted anywhere; this exists to produce the
    pool-size comparison rows.
    """
    tasks = []
    for v in values:
        exp_v = replace(exp, images_per_category=int(v))
        tasks.append(
            ("+aug", True, train_cfg.use_prior, seed,
             model_cfg.to_json_dict(), train_cfg.to_json_dict(), exp_v.to_json_dict())
        )
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_run_cell, tasks))
    else:
        cells = [_run_cell(t) for t in tasks]
    rows = []
    for v, cell in zip(values, cells):
        aug = build_augmented_dataset(
            images_per_category=int(v), noise=exp.noise(), seed=_fold(seed, 3)
        )
        rows.append(
            {
                "images_per_category": int(v),
                "n_aug_samples": len(aug),
                "overall": cell["report"]["overall"],
                "report": cell["report"],
            }
        )
    return {"seed": seed, "rows": rows}


# -- grid summarization (markdown + plot CSVs) --------------------------------


def _cells_named(grid: dict, name: str) -> list[dict]:
    return [c for c in grid["cells"] if c["cell"] == name]


def _mean_or_none(vals) -> float | None:
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def grid_markdown(grid: dict) -> str:
    """Ablation comparison table, one row per configuration, means over seeds."""
    bucket_labels = [b["label"] for b in grid["cells"][0]["report"]["buckets"]]
    lines = [
        "# Ablation results",
        "",
        f"Mean top-1 accuracy (IoU > 0.5) over seeds {grid['seeds']}.",
        "",
        "| configuration | overall | "
        + " | ".join(bucket_labels)
        + " | relation | no relation |",
        "|---" * (4 + len(bucket_labels)) + "|",
    ]
    for name, _, _ in ABLATION_CELLS:
        cells = _cells_named(grid, name)
        if not cells:
            continue
        overall = _mean_or_none([c["report"]["overall"] for c in cells])
        bucket_means = []
        for i in range(len(bucket_labels)):
            bucket_means.append(
                _mean_or_none([c["report"]["buckets"][i]["accuracy"] for c in cells])
            )
        rel = _mean_or_none(
            [c["report"]["relation_split"]["with_relation"]["accuracy"] for c in cells]
        )
        norel = _mean_or_none(
            [c["report"]["relation_split"]["without_relation"]["accuracy"] for c in cells]
        )

        def fmt(v):
            return "-" if v is None else f"{v:.4f}"

        lines.append(
            f"| {name} | {fmt(overall)} | "
            + " | ".join(fmt(v) for v in bucket_means)
            + f" | {fmt(rel)} | {fmt(norel)} |"
        )
    return "\n".join(lines) + "\n"


def grid_figure1_csv(grid: dict) -> str:
    """Per-distractor-count accuracy per configuration (sample-weighted)."""
    lines = ["configuration,distractor_count,n,accuracy"]
    for name, _, _ in ABLATION_CELLS:
        pooled: dict[int, list[tuple[int, float]]] = {}
        for c in _cells_named(grid, name):
            for row in c["report"]["per_count"]:
                if row["accuracy"] is not None:
                    pooled.setdefault(row["distractor_count"], []).append(
                        (row["n"], row["accuracy"])
                    )
        for d in sorted(pooled):
            n = sum(k for k, _ in pooled[d])
            acc = sum(k * a for k, a in pooled[d]) / n
            lines.append(f"{name},{d},{n},{acc:.6f}")
    return "\n".join(lines) + "\n"


def grid_figure3_csv(grid: dict) -> str:
    """Relation vs attribute-query accuracy per configuration."""
    lines = ["configuration,query_kind,n,accuracy"]
    for name, _, _ in ABLATION_CELLS:
        cells = _cells_named(grid, name)
        if not cells:
            continue
        for kind in ("with_relation", "without_relation"):
            n = sum(c["report"]["relation_split"][kind]["n"] for c in cells)
            acc = _mean_or_none(
                [c["report"]["relation_split"][kind]["accuracy"] for c in cells]
            )
            lines.append(f"{name},{kind},{n},{'' if acc is None else f'{acc:.6f}'}")
    return "\n".join(lines) + "\n"
