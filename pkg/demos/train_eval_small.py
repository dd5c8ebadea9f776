"""
Tiny end-to-end training run
============================

Trains the grounder on a small synthetic corpus with the augmented
pseudo-query pool mixed in, then evaluates with the distractor-count and
relation splits. Sized to finish in about a minute on a laptop; accuracy is
modest at this scale, the point is the moving parts.
"""

import numpy as np

from vglab.evaluate import evaluate
from vglab.model import ModelConfig
from vglab.queries import build_augmented_dataset, build_base_dataset
from vglab.scene import DetectorNoise
from vglab.train import TrainConfig, train

train_data = build_base_dataset(300, seed=1)
test_data = build_base_dataset(150, seed=2)
aug_pool = build_augmented_dataset(
    images_per_category=10, noise=DetectorNoise(sigma=0.02), seed=3
)
print(f"{len(train_data)} real train / {len(test_data)} test / "
      f"{len(aug_pool)} augmented pseudo-queries")

model_cfg = ModelConfig()
train_cfg = TrainConfig(epochs=6, lr_drop_epoch=4, batch_size=8, use_aug=True)
params, log = train(model_cfg, train_cfg, train_data, aug_pool, seed=0)
print("epoch losses:", [round(x, 3) for x in log.epoch_losses])

report = evaluate(params, model_cfg, test_data)
print(f"\noverall top-1 accuracy @ IoU>0.5: {report.overall:.3f} (n={report.n})")
for b in report.buckets:
    acc = "-" if b["accuracy"] is None else f"{b['accuracy']:.3f}"
    print(f"  distractors {b['label']:>4}: n={b['n']:3d} accuracy {acc}")
split = report.relation_split
for kind, stats in split.items():
    acc = "-" if stats["accuracy"] is None else f"{stats['accuracy']:.3f}"
    print(f"  {kind:>16}: n={stats['n']:3d} accuracy {acc}")
