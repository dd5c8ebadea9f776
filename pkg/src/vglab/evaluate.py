"""Top-1 accuracy at IoU > 0.5, with distractor-count and relation splits.

A prediction is correct iff its IoU with the ground-truth box strictly
exceeds 0.5. Reports carry enough per-bucket structure to audit: bucket
counts partition n, and per-count rows back the bucket table for plotting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import iou
from .model import FeatureCache, ModelConfig, forward, stable_json_hash
from .queries import Dataset

IOU_THRESHOLD = 0.5
BUCKETS: tuple[tuple[int, int | None], ...] = ((0, 1), (2, 3), (4, 5), (6, None))


@dataclass(frozen=True)
class SampleResult:
    scene_id: str
    distractor_count: int
    relation: str | None
    iou: float
    correct: bool


def _bucket_label(lo: int, hi: int | None) -> str:
    return f"{lo}-{hi}" if hi is not None else f">={lo}"


def _accuracy(flags: list[bool]) -> float | None:
    return float(np.mean(flags)) if flags else None


def stratify_by_distractors(results) -> list[dict]:
    """Per-bucket accuracy and count; buckets partition the sample set."""
    table = []
    for lo, hi in BUCKETS:
        flags = [
            r.correct
            for r in results
            if r.distractor_count >= lo and (hi is None or r.distractor_count <= hi)
        ]
        table.append(
            {
                "label": _bucket_label(lo, hi),
                "lo": lo,
                "hi": hi,
                "n": len(flags),
                "accuracy": _accuracy(flags),
            }
        )
    return table


def per_count_table(results) -> list[dict]:
    """Accuracy per exact distractor count (plot-ready granularity)."""
    counts = sorted({r.distractor_count for r in results})
    return [
        {
            "distractor_count": c,
            "n": sum(1 for r in results if r.distractor_count == c),
            "accuracy": _accuracy([r.correct for r in results if r.distractor_count == c]),
        }
        for c in counts
    ]


def split_by_relation(results) -> dict:
    """Accuracy over relation queries vs attribute-only queries."""
    withr = [r.correct for r in results if r.relation is not None]
    without = [r.correct for r in results if r.relation is None]
    return {
        "with_relation": {"n": len(withr), "accuracy": _accuracy(withr)},
        "without_relation": {"n": len(without), "accuracy": _accuracy(without)},
    }


@dataclass
class EvalReport:
    n: int
    overall: float
    buckets: list[dict]
    per_count: list[dict]
    relation_split: dict
    config_hash: str
    results: list[SampleResult] = field(default_factory=list, repr=False, compare=False)

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "overall": self.overall,
            "buckets": self.buckets,
            "per_count": self.per_count,
            "relation_split": self.relation_split,
            "config_hash": self.config_hash,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EvalReport":
        return cls(
            n=d["n"],
            overall=d["overall"],
            buckets=d["buckets"],
            per_count=d["per_count"],
            relation_split=d["relation_split"],
            config_hash=d["config_hash"],
        )

    def bucket_accuracy(self, label: str) -> float | None:
        for b in self.buckets:
            if b["label"] == label:
                return b["accuracy"]
        raise KeyError(label)

    def to_csv(self) -> str:
        lines = ["bucket,n,accuracy"]
        for b in self.buckets:
            acc = "" if b["accuracy"] is None else f"{b['accuracy']:.6f}"
            lines.append(f"{b['label']},{b['n']},{acc}")
        return "\n".join(lines) + "\n"


def validate_report_dict(d: dict) -> None:
    """Schema check for a serialized EvalReport; raises ValueError."""
    required = {"n", "overall", "buckets", "per_count", "relation_split", "config_hash"}
    missing = required - set(d)
    if missing:
        raise ValueError(f"report missing keys {sorted(missing)}")
    if not isinstance(d["n"], int) or d["n"] < 0:
        raise ValueError("n must be a nonnegative integer")
    if not (0.0 <= d["overall"] <= 1.0):
        raise ValueError("overall accuracy outside [0, 1]")
    if sum(b["n"] for b in d["buckets"]) != d["n"]:
        raise ValueError("bucket counts do not sum to n")
    for b in d["buckets"]:
        if b["accuracy"] is not None and not (0.0 <= b["accuracy"] <= 1.0):
            raise ValueError(f"bucket {b['label']} accuracy outside [0, 1]")
        if b["n"] == 0 and b["accuracy"] is not None:
            raise ValueError(f"empty bucket {b['label']} must report null accuracy")
    split = d["relation_split"]
    if split["with_relation"]["n"] + split["without_relation"]["n"] != d["n"]:
        raise ValueError("relation split does not partition n")


def evaluate(
    params,
    model_cfg: ModelConfig,
    data: Dataset,
    use_prior: bool = False,
    cache: FeatureCache | None = None,
) -> EvalReport:
    """Score every sample; correct iff iou(pred, gt) > 0.5 strictly."""
    if not data.samples:
        raise ValueError("evaluation dataset is empty")
    cache = cache or FeatureCache(model_cfg)
    results: list[SampleResult] = []
    for sample in data.samples:
        fr = forward(
            sample, data.scene_for(sample), params, model_cfg,
            use_prior=use_prior, cache=cache,
        )
        overlap = iou(fr.box, sample.target_box)
        results.append(
            SampleResult(
                scene_id=sample.scene_id,
                distractor_count=sample.distractor_count,
                relation=sample.relation.value if sample.relation else None,
                iou=float(overlap),
                correct=bool(overlap > IOU_THRESHOLD),
            )
        )
    return EvalReport(
        n=len(results),
        overall=float(np.mean([r.correct for r in results])),
        buckets=stratify_by_distractors(results),
        per_count=per_count_table(results),
        relation_split=split_by_relation(results),
        config_hash=stable_json_hash(
            {"model": model_cfg.to_json_dict(), "use_prior": use_prior}
        ),
        results=results,
    )
