"""Pseudo-query generation from detections, and dataset assembly and IO.

A pseudo pair is a templated query "{relation} {category}" whose target is
one detected box. Labels come from assign_relations on the detected boxes
themselves, and every emitted pair must survive the resolve_query uniqueness
oracle, so supervision stays self-consistent even under detector noise: the
label and the target are computed from the same (possibly wrong) boxes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .relations import (
    DEFAULT_RHO,
    DEFAULT_TAU,
    RELATION_PRIORITY,
    RELATION_WORDS,
    QuerySample,
    assign_relations,
    resolve_query,
)
from .scene import (
    SHAPES,
    DetectionSet,
    DetectorNoise,
    SceneSpec,
    detect,
    sample_base_scene,
    sample_multi_instance_scene,
)

DEFAULT_PAIR_CAP = 4
_PRIORITY_RANK = {label: i for i, label in enumerate(RELATION_PRIORITY)}


@dataclass
class Dataset:
    """Query samples plus the scene store they refer to."""

    samples: list[QuerySample]
    scenes: dict[str, SceneSpec] = field(default_factory=dict)

    def scene_for(self, sample: QuerySample) -> SceneSpec:
        return self.scenes[sample.scene_id]

    def __len__(self) -> int:
        return len(self.samples)

    def save(self, out_dir, prefix: str) -> tuple[Path, Path]:
        """Write {prefix}_samples.jsonl and {prefix}_scenes.jsonl; byte-stable."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        samples_path = out_dir / f"{prefix}_samples.jsonl"
        scenes_path = out_dir / f"{prefix}_scenes.jsonl"
        with open(samples_path, "w") as fh:
            for s in self.samples:
                fh.write(json.dumps(s.to_json_dict(), separators=(",", ":")) + "\n")
        with open(scenes_path, "w") as fh:
            for sid in sorted(self.scenes):
                fh.write(
                    json.dumps(self.scenes[sid].to_json_dict(), separators=(",", ":")) + "\n"
                )
        return samples_path, scenes_path

    @classmethod
    def load(cls, out_dir, prefix: str) -> "Dataset":
        out_dir = Path(out_dir)
        samples = [
            QuerySample.from_json_dict(json.loads(line))
            for line in (out_dir / f"{prefix}_samples.jsonl").read_text().splitlines()
            if line
        ]
        scenes = {}
        for line in (out_dir / f"{prefix}_scenes.jsonl").read_text().splitlines():
            if line:
                spec = SceneSpec.from_json_dict(json.loads(line))
                scenes[spec.scene_id] = spec
        return cls(samples=samples, scenes=scenes)


def generate_pseudo_pairs(
    detections: DetectionSet,
    category: str,
    scene_id: str,
    tau: float = DEFAULT_TAU,
    rho: float = DEFAULT_RHO,
    cap: int = DEFAULT_PAIR_CAP,
) -> list[QuerySample]:
    """Uniquely-resolvable (relation, category) pairs over one detection set.

    Fewer than two detections yield no pairs (not an error). At most cap
    pairs survive, picked by the fixed label priority order.
    """
    boxes = list(detections.boxes)
    if len(boxes) < 2:
        return []
    labels = assign_relations(boxes, tau, rho)
    candidates = [
        (_PRIORITY_RANK[label], i, label)
        for i, labs in labels.items()
        for label in labs
        if resolve_query(label, boxes, tau, rho) == i
    ]
    candidates.sort()
    out = []
    for _, i, label in candidates[:cap]:
        out.append(
            QuerySample(
                scene_id=scene_id,
                tokens=(label.value, category),
                target_box=boxes[i],
                source="aug",
                distractor_count=len(boxes) - 1,
                relation=label,
            )
        )
    return out


def _mix_seed(seed: int, *parts: int) -> int:
    x = seed & 0x7FFFFFFF
    for p in parts:
        x = (x * 1_000_003 + p + 1) & 0x7FFFFFFF
    return x


def build_augmented_dataset(
    categories=SHAPES,
    images_per_category: int = 50,
    count_range: tuple[int, int] = (3, 10),
    noise: DetectorNoise = DetectorNoise(),
    seed: int = 0,
    tau: float = DEFAULT_TAU,
    rho: float = DEFAULT_RHO,
    cap: int = DEFAULT_PAIR_CAP,
) -> Dataset:
    """Multi-instance scenes -> detections -> pseudo pairs, per category.

    Deterministic given seed; instance counts are drawn uniformly from
    count_range per scene.
    """
    import numpy as np

    if images_per_category < 0:
        raise ValueError("images_per_category must be >= 0")
    master = np.random.default_rng((0xC4, seed))
    samples: list[QuerySample] = []
    scenes: dict[str, SceneSpec] = {}
    for ci, category in enumerate(categories):
        for k in range(images_per_category):
            count = int(master.integers(count_range[0], count_range[1] + 1))
            scene_seed = _mix_seed(seed, ci, k)
            spec = sample_multi_instance_scene(category, count, scene_seed)
            scenes[spec.scene_id] = spec
            dets = detect(spec, noise, seed=scene_seed)
            samples.extend(
                generate_pseudo_pairs(dets, category, spec.scene_id, tau, rho, cap)
            )
    return Dataset(samples=samples, scenes=scenes)


def build_base_dataset(n: int, seed: int = 0) -> Dataset:
    """n long-tail base scenes, one query each (the 'real' corpus stand-in)."""
    samples: list[QuerySample] = []
    scenes: dict[str, SceneSpec] = {}
    for i in range(n):
        spec, sample = sample_base_scene(_mix_seed(seed, i))
        scenes[spec.scene_id] = spec
        samples.append(sample)
    return Dataset(samples=samples, scenes=scenes)


def export_relation_vocab(path) -> None:
    """Relation word list as JSON, for external tooling."""
    with open(path, "w") as fh:
        json.dump(list(RELATION_WORDS), fh, indent=2)
        fh.write("\n")
