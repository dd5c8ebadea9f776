"""Synthetic multi-object scenes: sampling, rasterization, detector stub.

Scenes are specs, not pixels: a SceneSpec is a small JSON-able description
that rasterizes on demand, so datasets stay tiny and bit-exact. The sampler
produces two populations: multi-instance single-category scenes (the
augmentation source) and mixed base scenes whose distractor counts follow a
long-tail distribution (the stand-in for a real grounding corpus).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, iou
from .relations import QuerySample, RelationLabel, assign_relations, resolve_query

SHAPES = ("square", "circle", "triangle")
COLOR_RGB = {
    "red": (200, 50, 45),
    "green": (60, 170, 70),
    "blue": (55, 90, 200),
    "yellow": (225, 205, 55),
    "purple": (150, 65, 175),
    "cyan": (70, 190, 200),
}
COLORS = tuple(COLOR_RGB)
BACKGROUND = (128, 128, 128)

DEFAULT_CANVAS = (64, 64)
SMALL_AREA_MAX = 0.02  # normalized area below which size label is "small"
MAX_OBJECTS = 12
MAX_PAIR_IOU = 0.1
_SIZE_RANGE = (0.12, 0.38)  # sampled object width/height, canvas units
_PLACEMENT_ATTEMPTS = 1000

# Distinct rng streams so the same integer seed never reuses draws.
_STREAM_MULTI = 0xA1
_STREAM_BASE = 0xB2
_STREAM_DETECT = 0xD3


class PlacementError(RuntimeError):
    """Rejection sampling could not place the requested objects."""


def size_label(box: Box) -> str:
    return "small" if box.area() < SMALL_AREA_MAX else "large"


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    color: str
    size: str
    box: Box

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.color not in COLOR_RGB:
            raise ValueError(f"unknown color {self.color!r}")
        if self.size != size_label(self.box):
            raise ValueError(
                f"size label {self.size!r} inconsistent with area {self.box.area():.4f}"
            )
        if not self.box.inside_canvas():
            raise ValueError(f"object box {self.box} outside canvas")


def make_object(shape: str, color: str, box: Box) -> ObjectSpec:
    return ObjectSpec(shape=shape, color=color, size=size_label(box), box=box)


@dataclass(frozen=True)
class SceneSpec:
    scene_id: str
    seed: int
    canvas: tuple[int, int]  # (H, W) pixels
    objects: tuple[ObjectSpec, ...]
    target_category: str

    def __post_init__(self) -> None:
        if len(self.objects) > MAX_OBJECTS:
            raise ValueError(f"{len(self.objects)} objects exceeds {MAX_OBJECTS}")
        if self.target_category not in SHAPES:
            raise ValueError(f"unknown target category {self.target_category!r}")
        boxes = [o.box for o in self.objects]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                overlap = iou(boxes[i], boxes[j])
                if overlap > MAX_PAIR_IOU + 1e-9:
                    raise ValueError(
                        f"objects {i},{j} overlap with IoU {overlap:.3f} > {MAX_PAIR_IOU}"
                    )

    def distractor_count(self) -> int:
        """Same-category object count minus one (the target itself)."""
        return sum(1 for o in self.objects if o.shape == self.target_category) - 1

    def category_boxes(self) -> list[Box]:
        return [o.box for o in self.objects if o.shape == self.target_category]

    def to_json_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "seed": self.seed,
            "canvas": list(self.canvas),
            "target_category": self.target_category,
            "objects": [
                {
                    "shape": o.shape,
                    "color": o.color,
                    "size": o.size,
                    "box": list(o.box.as_tuple()),
                }
                for o in self.objects
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            scene_id=d["scene_id"],
            seed=int(d["seed"]),
            canvas=tuple(d["canvas"]),
            objects=tuple(
                ObjectSpec(o["shape"], o["color"], o["size"], Box(*o["box"]))
                for o in d["objects"]
            ),
            target_category=d["target_category"],
        )


@dataclass(frozen=True)
class DetectorNoise:
    """Jitter parameters for the detection stub; all-zero means exact."""

    sigma: float = 0.0
    drop_p: float = 0.0
    spurious_p: float = 0.0

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not (0.0 <= self.drop_p <= 1.0):
            raise ValueError("drop_p must lie in [0, 1]")
        if not (0.0 <= self.spurious_p <= 0.3):
            raise ValueError("spurious_p must lie in [0, 0.3]")

    @property
    def is_exact(self) -> bool:
        return self.sigma == 0.0 and self.drop_p == 0.0 and self.spurious_p == 0.0


@dataclass(frozen=True)
class DetectionSet:
    boxes: tuple[Box, ...]
    provenance: str

    def __len__(self) -> int:
        return len(self.boxes)


def _sample_box(rng: np.random.Generator, size_hi: float = _SIZE_RANGE[1]) -> Box:
    w = rng.uniform(_SIZE_RANGE[0], size_hi)
    h = rng.uniform(_SIZE_RANGE[0], size_hi)
    cx = rng.uniform(w / 2.0, 1.0 - w / 2.0)
    cy = rng.uniform(h / 2.0, 1.0 - h / 2.0)
    return Box(cx, cy, w, h)


def _place_boxes(rng: np.random.Generator, n: int, canvas: tuple[int, int]) -> list[Box]:
    """Rejection-sample n boxes with pairwise IoU <= MAX_PAIR_IOU."""
    # Crowded scenes cap object size so rejection sampling stays reliable.
    size_hi = _SIZE_RANGE[1] if n < 8 else 0.22
    placed: list[Box] = []
    for _ in range(n):
        for attempt in range(_PLACEMENT_ATTEMPTS):
            cand = _sample_box(rng, size_hi)
            if all(iou(cand, other) <= MAX_PAIR_IOU for other in placed):
                placed.append(cand)
                break
        else:
            raise PlacementError(
                f"failed to place {n} objects on {canvas[0]}x{canvas[1]} canvas "
                f"after {_PLACEMENT_ATTEMPTS} attempts"
            )
    return placed


def sample_multi_instance_scene(
    category: str,
    count: int,
    seed: int,
    canvas: tuple[int, int] = DEFAULT_CANVAS,
) -> SceneSpec:
    """Scene of `count +- 1` same-category objects (generator stand-in).

    The quantifier slack (-1/0/+1 with probability 0.2/0.6/0.2) models a
    generator that does not always honor the requested count. With
    probability 0.5 every instance shares one color, which leaves spatial
    relations as the only way to tell them apart.
    """
    if category not in SHAPES:
        raise ValueError(f"unknown category {category!r}")
    if not (3 <= count <= 10):
        raise ValueError(f"count {count} outside [3, 10]")
    rng = np.random.default_rng((_STREAM_MULTI, count, seed))
    slack = int(rng.choice([-1, 0, 1], p=[0.2, 0.6, 0.2]))
    n = count + slack
    boxes = _place_boxes(rng, n, canvas)
    if rng.random() < 0.5:
        colors = [str(rng.choice(COLORS))] * n
    else:
        colors = [str(rng.choice(COLORS)) for _ in range(n)]
    objects = tuple(make_object(category, c, b) for c, b in zip(colors, boxes))
    return SceneSpec(
        scene_id=f"aug-{category}-{seed}",
        seed=seed,
        canvas=canvas,
        objects=objects,
        target_category=category,
    )


# Long-tail distractor-count distribution for base scenes: bucket probability
# then a uniform count within the bucket.
_BASE_BUCKETS = ((0.70, (0, 1)), (0.25, (2, 3)), (0.05, (4, 7)))


def _draw_distractor_count(rng: np.random.Generator) -> int:
    u = rng.random()
    acc = 0.0
    for p, (lo, hi) in _BASE_BUCKETS:
        acc += p
        if u < acc:
            return int(rng.integers(lo, hi + 1))
    return int(rng.integers(*_BASE_BUCKETS[-1][1]))


def _relation_query_prob(d: int) -> float:
    # Higher distractor counts lean harder on relations, mirroring how
    # attribute words stop discriminating once duplicates pile up.
    if d <= 1:
        return 0.25
    if d <= 3:
        return 0.5
    return 0.7


def sample_base_scene(
    seed: int, canvas: tuple[int, int] = DEFAULT_CANVAS
) -> tuple[SceneSpec, QuerySample]:
    """Mixed-shape scene plus one guaranteed-unambiguous query for it.

    The target category's distractor count follows the long-tail bucket
    distribution {0-1: 70%, 2-3: 25%, >=4: 5%}. The query either names a
    color unique among same-category objects or, when the scene is
    color-ambiguous, a spatial relation that the resolver certifies.
    """
    rng = np.random.default_rng((_STREAM_BASE, seed))
    target_shape = str(rng.choice(SHAPES))
    d = _draw_distractor_count(rng)
    n_targets = d + 1
    n_fillers = int(rng.integers(0, 4))
    boxes = _place_boxes(rng, n_targets + n_fillers, canvas)
    target_boxes, filler_boxes = boxes[:n_targets], boxes[n_targets:]

    other_shapes = [s for s in SHAPES if s != target_shape]

    want_relation = d >= 1 and rng.random() < _relation_query_prob(d)
    relation: RelationLabel | None = None
    tokens: tuple[str, ...]
    filler_pool = list(COLORS)

    if want_relation:
        if rng.random() < 0.7:
            colors = [str(rng.choice(COLORS))] * n_targets
        else:
            colors = [str(rng.choice(COLORS)) for _ in range(n_targets)]
        candidates = [
            (i, label)
            for i, labels in assign_relations(target_boxes).items()
            for label in sorted(labels, key=lambda l: l.value)
            if resolve_query(label, target_boxes) == i
        ]
        if candidates:
            tgt_idx, relation = candidates[int(rng.integers(len(candidates)))]
            tokens = (relation.value, target_shape)
        else:
            want_relation = False  # no margin-clean relation; fall back
    if not want_relation:
        # Attribute query: the named color appears on the target alone, so
        # color matching is a sound localization strategy on its own.
        target_color = str(rng.choice(COLORS))
        pool = [c for c in COLORS if c != target_color]
        colors = [str(rng.choice(pool)) for _ in range(n_targets)]
        tgt_idx = int(rng.integers(n_targets))
        colors[tgt_idx] = target_color
        filler_pool = pool
        if d == 0 and rng.random() < 0.3:
            tokens = (target_shape,)
        else:
            tokens = (target_color, target_shape)
        relation = None

    fillers = [
        make_object(str(rng.choice(other_shapes)), str(rng.choice(filler_pool)), b)
        for b in filler_boxes
    ]
    targets = [make_object(target_shape, c, b) for c, b in zip(colors, target_boxes)]
    spec = SceneSpec(
        scene_id=f"base-{seed}",
        seed=seed,
        canvas=canvas,
        objects=tuple(targets + fillers),
        target_category=target_shape,
    )
    sample = QuerySample(
        scene_id=spec.scene_id,
        tokens=tokens,
        target_box=target_boxes[tgt_idx],
        source="real",
        distractor_count=d,
        relation=relation,
    )
    return spec, sample


# -- rasterization ----------------------------------------------------------


def _shape_mask(shape: str, box: Box, h: int, w: int) -> np.ndarray:
    """Boolean (H, W) mask of pixels whose centers fall inside the shape."""
    px = (np.arange(w) + 0.5) / w
    py = (np.arange(h) + 0.5) / h
    xs = px[None, :]
    ys = py[:, None]
    dx = xs - box.cx
    dy = ys - box.cy
    hw, hh = box.w / 2.0, box.h / 2.0
    if shape == "square":
        return (np.abs(dx) <= hw) & (np.abs(dy) <= hh)
    if shape == "circle":
        return (dx / hw) ** 2 + (dy / hh) ** 2 <= 1.0
    if shape == "triangle":
        # Apex at top center, base along the bottom edge of the box.
        t = (dy + hh) / box.h  # 0 at apex row, 1 at base row
        inside_rows = (t >= 0.0) & (t <= 1.0)
        return inside_rows & (np.abs(dx) <= hw * np.clip(t, 0.0, 1.0))
    raise ValueError(f"unknown shape {shape!r}")


def rasterize(spec: SceneSpec) -> np.ndarray:
    """Deterministic (H, W, 3) uint8 render; later objects draw over earlier."""
    h, w = spec.canvas
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    for obj in spec.objects:
        mask = _shape_mask(obj.shape, obj.box, h, w)
        img[mask] = COLOR_RGB[obj.color]
    return img


def ppm_bytes(img: np.ndarray) -> bytes:
    """Binary PPM (P6) encoding of an (H, W, 3) uint8 image."""
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode() + img.tobytes()


def write_ppm(img: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(ppm_bytes(img))


# -- detector stub ------------------------------------------------------------


def detect(spec: SceneSpec, noise: DetectorNoise, seed: int) -> DetectionSet:
    """Perturb spec boxes per the noise model; deterministic given seed.

    Centers and sizes receive additive Gaussian jitter of sigma (normalized
    units, clamped back to validity), each box is dropped with drop_p, and
    with probability spurious_p one spurious box is appended. Output order is
    canonical: sorted by (cx, cy).
    """
    rng = np.random.default_rng((_STREAM_DETECT, seed))
    boxes: list[Box] = []
    if noise.is_exact:
        boxes = [o.box for o in spec.objects]
    else:
        for obj in spec.objects:
            if rng.random() < noise.drop_p:
                continue
            dcx, dcy, dw, dh = rng.normal(0.0, noise.sigma, size=4) if noise.sigma > 0 else (
                0.0,
                0.0,
                0.0,
                0.0,
            )
            b = obj.box
            boxes.append(
                Box(
                    float(np.clip(b.cx + dcx, 0.0, 1.0)),
                    float(np.clip(b.cy + dcy, 0.0, 1.0)),
                    float(np.clip(b.w + dw, 0.01, 1.0)),
                    float(np.clip(b.h + dh, 0.01, 1.0)),
                )
            )
        if rng.random() < noise.spurious_p:
            boxes.append(_sample_box(rng))
    boxes.sort(key=lambda b: (b.cx, b.cy))
    prov = (
        "exact"
        if noise.is_exact
        else f"jittered(sigma={noise.sigma},drop_p={noise.drop_p},spurious_p={noise.spurious_p})"
    )
    return DetectionSet(boxes=tuple(boxes), provenance=prov)
