"""Spatial relation labels over box sets, with a brute-force resolver oracle.

Labels are assigned by comparing box centers and areas with explicit margins
(tau in normalized center units, rho as a relative area factor); a label whose
margin fails is simply not emitted, so every emitted label identifies its box
unambiguously. resolve_query re-derives the answer by exhaustive comparison
and is the independent check used to certify generated pseudo-queries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .geometry import Box

DEFAULT_TAU = 0.05
DEFAULT_RHO = 0.2

MAX_QUERY_TOKENS = 6


class RelationLabel(str, Enum):
    """Closed set of spatial relations a query can name.

    Horizontal/vertical/corner labels compare box centers; FRONT and BEHIND
    compare areas (largest and smallest) as a monocular depth proxy.
    """

    LEFTMOST = "leftmost"
    RIGHTMOST = "rightmost"
    TOPMOST = "topmost"
    BOTTOMMOST = "bottommost"
    MIDDLE = "middle"
    SECOND_LEFT = "second_left"
    SECOND_RIGHT = "second_right"
    LEFT_TOP = "left_top"
    RIGHT_TOP = "right_top"
    LEFT_BOTTOM = "left_bottom"
    RIGHT_BOTTOM = "right_bottom"
    FRONT = "front"
    BEHIND = "behind"


# Order used to pick which pseudo-query pairs survive the per-scene cap.
RELATION_PRIORITY: tuple[RelationLabel, ...] = (
    RelationLabel.LEFTMOST,
    RelationLabel.RIGHTMOST,
    RelationLabel.TOPMOST,
    RelationLabel.BOTTOMMOST,
    RelationLabel.LEFT_TOP,
    RelationLabel.RIGHT_TOP,
    RelationLabel.LEFT_BOTTOM,
    RelationLabel.RIGHT_BOTTOM,
    RelationLabel.MIDDLE,
    RelationLabel.SECOND_LEFT,
    RelationLabel.SECOND_RIGHT,
    RelationLabel.FRONT,
    RelationLabel.BEHIND,
)

RELATION_WORDS: tuple[str, ...] = tuple(label.value for label in RelationLabel)
_WORD_TO_LABEL = {label.value: label for label in RelationLabel}


@dataclass(frozen=True)
class QuerySample:
    """One (query, target box) supervision pair with provenance metadata."""

    scene_id: str
    tokens: tuple[str, ...]
    target_box: Box
    source: str  # "real" | "aug"
    distractor_count: int
    relation: RelationLabel | None = None

    def __post_init__(self) -> None:
        if not (1 <= len(self.tokens) <= MAX_QUERY_TOKENS):
            raise ValueError(f"query length {len(self.tokens)} outside [1, {MAX_QUERY_TOKENS}]")
        if self.source not in ("real", "aug"):
            raise ValueError(f"unknown sample source {self.source!r}")
        if self.distractor_count < 0:
            raise ValueError("distractor_count must be >= 0")
        has_word = any(t in _WORD_TO_LABEL for t in self.tokens)
        if has_word != (self.relation is not None):
            raise ValueError("relation field must match presence of a relation token")

    def to_json_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "tokens": list(self.tokens),
            "target_box": list(self.target_box.as_tuple()),
            "source": self.source,
            "distractor_count": self.distractor_count,
            "relation": self.relation.value if self.relation else None,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "QuerySample":
        rel = d.get("relation")
        return cls(
            scene_id=d["scene_id"],
            tokens=tuple(d["tokens"]),
            target_box=Box(*d["target_box"]),
            source=d["source"],
            distractor_count=int(d["distractor_count"]),
            relation=RelationLabel(rel) if rel else None,
        )


def _extreme(vals: list[float], margin: float, largest: bool) -> int | None:
    """Index of the extreme value if it clears the runner-up by >= margin."""
    order = sorted(range(len(vals)), key=vals.__getitem__, reverse=largest)
    lead = abs(vals[order[0]] - vals[order[1]])
    return order[0] if lead >= margin else None


def assign_relations(
    boxes: list[Box], tau: float = DEFAULT_TAU, rho: float = DEFAULT_RHO
) -> dict[int, set[RelationLabel]]:
    """Map each box index to the relation labels it earns under the margins.

    Requires at least two boxes. Ties and sub-margin leads emit nothing, so
    the returned labels are exactly the ones a query could use unambiguously.
    """
    n = len(boxes)
    if n < 2:
        raise ValueError(f"assign_relations needs >= 2 boxes, got {n}")
    cx = [b.cx for b in boxes]
    cy = [b.cy for b in boxes]
    areas = [b.area() for b in boxes]
    corner_margin = tau * math.sqrt(2.0)

    out: dict[int, set[RelationLabel]] = {i: set() for i in range(n)}

    def emit(idx: int | None, label: RelationLabel) -> None:
        if idx is not None:
            out[idx].add(label)

    emit(_extreme(cx, tau, largest=False), RelationLabel.LEFTMOST)
    emit(_extreme(cx, tau, largest=True), RelationLabel.RIGHTMOST)
    emit(_extreme(cy, tau, largest=False), RelationLabel.TOPMOST)
    emit(_extreme(cy, tau, largest=True), RelationLabel.BOTTOMMOST)

    diag_sum = [x + y for x, y in zip(cx, cy)]
    diag_diff = [x - y for x, y in zip(cx, cy)]
    emit(_extreme(diag_sum, corner_margin, largest=False), RelationLabel.LEFT_TOP)
    emit(_extreme(diag_sum, corner_margin, largest=True), RelationLabel.RIGHT_BOTTOM)
    emit(_extreme(diag_diff, corner_margin, largest=True), RelationLabel.RIGHT_TOP)
    emit(_extreme(diag_diff, corner_margin, largest=False), RelationLabel.LEFT_BOTTOM)

    order = sorted(range(n), key=cx.__getitem__)
    if n >= 3:
        if cx[order[1]] - cx[order[0]] >= tau and cx[order[2]] - cx[order[1]] >= tau:
            out[order[1]].add(RelationLabel.SECOND_LEFT)
        if cx[order[-1]] - cx[order[-2]] >= tau and cx[order[-2]] - cx[order[-3]] >= tau:
            out[order[-2]].add(RelationLabel.SECOND_RIGHT)
    if n % 2 == 1:
        mid = order[n // 2]
        if (
            cx[mid] - cx[order[n // 2 - 1]] >= tau
            and cx[order[n // 2 + 1]] - cx[mid] >= tau
        ):
            out[mid].add(RelationLabel.MIDDLE)

    by_area = sorted(range(n), key=areas.__getitem__)
    if areas[by_area[-1]] >= (1.0 + rho) * areas[by_area[-2]]:
        out[by_area[-1]].add(RelationLabel.FRONT)
    if areas[by_area[1]] >= (1.0 + rho) * areas[by_area[0]]:
        out[by_area[0]].add(RelationLabel.BEHIND)

    return out


def resolve_query(
    relation: RelationLabel,
    boxes: list[Box],
    tau: float = DEFAULT_TAU,
    rho: float = DEFAULT_RHO,
) -> int | None:
    """Exhaustively evaluate a relation over boxes; None means ambiguous.

    This is the oracle side of the pseudo-query pipeline: it never sorts or
    shares code with assign_relations, it just checks every box against the
    relation's defining comparison and demands a unique winner.
    """
    n = len(boxes)
    if n < 1:
        raise ValueError("resolve_query needs at least one box")
    cx = [b.cx for b in boxes]
    cy = [b.cy for b in boxes]
    areas = [b.area() for b in boxes]
    corner_margin = tau * math.sqrt(2.0)

    def beats_all(i: int, key: list[float], margin: float, largest: bool) -> bool:
        if largest:
            return all(key[i] - key[j] >= margin for j in range(n) if j != i)
        return all(key[j] - key[i] >= margin for j in range(n) if j != i)

    def rank_from_left(i: int, want_left: int) -> bool:
        left = sum(1 for j in range(n) if j != i and cx[j] <= cx[i] - tau)
        near = sum(1 for j in range(n) if j != i and abs(cx[j] - cx[i]) < tau)
        return left == want_left and near == 0

    candidates: list[int] = []
    for i in range(n):
        if relation is RelationLabel.LEFTMOST:
            ok = beats_all(i, cx, tau, largest=False)
        elif relation is RelationLabel.RIGHTMOST:
            ok = beats_all(i, cx, tau, largest=True)
        elif relation is RelationLabel.TOPMOST:
            ok = beats_all(i, cy, tau, largest=False)
        elif relation is RelationLabel.BOTTOMMOST:
            ok = beats_all(i, cy, tau, largest=True)
        elif relation is RelationLabel.LEFT_TOP:
            ok = beats_all(i, [x + y for x, y in zip(cx, cy)], corner_margin, largest=False)
        elif relation is RelationLabel.RIGHT_BOTTOM:
            ok = beats_all(i, [x + y for x, y in zip(cx, cy)], corner_margin, largest=True)
        elif relation is RelationLabel.RIGHT_TOP:
            ok = beats_all(i, [x - y for x, y in zip(cx, cy)], corner_margin, largest=True)
        elif relation is RelationLabel.LEFT_BOTTOM:
            ok = beats_all(i, [x - y for x, y in zip(cx, cy)], corner_margin, largest=False)
        elif relation is RelationLabel.SECOND_LEFT:
            ok = rank_from_left(i, want_left=1)
        elif relation is RelationLabel.SECOND_RIGHT:
            ok = rank_from_left(i, want_left=n - 2) if n >= 2 else False
        elif relation is RelationLabel.MIDDLE:
            ok = n % 2 == 1 and rank_from_left(i, want_left=(n - 1) // 2)
        elif relation is RelationLabel.FRONT:
            ok = all(areas[i] >= (1.0 + rho) * areas[j] for j in range(n) if j != i)
        elif relation is RelationLabel.BEHIND:
            ok = all(areas[j] >= (1.0 + rho) * areas[i] for j in range(n) if j != i)
        else:  # pragma: no cover - closed enum
            raise ValueError(f"unhandled relation {relation}")
        if ok:
            candidates.append(i)

    return candidates[0] if len(candidates) == 1 else None
