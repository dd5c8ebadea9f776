"""Axis-aligned box math: IoU, generalized IoU, smooth-L1, and the grounding loss.

Boxes live in normalized center-size form (cx, cy, w, h). All functions here
are pure and scalar; the training loop gets analytic loss gradients from
:func:`grounding_loss_grad` and feeds them to the autodiff tape as the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class BoxError(ValueError):
    """Degenerate or non-finite box input."""


@dataclass(frozen=True)
class Box:
    """Rectangle in center-size form, dimensionless canvas units.

    Width and height must be strictly positive. Centers are normally inside
    [0, 1] but that is a scene-level constraint, not enforced here: the loss
    must accept out-of-canvas boxes (e.g. enclosing-box arithmetic on corner
    coordinates larger than 1), so only finiteness and positivity are hard
    requirements. Use :meth:`inside_canvas` where the canvas bound matters.
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise BoxError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise BoxError(f"degenerate box: w={self.w}, h={self.h}")

    def corners(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max)."""
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)

    def inside_canvas(self, tol: float = 1e-9) -> bool:
        """True if all four corners lie in the unit canvas (within tol)."""
        x0, y0, x1, y1 = self.corners()
        return x0 >= -tol and y0 >= -tol and x1 <= 1.0 + tol and y1 <= 1.0 + tol

    def clamped(self) -> "Box":
        """Explicitly clip corners to the unit canvas. Never applied implicitly."""
        x0, y0, x1, y1 = self.corners()
        x0, y0 = max(x0, 0.0), max(y0, 0.0)
        x1, y1 = min(x1, 1.0), min(y1, 1.0)
        if x1 <= x0 or y1 <= y0:
            raise BoxError("clamp would collapse the box to zero area")
        return box_from_corners(x0, y0, x1, y1)


@dataclass(frozen=True)
class LossValue:
    """Composite grounding loss; total is exactly the sum of the two terms."""

    smooth_l1_term: float
    giou_term: float
    total: float


def box_from_corners(x0: float, y0: float, x1: float, y1: float) -> Box:
    """Build a Box from corner form (x_min, y_min, x_max, y_max)."""
    return Box((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)


def box_convert(b: Box, form: str) -> tuple[float, float, float, float]:
    """Return b's coordinates in the requested form.

    form is "center-size" for (cx, cy, w, h) or "corner" for
    (x_min, y_min, x_max, y_max). Round-trips with box_from_corners are
    lossless.
    """
    if form == "center-size":
        return b.as_tuple()
    if form == "corner":
        return b.corners()
    raise ValueError(f"unknown box form {form!r}")


def _overlap_parts(a: Box, b: Box) -> tuple[float, float, float]:
    """(intersection, union, enclosing-box area) for two boxes.

    All areas derive from corner coordinates so that identical boxes give an
    intersection bitwise equal to the union (w*h and the corner product can
    differ in the last ulp).
    """
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    inter = iw * ih if (iw > 0.0 and ih > 0.0) else 0.0
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    cw = max(ax1, bx1) - min(ax0, bx0)
    ch = max(ay1, by1) - min(ay0, by0)
    return inter, union, cw * ch


def iou(a: Box, b: Box) -> float:
    """Intersection over union, in [0, 1]. Symmetric."""
    inter, union, _ = _overlap_parts(a, b)
    return inter / union


def giou(a: Box, b: Box) -> float:
    """Generalized IoU: IoU minus the enclosing-box penalty (C - U) / C.

    Ranges over (-1, 1]; equals IoU exactly when the enclosing box is the
    union (e.g. identical or flush-aligned boxes).
    """
    inter, union, encl = _overlap_parts(a, b)
    return inter / union - (encl - union) / encl


def smooth_l1(pred: Box, gt: Box) -> float:
    """Mean over the four center-size coordinates of the Huber form.

    Per coordinate: 0.5 x^2 for |x| < 1, else |x| - 0.5.
    """
    total = 0.0
    for p, g in zip(pred.as_tuple(), gt.as_tuple()):
        x = p - g
        total += 0.5 * x * x if abs(x) < 1.0 else abs(x) - 0.5
    return total / 4.0


def grounding_loss(pred: Box, gt: Box) -> LossValue:
    """Smooth-L1 plus (1 - GIoU), the box regression objective."""
    s = smooth_l1(pred, gt)
    g = 1.0 - giou(pred, gt)
    return LossValue(smooth_l1_term=s, giou_term=g, total=s + g)


def _smooth_l1_grad(pred: Box, gt: Box) -> np.ndarray:
    g = np.empty(4)
    for i, (p, t) in enumerate(zip(pred.as_tuple(), gt.as_tuple())):
        x = p - t
        g[i] = x if abs(x) < 1.0 else math.copysign(1.0, x)
    return g / 4.0


def _giou_grad(a: Box, b: Box) -> np.ndarray:
    """d giou(a, b) / d (a.cx, a.cy, a.w, a.h), b held fixed.

    Uses giou = I/U - 1 + U/C and the corner sensitivities of the min/max
    arithmetic; one-sided at ties (a measure-zero set).
    """
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    overlap = iw > 0.0 and ih > 0.0
    inter = iw * ih if overlap else 0.0
    union = a.area() + b.area() - inter
    cw = max(ax1, bx1) - min(ax0, bx0)
    ch = max(ay1, by1) - min(ay0, by0)
    encl = cw * ch

    # Intersection partials w.r.t. a's corners (zero when disjoint).
    di = {
        "x0": -ih if (overlap and ax0 > bx0) else 0.0,
        "x1": ih if (overlap and ax1 < bx1) else 0.0,
        "y0": -iw if (overlap and ay0 > by0) else 0.0,
        "y1": iw if (overlap and ay1 < by1) else 0.0,
    }
    # Enclosing-box partials w.r.t. a's corners.
    dc = {
        "x0": -ch if ax0 < bx0 else 0.0,
        "x1": ch if ax1 > bx1 else 0.0,
        "y0": -cw if ay0 < by0 else 0.0,
        "y1": cw if ay1 > by1 else 0.0,
    }

    def d_giou(d_inter: float, d_area: float, d_encl: float) -> float:
        d_union = d_area - d_inter
        return (
            d_inter / union
            - inter * d_union / union**2
            + d_union / encl
            - union * d_encl / encl**2
        )

    # Chain corner partials into center-size parameters; a.area depends on
    # (w, h) directly.
    grad = np.array(
        [
            d_giou(di["x0"] + di["x1"], 0.0, dc["x0"] + dc["x1"]),
            d_giou(di["y0"] + di["y1"], 0.0, dc["y0"] + dc["y1"]),
            d_giou(0.5 * (di["x1"] - di["x0"]), a.h, 0.5 * (dc["x1"] - dc["x0"])),
            d_giou(0.5 * (di["y1"] - di["y0"]), a.w, 0.5 * (dc["y1"] - dc["y0"])),
        ]
    )
    return grad


def grounding_loss_grad(pred: Box, gt: Box) -> np.ndarray:
    """Analytic d(total loss)/d(pred cx, cy, w, h).

    Valid away from the Huber kink (|residual| = 1) and box-arithmetic tie
    points; both are measure-zero and the training trajectory never needs
    exact values there.
    """
    return _smooth_l1_grad(pred, gt) - _giou_grad(pred, gt)
