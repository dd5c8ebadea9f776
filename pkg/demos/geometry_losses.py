"""
Box geometry and the grounding loss
===================================

IoU, generalized IoU, and the smooth-L1 + (1 - GIoU) objective on a few
hand-picked box pairs, plus a look at how the loss surface behaves as a
predicted box slides across the target.
"""

import numpy as np

from vglab.geometry import (
    Box,
    box_from_corners,
    giou,
    grounding_loss,
    grounding_loss_grad,
    iou,
)

# Two classic pairs in corner form.
a = box_from_corners(0.0, 0.0, 0.4, 0.4)
b = box_from_corners(0.2, 0.2, 0.6, 0.6)
print(f"overlapping pair: iou={iou(a, b):.4f}  giou={giou(a, b):.4f}")

c = box_from_corners(0.0, 0.4, 0.2, 0.6)
d = box_from_corners(0.8, 0.4, 1.0, 0.6)
print(f"far-apart pair:   iou={iou(c, d):.4f}  giou={giou(c, d):.4f}  (giou < 0)")

# Slide a unit-square-quarter prediction across a fixed target and watch the
# loss fall as the centers align, even before any overlap exists.
target = Box(0.7, 0.5, 0.2, 0.2)
print("\n  pred cx    iou    giou   loss")
for cx in np.linspace(0.1, 0.7, 7):
    pred = Box(float(cx), 0.5, 0.2, 0.2)
    lv = grounding_loss(pred, target)
    print(f"  {cx:7.2f} {iou(pred, target):6.3f} {giou(pred, target):7.3f} {lv.total:6.3f}")

# The analytic gradient points toward the target along cx.
pred = Box(0.3, 0.5, 0.2, 0.2)
g = grounding_loss_grad(pred, target)
print(f"\nloss gradient at cx=0.30: d/dcx={g[0]:+.3f} (negative: move right)")
