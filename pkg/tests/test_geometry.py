"""Box math tests: exact hand cases, pixel-counting oracle, gradient checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vglab.autodiff import finite_diff_check
from vglab.geometry import (
    Box,
    BoxError,
    box_convert,
    box_from_corners,
    giou,
    grounding_loss,
    grounding_loss_grad,
    iou,
    smooth_l1,
)

# Exact fractions, worked out from corner arithmetic:
#   (0,0,2,2) vs (1,1,3,3): inter 1, union 7, enclosing 9 -> IoU 1/7,
#   GIoU 1/7 - 2/9 = -5/63.
#   (0,0,1,1) vs (2,0,3,1): inter 0, union 2, enclosing 3 -> GIoU -1/3.
CASE_A = (box_from_corners(0, 0, 2, 2), box_from_corners(1, 1, 3, 3))
CASE_B = (box_from_corners(0, 0, 1, 1), box_from_corners(2, 0, 3, 1))


def random_box(rng, lo=0.25, hi=0.75, smin=0.18, smax=0.5):
    w = rng.uniform(smin, smax)
    h = rng.uniform(smin, smax)
    return Box(rng.uniform(lo, hi), rng.uniform(lo, hi), w, h)


def pixel_overlap(a: Box, b: Box, n: int = 512):
    """Independent pixel-center-counting oracle for IoU and GIoU."""

    def interval_mask(x0, x1):
        centers = (np.arange(n) + 0.5) / n
        return (centers >= x0) & (centers <= x1)

    def box_mask(box):
        x0, y0, x1, y1 = box.corners()
        return interval_mask(y0, y1)[:, None] & interval_mask(x0, x1)[None, :]

    ma, mb = box_mask(a), box_mask(b)
    inter = int(np.sum(ma & mb))
    union = int(np.sum(ma | mb))
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    encl = int(
        np.sum(
            interval_mask(min(ay0, by0), max(ay1, by1))[:, None]
            & interval_mask(min(ax0, bx0), max(ax1, bx1))[None, :]
        )
    )
    iou_px = inter / union
    return iou_px, iou_px - (encl - union) / encl


class TestIoU:
    def test_identity(self):
        b = Box(0.4, 0.6, 0.3, 0.2)
        assert iou(b, b) == 1.0

    def test_exact_case(self):
        a, b = CASE_A
        assert iou(a, b) == pytest.approx(1.0 / 7.0, abs=1e-9)

    def test_disjoint(self):
        assert iou(Box(0.2, 0.2, 0.1, 0.1), Box(0.8, 0.8, 0.1, 0.1)) == 0.0

    def test_degenerate_rejected(self):
        with pytest.raises(BoxError):
            Box(0.5, 0.5, 0.0, 0.1)
        with pytest.raises(BoxError):
            Box(0.5, 0.5, 0.1, -0.2)
        with pytest.raises(BoxError):
            Box(float("nan"), 0.5, 0.1, 0.1)

    def test_symmetry_and_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            a, b = random_box(rng), random_box(rng)
            assert iou(a, b) == pytest.approx(iou(b, a), abs=1e-12)
            assert giou(a, b) == pytest.approx(giou(b, a), abs=1e-12)
            # joint translation
            dx, dy = rng.uniform(-0.1, 0.1, size=2)
            at = Box(a.cx + dx, a.cy + dy, a.w, a.h)
            bt = Box(b.cx + dx, b.cy + dy, b.w, b.h)
            assert iou(at, bt) == pytest.approx(iou(a, b), abs=1e-9)
            assert giou(at, bt) == pytest.approx(giou(a, b), abs=1e-9)
            # joint uniform scaling
            s = rng.uniform(0.5, 1.5)
            a2 = Box(a.cx * s, a.cy * s, a.w * s, a.h * s)
            b2 = Box(b.cx * s, b.cy * s, b.w * s, b.h * s)
            assert iou(a2, b2) == pytest.approx(iou(a, b), abs=1e-9)
            assert giou(a2, b2) == pytest.approx(giou(a, b), abs=1e-9)

    def test_giou_never_exceeds_iou(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            a, b = random_box(rng), random_box(rng)
            assert giou(a, b) <= iou(a, b) + 1e-12

    def test_giou_equals_iou_when_enclosure_is_union(self):
        # flush-aligned boxes: enclosing box area == union area
        a = box_from_corners(0.0, 0.0, 0.5, 1.0)
        b = box_from_corners(0.5, 0.0, 1.0, 1.0)
        assert giou(a, b) == pytest.approx(iou(a, b), abs=1e-12)


class TestGIoU:
    def test_identity(self):
        b = Box(0.3, 0.3, 0.2, 0.4)
        assert giou(b, b) == 1.0

    def test_exact_cases(self):
        a, b = CASE_A
        assert giou(a, b) == pytest.approx(-5.0 / 63.0, abs=1e-9)
        c, d = CASE_B
        assert giou(c, d) == pytest.approx(-1.0 / 3.0, abs=1e-9)

    def test_pixel_oracle(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(300):
            a, b = random_box(rng), random_box(rng)
            iou_px, giou_px = pixel_overlap(a, b)
            worst = max(worst, abs(iou_px - iou(a, b)), abs(giou_px - giou(a, b)))
        assert worst < 2e-2


class TestSmoothL1:
    def test_zero_residual(self):
        b = Box(0.5, 0.5, 0.2, 0.2)
        assert smooth_l1(b, b) == 0.0

    def test_quadratic_region(self):
        pred = Box(1.0, 1.0, 1.0, 1.0)
        gt = Box(0.5, 0.5, 0.5, 0.5)  # all residuals 0.5
        assert smooth_l1(pred, gt) == pytest.approx(0.125, abs=1e-12)

    def test_linear_region(self):
        pred = Box(2.0, 2.0, 2.2, 2.2)
        gt = Box(0.0, 0.0, 0.2, 0.2)  # all residuals 2.0
        assert smooth_l1(pred, gt) == pytest.approx(1.5, abs=1e-12)

    def test_kink_continuity_and_one_sided_slopes(self):
        # per-coordinate Huber: value continuous at |x| = 1, slopes match
        def f(x):
            return 0.5 * x * x if abs(x) < 1 else abs(x) - 0.5

        eps = 1e-7
        assert f(1.0) == pytest.approx(0.5, abs=1e-12)
        left = (f(1.0) - f(1.0 - eps)) / eps
        right = (f(1.0 + eps) - f(1.0)) / eps
        assert left == pytest.approx(1.0, abs=1e-6)
        assert right == pytest.approx(1.0, abs=1e-6)


class TestGroundingLoss:
    def test_perfect_prediction(self):
        b = Box(0.4, 0.4, 0.3, 0.3)
        lv = grounding_loss(b, b)
        assert lv.total == 0.0
        assert lv.smooth_l1_term == 0.0
        assert lv.giou_term == 0.0

    def test_disjoint_giou_term(self):
        c, d = CASE_B
        lv = grounding_loss(c, d)
        assert lv.giou_term == pytest.approx(4.0 / 3.0, abs=1e-9)

    def test_total_is_exact_sum(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            a, b = random_box(rng), random_box(rng)
            lv = grounding_loss(a, b)
            assert lv.total == lv.smooth_l1_term + lv.giou_term  # exact
            assert lv.smooth_l1_term == pytest.approx(smooth_l1(a, b), abs=1e-12)
            assert lv.giou_term == pytest.approx(1.0 - giou(a, b), abs=1e-12)

    def test_analytic_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        checked = 0
        while checked < 100:
            pred, gt = random_box(rng), random_box(rng)
            ix0 = max(pred.corners()[0], gt.corners()[0])
            ix1 = min(pred.corners()[2], gt.corners()[2])
            iy0 = max(pred.corners()[1], gt.corners()[1])
            iy1 = min(pred.corners()[3], gt.corners()[3])
            # skip pairs near the overlap boundary (kink set)
            if abs(ix1 - ix0) < 1e-3 or abs(iy1 - iy0) < 1e-3:
                continue

            def f(vec):
                return grounding_loss(Box(*vec), gt).total

            err = finite_diff_check(
                f, np.array(pred.as_tuple()), grounding_loss_grad(pred, gt), eps=1e-5
            )
            assert err < 1e-6
            checked += 1


class TestBoxConvert:
    def test_full_canvas(self):
        assert box_convert(Box(0.5, 0.5, 1.0, 1.0), "corner") == (0.0, 0.0, 1.0, 1.0)

    def test_quarter(self):
        assert box_convert(Box(0.25, 0.25, 0.5, 0.5), "corner") == pytest.approx(
            (0.0, 0.0, 0.5, 0.5), abs=1e-12
        )

    def test_center_size_is_identity(self):
        b = Box(0.3, 0.7, 0.2, 0.1)
        assert box_convert(b, "center-size") == b.as_tuple()

    def test_unknown_form(self):
        with pytest.raises(ValueError):
            box_convert(Box(0.5, 0.5, 0.1, 0.1), "polar")

    @given(
        cx=st.floats(0.1, 0.9),
        cy=st.floats(0.1, 0.9),
        w=st.floats(0.01, 1.0),
        h=st.floats(0.01, 1.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_round_trip(self, cx, cy, w, h):
        b = Box(cx, cy, w, h)
        rt = box_from_corners(*box_convert(b, "corner"))
        for got, want in zip(rt.as_tuple(), b.as_tuple()):
            assert got == pytest.approx(want, abs=1e-12)

    def test_clamp_is_explicit(self):
        b = Box(0.95, 0.5, 0.2, 0.2)  # right corner at 1.05
        assert not b.inside_canvas()
        clamped = b.clamped()
        assert clamped.inside_canvas()
        assert clamped.corners()[2] == pytest.approx(1.0, abs=1e-12)
