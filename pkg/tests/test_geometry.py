import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from v2xsim.geometry import (box_corners, box_iou, boxes_overlap, near_pairs, point_in_box,
                             segment_hits_box, wrap_angle)

coord = st.floats(-5, 5)
ext = st.floats(0.3, 4)
ang = st.floats(-math.pi, math.pi)
boxes = st.tuples(coord, coord, ext, ext, ang)


def sampled_iou(a, b, n=600):
    """Dense point sampling over a square that encloses both boxes."""
    reach = [0.5 * math.hypot(bx[2], bx[3]) for bx in (a, b)]
    lo = min(a[0] - reach[0], b[0] - reach[1])
    hi = max(a[0] + reach[0], b[0] + reach[1])
    lo_y = min(a[1] - reach[0], b[1] - reach[1])
    hi_y = max(a[1] + reach[0], b[1] + reach[1])
    xs = np.linspace(lo, hi, n)
    ys = np.linspace(lo_y, hi_y, n)
    gx, gy = np.meshgrid(xs, ys)

    def inside(bx):
        cx, cy, ln, wd, yaw = bx
        c, s = math.cos(yaw), math.sin(yaw)
        u = c * (gx - cx) + s * (gy - cy)
        v = -s * (gx - cx) + c * (gy - cy)
        return (np.abs(u) <= ln / 2) & (np.abs(v) <= wd / 2)

    ia, ib = inside(a), inside(b)
    union = (ia | ib).sum()
    return (ia & ib).sum() / union if union else 0.0


def test_iou_examples():
    a = (0, 0, 2, 2, 0)
    assert box_iou(a, a) == pytest.approx(1.0)
    assert box_iou(a, (1, 0, 2, 2, 0)) == pytest.approx(2 / 6)
    assert box_iou(a, (10, 0, 2, 2, 0)) == 0.0
    # a square rotated by 90 degrees is the same square
    assert box_iou(a, (0, 0, 2, 2, math.pi / 2)) == pytest.approx(1.0)


@given(boxes, boxes)
def test_iou_matches_sampling_oracle(a, b):
    assert box_iou(a, b) == pytest.approx(sampled_iou(a, b), abs=0.03)


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    v = box_iou(a, b)
    assert 0.0 <= v <= 1.0 + 1e-12
    assert v == pytest.approx(box_iou(b, a), abs=1e-9)


@given(boxes, boxes)
def test_overlap_consistent_with_iou_and_near(a, b):
    if box_iou(a, b) > 1e-9:
        assert boxes_overlap(a, b)
    if boxes_overlap(a, b):
        assert near_pairs([a], [b])[0, 0]


def test_corners_ccw_and_point_in_box():
    c = box_corners(0, 0, 4, 2, 0)
    assert c[0] == pytest.approx((2, 1))
    assert point_in_box(1.9, 0.9, (0, 0, 4, 2, 0))
    assert not point_in_box(0, 1.1, (0, 0, 4, 2, 0))
    assert point_in_box(0, 1.9, (0, 0, 4, 2, math.pi / 2))


def test_segment_hits_box():
    b = (5, 0, 2, 2, 0)
    assert segment_hits_box((0, 0), (10, 0), b)
    assert not segment_hits_box((0, 2), (10, 2), b)
    assert not segment_hits_box((0, 0), (3.9, 0), b)
    assert segment_hits_box((0, -5), (10, 5), (5, 0, 2, 2, math.pi / 4))


@given(st.floats(-50, 50))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi <= w < math.pi
    assert math.cos(w) == pytest.approx(math.cos(a), abs=1e-9)
