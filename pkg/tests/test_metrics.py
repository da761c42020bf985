import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from v2xsim.drive import Route
from v2xsim.fusion import Detection
from v2xsim.metrics import (APAccumulator, ap_from_records, average_precision, average_precision_frames,
                            class_merged_ap, composited_ap, driving_result, infraction_penalty, match_frame,
                            mean_ci, pr_curve, route_completion)


def brute_ap(records, n_gt):
    """11-free reference: area under the monotone precision envelope, point by point."""
    recs = sorted(records, key=lambda r: -r[0])
    tp, prec, rec = 0, [], []
    for k, (_, hit) in enumerate(recs, 1):
        tp += hit
        prec.append(tp / k)
        rec.append(tp / n_gt)
    total, prev_r = 0.0, 0.0
    for i in range(len(recs)):
        p = max(prec[i:])
        total += (rec[i] - prev_r) * p
        prev_r = rec[i]
    return total


def test_ap_five_of_six_example():
    # six ground truths; five perfect detections ranked first
    recs = [(1.0 - 0.1 * k, True) for k in range(5)]
    assert ap_from_records(recs, 6) == pytest.approx(5 / 6)


def test_ap_edge_cases():
    assert ap_from_records([], 0) == 1.0
    assert ap_from_records([(0.5, False)], 0) == 0.0
    assert ap_from_records([], 3) == 0.0
    assert ap_from_records([(0.9, False), (0.8, True)], 1) == pytest.approx(0.5)


@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), max_size=30), st.integers(1, 10))
def test_ap_matches_reference(records, extra):
    n_gt = sum(h for _, h in records) + extra - 1 or 1
    # stable order for tied scores in both implementations
    assert ap_from_records(records, n_gt) == pytest.approx(brute_ap(records, n_gt), abs=1e-12)
    assert 0.0 <= ap_from_records(records, n_gt) <= 1.0


def test_pr_curve():
    pts = pr_curve([(0.9, True), (0.8, False)], 2)
    assert [(p.precision, p.recall) for p in pts] == [(1.0, 0.5), (0.5, 0.5)]


def test_match_frame_one_gt_per_detection():
    gts = [(0, 0, 4, 2, 0)]
    dets = [(0.9, (0, 0, 4, 2, 0)), (0.8, (0.1, 0, 4, 2, 0))]
    assert match_frame(dets, gts, 0.5) == [(0.9, True), (0.8, False)]
    assert average_precision(dets, gts, 0.5) == pytest.approx(1.0)


@given(st.integers(0, 2**32 - 1))
def test_ap_monotone_in_iou_threshold(seed):
    rng = np.random.default_rng(seed)
    frames = []
    for _ in range(3):
        gts = [(rng.uniform(0, 30), rng.uniform(0, 30), 4.0, 2.0, rng.uniform(-3, 3)) for _ in range(rng.integers(0, 4))]
        dets = [(rng.random(), (g[0] + rng.normal(0, 0.5), g[1] + rng.normal(0, 0.5), 4.0, 2.0, g[4])) for g in gts]
        dets += [(rng.random(), (rng.uniform(0, 30), rng.uniform(0, 30), 4.0, 2.0, 0.0)) for _ in range(rng.integers(0, 3))]
        frames.append((dets, gts))
    a30, a50, a70 = (average_precision_frames(frames, t) for t in (0.3, 0.5, 0.7))
    assert a30 >= a50 >= a70


def test_composite_and_class_merge():
    assert composited_ap(1, 1, 0.5) == pytest.approx(0.8)
    assert class_merged_ap([1, 0.5, 0], "latency") == pytest.approx(0.6)
    assert class_merged_ap([1, 0.5, 0], "noise") == pytest.approx(0.85)
    with pytest.raises(ValueError):
        class_merged_ap([1, 1, 1], "other")
    with pytest.raises(ValueError):
        class_merged_ap([1, 1], "latency")


def test_accumulator_summary_keys():
    acc = APAccumulator()
    acc.add([Detection(0, 0, 0, 4, 2, 0, 0.9)], [(0, 0, 0, 4, 2, 0), (2, 10, 10, 0.6, 0.6, 0)])
    s = acc.summary()
    assert s["ap50_c0"] == 1.0 and s["ap50_c1"] == 1.0 and s["ap50_c2"] == 0.0
    assert s["ap50_latency"] == pytest.approx(0.8)
    assert s["composited_noise"] == pytest.approx(0.9)


def test_driving_metrics():
    route = Route([(0, 0), (100, 0)])
    assert route_completion([(0, 0), (50, 1)], route) == pytest.approx(50.0)
    assert route_completion([], route) == 0.0
    assert infraction_penalty({"collision_pedestrian": 1, "collision_vehicle": 2}) == pytest.approx(0.5 * 0.36)
    r = driving_result([(0, 0), (100, 0)], route, {"collision_layout": 1}, offroad_pct=10)
    assert r.route_completion == pytest.approx(90) and r.driving_score == pytest.approx(90 * 0.65)


def test_mean_ci():
    m, lo, hi = mean_ci([1.0, 2.0, 3.0])
    assert m == 2.0 and hi - m == pytest.approx(1.96 / math.sqrt(3))
    assert mean_ci([4.0]) == (4.0, 4.0, 4.0)
    assert all(math.isnan(x) for x in mean_ci([]))
