import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from v2xsim.dpp import (ConstantVelocityPredictor, HeatmapHistory, HistoryError, OraclePredictor,
                        StaticPredictor, dpp_pipeline, estimate_flow, extract_flow_oracle, find_blobs,
                        find_peaks, match_blobs, motion_to_gather, peak_errors, predict_iterative,
                        warp_by_motion)
from v2xsim.grids import FlowField, Grid, ShapeError
from v2xsim.world import GridSpec, rasterize

SPEC = GridSpec(40, 40, 0.5)


def scene(objs, spec=SPEC):
    """objs: [(id, cls, x, y, vx, vy)] -> (heat Grid, labels)."""
    rows = [(i, c, x, y, 0.0, 1.5, 1.5, vx, vy) for i, c, x, y, vx, vy in objs]
    heat, _, labels = rasterize(rows, spec)
    return Grid(heat, spec.resolution), labels


def peaks(g):
    out = find_peaks(g.values.max(axis=2))
    assert out, "scene has no peaks"
    return out


def test_find_peaks_plateau_keeps_first():
    p = np.zeros((3, 4))
    p[1, 1] = p[1, 2] = 0.9
    assert find_peaks(p) == [(1, 1)]
    assert find_peaks(np.full((2, 2), 0.1)) == []


def test_blobs_and_matching():
    a, _ = scene([(1, "pedestrian", 5.25, 5.25, 0, 0), (2, "pedestrian", 15.25, 15.25, 0, 0)])
    b, _ = scene([(1, "pedestrian", 6.25, 5.25, 0, 0), (2, "pedestrian", 15.25, 14.25, 0, 0)])
    ba, bb = find_blobs(a), find_blobs(b)
    assert [(x.x, x.y) for x in ba] == [(10, 10), (30, 30)]
    assert match_blobs(ba, bb, 4) == [(0, 0), (1, 1)]
    assert match_blobs(ba, bb, 1) == []


def test_oracle_flow_centroid_shift():
    lt = np.full((5, 6), -1)
    lr = np.full((5, 6), -1)
    lt[1, 1:3] = 4
    lr[2, 3:5] = 4
    lt[4, 0] = 9  # vanishes
    flow, unmatched = extract_flow_oracle(lt, lr)
    assert unmatched == [9]
    np.testing.assert_array_equal(flow.values[1, 1], [2.0, 1.0])
    np.testing.assert_array_equal(flow.values[1, 2], [2.0, 1.0])
    assert not flow.values[4, 0].any() and not flow.values[0].any()
    with pytest.raises(ShapeError):
        extract_flow_oracle(lt, lr[:, :5])


@given(st.integers(0, 2**32 - 1))
def test_estimated_flow_equals_oracle_on_separated_scene(seed):
    rng = np.random.default_rng(seed)
    objs_t, objs_r = [], []
    for k, cx in enumerate((5.25, 14.25)):
        cy = 4.25 + 0.5 * int(rng.integers(0, 24))
        dx, dy = 0.5 * rng.integers(-3, 4, 2)
        objs_t.append((k, "pedestrian", cx, cy, 0, 0))
        objs_r.append((k, "pedestrian", cx + dx, cy + dy, 0, 0))
    ht, lt = scene(objs_t)
    hr, lr = scene(objs_r)
    oracle, unmatched = extract_flow_oracle(lt, lr)
    assert unmatched == []
    np.testing.assert_allclose(estimate_flow(ht, hr, radius=6).values, oracle.values)


def test_motion_to_gather_moves_blob():
    v = np.zeros((1, 6))
    v[0, 1] = 1.0
    motion = np.zeros((1, 6, 2))
    motion[0, 1, 0] = 2.0
    out = warp_by_motion(Grid(v), FlowField(motion)).values[0, :, 0]
    assert out.tolist() == [0, 0, 0, 1, 0, 0]
    g = motion_to_gather(FlowField(motion)).values
    assert g[0, 1, 0] == -2 and g[0, 3, 0] == -2


def test_history_requirements():
    h = HeatmapHistory()
    h.push(0.0, Grid.zeros(2, 2))
    with pytest.raises(ValueError):
        h.push(0.0, Grid.zeros(2, 2))
    with pytest.raises(HistoryError):
        predict_iterative(h, 1, StaticPredictor())
    with pytest.raises(ValueError):
        HeatmapHistory(1)


@given(st.integers(-3, 3), st.integers(-3, 3), st.integers(1, 3))
def test_cv_predictor_extrapolates_on_cell_grid(vx, vy, n):
    x0, y0 = 10.25, 10.25
    res = SPEC.resolution
    frames = [scene([(1, "pedestrian", x0 + k * vx * res, y0 + k * vy * res, 0, 0)])[0] for k in range(2 + n)]
    hist = HeatmapHistory()
    hist.push(0.0, frames[0])
    hist.push(100.0, frames[1])
    pred = predict_iterative(hist, n, ConstantVelocityPredictor())
    assert peaks(pred) == peaks(frames[1 + n])


def test_static_and_oracle_predictors():
    g0, g1, g2 = Grid.zeros(2, 2), Grid(np.ones((2, 2))), Grid(np.full((2, 2), 2.0))
    hist = HeatmapHistory()
    hist.push(0, g0)
    hist.push(1, g1)
    assert predict_iterative(hist, 3, StaticPredictor()) is g1
    assert predict_iterative(hist, 1, OraclePredictor(lambda k: g2)) is g2
    assert predict_iterative(hist, 0, StaticPredictor()) is g1


def test_dpp_pipeline_zero_steps_passes_features_through():
    h0, _ = scene([(1, "pedestrian", 5.25, 5.25, 0, 0)])
    hist = HeatmapHistory()
    hist.push(0, h0)
    hist.push(100, h0)
    feats = Grid(np.ones((40, 40, 4)))
    r = dpp_pipeline(hist, feats, 99.0, 100.0)
    assert r.n_steps == 0 and r.features is feats and r.motion.is_zero()


def test_dpp_pipeline_warps_features_with_heat():
    res = SPEC.resolution
    frames = [scene([(1, "pedestrian", 5.25 + 2 * k * res, 5.25, 0, 0)])[0] for k in range(4)]
    hist = HeatmapHistory()
    hist.push(0, frames[0])
    hist.push(100, frames[1])
    r = dpp_pipeline(hist, frames[1], 250.0, 100.0)
    assert r.n_steps == 2
    assert peaks(r.heatmap) == peaks(frames[3]) == [(16, 10)]
    assert find_peaks(r.features.plane(2)) == peaks(frames[3])
    assert peak_errors(r.heatmap, peaks(frames[3])) == [0.0]
    assert peak_errors(frames[1], peaks(frames[3])) == [4.0]


def test_peak_errors_empty_prediction():
    assert peak_errors(Grid.zeros(3, 3), [(1, 1)]) == [np.inf]
