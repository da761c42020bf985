"""Sender-side heatmap forecasting and motion-flow feature warping.

Two flow conventions meet here:

* motion flow (``extract_flow_oracle``, ``estimate_flow``): defined on an
  object's cells at time t, holding where those cells go, ``(x', y') - (x, y)``;
* gather flow (``affine_warp``): defined on destination cells, holding where
  to read from.

``motion_to_gather`` converts the first into the second. For a moving object
with support S and integer motion d, every cell of S and of S + d reads from
``cell - d``; cells of S that the object vacates therefore read from outside
S, which is background.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .channel import discretize_latency
from .grids import FlowField, Grid, ShapeError, affine_warp, round_flow
from .pragcomm import confidence_map

PEAK_THRESH = 0.3
SUPPORT_THRESH = 0.05
MAX_CELLS_PER_FRAME = 8


class HistoryError(ValueError):
    """Not enough history frames for prediction."""


class HeatmapHistory:
    """Ring buffer of (timestamp, heatmap) pairs, oldest first."""

    def __init__(self, capacity=2):
        if capacity < 2:
            raise ValueError("history capacity must be >= 2")
        self._buf = deque(maxlen=capacity)

    def push(self, t, grid: Grid):
        if self._buf and t <= self._buf[-1][0]:
            raise ValueError(f"timestamps must increase: {t} after {self._buf[-1][0]}")
        self._buf.append((t, grid))

    def __len__(self):
        return len(self._buf)

    @property
    def frames(self):
        return [g for _, g in self._buf]

    @property
    def times(self):
        return [t for t, _ in self._buf]

    @property
    def latest(self):
        return self._buf[-1][1]


# ---------------------------------------------------------------------------
# blobs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Blob:
    x: int
    y: int
    value: float
    cells: np.ndarray  # (N, 2) rows of (y, x)


def _plane(g):
    return g.values.max(axis=2) if isinstance(g, Grid) else np.asarray(g, dtype=np.float64)


def find_peaks(plane, thresh=PEAK_THRESH):
    """Local maxima over the 8-neighbourhood, raster order; plateaus keep their first cell."""
    h, w = plane.shape
    p = np.pad(plane, 1, constant_values=-np.inf)
    c = p[1:-1, 1:-1]
    ok = c >= thresh
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nb = p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
            earlier = dy < 0 or (dy == 0 and dx < 0)
            ok &= (c > nb) if earlier else (c >= nb)
    ys, xs = np.nonzero(ok)
    return list(zip(xs.tolist(), ys.tolist()))


def find_blobs(g, peak_thresh=PEAK_THRESH, support_thresh=SUPPORT_THRESH):
    """Peaks of the channel-max plane; each above-threshold cell joins its nearest peak."""
    plane = _plane(g)
    peaks = find_peaks(plane, peak_thresh)
    if not peaks:
        return []
    ys, xs = np.nonzero(plane >= support_thresh)
    pk = np.array(peaks, dtype=np.float64)
    d2 = (xs[:, None] - pk[None, :, 0]) ** 2 + (ys[:, None] - pk[None, :, 1]) ** 2
    owner = np.argmin(d2, axis=1)
    cells = np.stack([ys, xs], axis=1)
    return [Blob(x, y, float(plane[y, x]), cells[owner == i]) for i, (x, y) in enumerate(peaks)]


def match_blobs(a, b, radius):
    """Greedy nearest-peak matching; returns (i, j) pairs, ties broken by lowest index."""
    cand = []
    r2 = radius * radius
    for i, ba in enumerate(a):
        for j, bb in enumerate(b):
            d2 = (ba.x - bb.x) ** 2 + (ba.y - bb.y) ** 2
            if d2 <= r2:
                cand.append((d2, i, j))
    cand.sort()
    used_a, used_b, pairs = set(), set(), []
    for _, i, j in cand:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    return sorted(pairs)


# ---------------------------------------------------------------------------
# flows
# ---------------------------------------------------------------------------

def extract_flow_oracle(labels_t, labels_tr):
    """Motion flow from instance-labelled frames (label -1 = empty).

    Every cell of instance k at time t receives k's centroid displacement
    between the two frames. Returns (flow, unmatched instance ids); unmatched
    instances keep zero flow.
    """
    labels_t = np.asarray(labels_t)
    labels_tr = np.asarray(labels_tr)
    if labels_t.shape != labels_tr.shape:
        raise ShapeError(f"label grids differ: {labels_t.shape} vs {labels_tr.shape}")
    h, w = labels_t.shape
    flow = np.zeros((h, w, 2))
    unmatched = []
    for k in np.unique(labels_t):
        if k < 0:
            continue
        ys0, xs0 = np.nonzero(labels_t == k)
        ys1, xs1 = np.nonzero(labels_tr == k)
        if len(xs1) == 0:
            unmatched.append(int(k))
            continue
        flow[ys0, xs0, 0] = xs1.mean() - xs0.mean()
        flow[ys0, xs0, 1] = ys1.mean() - ys0.mean()
    return FlowField(flow), unmatched


def estimate_flow(h_t, h_pred, radius=2 * MAX_CELLS_PER_FRAME, peak_thresh=PEAK_THRESH,
                  support_thresh=SUPPORT_THRESH):
    """Label-free motion flow between two heatmaps by blob matching."""
    pa, pb = _plane(h_t), _plane(h_pred)
    if pa.shape != pb.shape:
        raise ShapeError(f"frames differ: {pa.shape} vs {pb.shape}")
    flow = np.zeros(pa.shape + (2,))
    a = find_blobs(pa, peak_thresh, support_thresh)
    b = find_blobs(pb, peak_thresh, support_thresh)
    for i, j in match_blobs(a, b, radius):
        cells = a[i].cells
        flow[cells[:, 0], cells[:, 1], 0] = b[j].x - a[i].x
        flow[cells[:, 0], cells[:, 1], 1] = b[j].y - a[i].y
    return FlowField(flow)


def motion_to_gather(motion: FlowField) -> FlowField:
    """Gather flow that moves each object's cells along its motion."""
    h, w = motion.height, motion.width
    dx, dy = round_flow(motion)
    ys, xs = np.nonzero((dx != 0) | (dy != 0))
    g = np.zeros((h, w, 2))
    g[ys, xs, 0] = -dx[ys, xs]
    g[ys, xs, 1] = -dy[ys, xs]
    tx, ty = xs + dx[ys, xs], ys + dy[ys, xs]
    ok = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    g[ty[ok], tx[ok], 0] = -dx[ys[ok], xs[ok]]
    g[ty[ok], tx[ok], 1] = -dy[ys[ok], xs[ok]]
    return FlowField(g)


def warp_by_motion(f: Grid, motion: FlowField) -> Grid:
    return affine_warp(f, motion_to_gather(motion))


# ---------------------------------------------------------------------------
# predictors
# ---------------------------------------------------------------------------

class StaticPredictor:
    name = "static"

    def __call__(self, prev: Grid, curr: Grid) -> Grid:
        return curr


class ConstantVelocityPredictor:
    """Extrapolate each tracked blob by its last inter-frame displacement."""

    name = "cv"

    def __init__(self, radius=2 * MAX_CELLS_PER_FRAME, peak_thresh=PEAK_THRESH,
                 support_thresh=SUPPORT_THRESH):
        self.radius = radius
        self.peak_thresh = peak_thresh
        self.support_thresh = support_thresh

    def __call__(self, prev: Grid, curr: Grid) -> Grid:
        if prev.shape != curr.shape:
            raise ShapeError(f"frames differ: {prev.shape} vs {curr.shape}")
        a = find_blobs(prev, self.peak_thresh, self.support_thresh)
        b = find_blobs(curr, self.peak_thresh, self.support_thresh)
        # last displacement, anchored on curr's cells
        fwd = np.zeros(curr.values.shape[:2] + (2,))
        for i, j in match_blobs(a, b, self.radius):
            cells = b[j].cells
            fwd[cells[:, 0], cells[:, 1], 0] = b[j].x - a[i].x
            fwd[cells[:, 0], cells[:, 1], 1] = b[j].y - a[i].y
        if not fwd.any():
            return curr
        return warp_by_motion(curr, FlowField(fwd))


def cv_predict(frame_prev: Grid, frame_curr: Grid, radius=2 * MAX_CELLS_PER_FRAME) -> Grid:
    return ConstantVelocityPredictor(radius)(frame_prev, frame_curr)


class OraclePredictor:
    """Ground-truth future frames from a callable ``step -> Grid``.

    ``source(k)`` returns the true heatmap k frames after the history's latest.
    """

    name = "oracle"

    def __init__(self, source):
        self.source = source
        self._k = 0

    def __call__(self, prev: Grid, curr: Grid) -> Grid:
        self._k += 1
        return self.source(self._k)


PREDICTORS = {"cv": ConstantVelocityPredictor, "static": StaticPredictor, "oracle": OraclePredictor}


def predict_iterative(history: HeatmapHistory, n_steps, predictor) -> Grid:
    """Apply ``predictor`` n times, feeding each output back as the newest frame."""
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    if len(history) < 2:
        raise HistoryError(f"need >= 2 history frames, have {len(history)}")
    prev, curr = history.frames[-2], history.frames[-1]
    for _ in range(n_steps):
        prev, curr = curr, predictor(prev, curr)
    return curr


@dataclass(frozen=True, eq=False)
class DppResult:
    features: Grid
    confidence: Grid
    heatmap: Grid
    n_steps: int
    motion: FlowField


def dpp_pipeline(history: HeatmapHistory, features: Grid, tau_est_ms, delta_t_ms, predictor=None,
                 conf_sigma=1.0, max_cells_per_frame=MAX_CELLS_PER_FRAME) -> DppResult:
    """Forecast the sender's heatmap ``n = floor(tau/dt)`` frames ahead and warp its features to match."""
    n = discretize_latency(tau_est_ms, delta_t_ms)
    h_t = history.latest
    if n == 0:
        return DppResult(features, confidence_map(h_t, conf_sigma), h_t, 0,
                         FlowField.zeros(h_t.height, h_t.width))
    predictor = predictor or ConstantVelocityPredictor(2 * max_cells_per_frame)
    h_pred = predict_iterative(history, n, predictor)
    motion = estimate_flow(h_t, h_pred, radius=2 * max_cells_per_frame * n)
    warped = warp_by_motion(features, motion) if not motion.is_zero() else features
    return DppResult(warped, confidence_map(h_pred, conf_sigma), h_pred, n, motion)


def peak_errors(pred: Grid, true_cells, peak_thresh=PEAK_THRESH):
    """Chebyshev distance (cells) from each true object cell to the nearest predicted peak."""
    peaks = np.array(find_peaks(_plane(pred), peak_thresh), dtype=np.float64).reshape(-1, 2)
    out = []
    for x, y in true_cells:
        if len(peaks) == 0:
            out.append(np.inf)
            continue
        out.append(float(np.abs(peaks - (x, y)).max(axis=1).min()))
    return out
