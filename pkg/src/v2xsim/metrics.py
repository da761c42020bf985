"""Detection AP and closed-loop driving scores."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import box_iou, near_pairs

IOU_THRESHOLDS = (0.3, 0.5, 0.7)
COMPOSITE_WEIGHTS = (0.3, 0.3, 0.4)
CLASS_WEIGHT_PROFILES = {
    "latency": (0.4, 0.4, 0.2),
    "noise": (0.8, 0.1, 0.1),
}
PENALTY_COEFFICIENTS = {
    "collision_pedestrian": 0.50,
    "collision_vehicle": 0.60,
    "collision_layout": 0.65,
}


@dataclass(frozen=True)
class PrCurvePoint:
    score: float
    precision: float
    recall: float


def _box(b):
    return b.box if hasattr(b, "box") else tuple(b)


def _score(d):
    return d.score if hasattr(d, "score") else float(d[0])


def _det_box(d):
    return d.box if hasattr(d, "box") else tuple(d[1])


def match_frame(dets, gts, iou_thresh):
    """TP flags for ``dets`` in descending-score order.

    Each detection goes to its highest-IoU ground truth; it is a hit if that
    IoU reaches the threshold and the ground truth is still free.
    """
    order = sorted(range(len(dets)), key=lambda i: (-_score(dets[i]), i))
    gboxes = [_box(g) for g in gts]
    taken = [False] * len(gboxes)
    near = near_pairs([_det_box(d) for d in dets], gboxes) if dets and gboxes else None
    out = []
    for i in order:
        d = dets[i]
        hit = False
        if gboxes and near[i].any():
            ious = [box_iou(_det_box(d), g) if near[i, j] else 0.0 for j, g in enumerate(gboxes)]
            j = int(np.argmax(ious))
            if ious[j] >= iou_thresh and not taken[j]:
                taken[j] = True
                hit = True
        out.append((_score(d), hit))
    return out


def pr_curve(records, n_gt):
    """Precision/recall after each detection, scores descending (stable)."""
    recs = sorted(records, key=lambda r: -r[0])
    pts, tp = [], 0
    for k, (s, hit) in enumerate(recs, start=1):
        tp += hit
        pts.append(PrCurvePoint(s, tp / k, tp / n_gt if n_gt else 0.0))
    return pts


def ap_from_records(records, n_gt):
    """All-point interpolated AP from (score, hit) records."""
    if n_gt == 0:
        return 1.0 if not records else 0.0
    pts = pr_curve(records, n_gt)
    if not pts:
        return 0.0
    rec = np.array([0.0] + [p.recall for p in pts])
    prec = np.array([0.0] + [p.precision for p in pts])
    # precision envelope, right to left
    env = np.maximum.accumulate(prec[::-1])[::-1]
    return float(np.sum((rec[1:] - rec[:-1]) * env[1:]))


def average_precision(dets, gts, iou_thresh):
    """AP of one class on one frame."""
    return ap_from_records(match_frame(dets, gts, iou_thresh), len(gts))


def average_precision_frames(frames, iou_thresh):
    """AP of one class pooled over frames of (dets, gts)."""
    records, n_gt = [], 0
    for dets, gts in frames:
        records += match_frame(dets, gts, iou_thresh)
        n_gt += len(gts)
    return ap_from_records(records, n_gt)


def composited_ap(ap30, ap50, ap70):
    w30, w50, w70 = COMPOSITE_WEIGHTS
    return w30 * ap30 + w50 * ap50 + w70 * ap70


def class_merged_ap(per_class, profile="latency"):
    try:
        weights = CLASS_WEIGHT_PROFILES[profile]
    except KeyError:
        raise ValueError(f"unknown profile {profile!r}; expected one of {sorted(CLASS_WEIGHT_PROFILES)}") from None
    if len(per_class) != len(weights):
        raise ValueError(f"need {len(weights)} class APs, got {len(per_class)}")
    return float(sum(w * a for w, a in zip(weights, per_class)))


@dataclass
class APAccumulator:
    """Collects per-frame detections and ground truth for every class."""

    num_classes: int = 3
    frames: list = field(default_factory=list)

    def add(self, dets, gts):
        """``dets``: Detection list; ``gts``: (cls, cx, cy, length, width, yaw) tuples."""
        self.frames.append((list(dets), list(gts)))

    def per_class(self, iou_thresh):
        out = []
        for c in range(self.num_classes):
            fr = [([d for d in dets if d.cls == c], [g[1:] for g in gts if g[0] == c])
                  for dets, gts in self.frames]
            out.append(average_precision_frames(fr, iou_thresh))
        return out

    def summary(self):
        res = {}
        for thr in IOU_THRESHOLDS:
            tag = f"ap{int(round(thr * 100))}"
            pc = self.per_class(thr)
            for c, a in enumerate(pc):
                res[f"{tag}_c{c}"] = a
            res[f"{tag}_latency"] = class_merged_ap(pc, "latency")
            res[f"{tag}_noise"] = class_merged_ap(pc, "noise")
        for prof in CLASS_WEIGHT_PROFILES:
            res[f"composited_{prof}"] = composited_ap(res[f"ap30_{prof}"], res[f"ap50_{prof}"], res[f"ap70_{prof}"])
        return res


@dataclass(frozen=True)
class DrivingResult:
    route_completion: float
    infraction_counts: dict
    infraction_penalty: float
    driving_score: float


def route_completion(trajectory, route):
    """Percentage of the route's arc length reached by the trajectory."""
    pts = np.asarray(trajectory, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return 0.0
    s, _ = route.project_many(pts)
    return float(min(100.0, 100.0 * s.max() / route.length))


def infraction_penalty(counts, coefficients=None):
    coefficients = PENALTY_COEFFICIENTS if coefficients is None else coefficients
    p = 1.0
    for kind, n in counts.items():
        if n:
            p *= coefficients.get(kind, 1.0) ** n
    return p


def driving_result(trajectory, route, infractions=None, coefficients=None, offroad_pct=0.0) -> DrivingResult:
    """Route completion x infraction penalty; off-road driving is taken off completion."""
    counts = dict(infractions or {})
    rc = max(0.0, route_completion(trajectory, route) - offroad_pct)
    pen = infraction_penalty(counts, coefficients)
    return DrivingResult(rc, counts, pen, rc * pen)


def driving_result_from(rc, infractions=None, coefficients=None) -> DrivingResult:
    counts = dict(infractions or {})
    pen = infraction_penalty(counts, coefficients)
    return DrivingResult(rc, counts, pen, rc * pen)


def mean_ci(values, z=1.96):
    """Mean with a normal-approximation confidence interval (mean +- z * stderr)."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        return math.nan, math.nan, math.nan
    m = float(v.mean())
    if len(v) < 2:
        return m, m, m
    half = z * float(v.std(ddof=1)) / math.sqrt(len(v))
    return m, m - half, m + half
