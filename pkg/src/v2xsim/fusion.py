"""Receiver-side fusion, decoding, NMS and occupancy rasterisation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dpp import find_peaks
from .geometry import box_iou, near_pairs
from .grids import Grid, ShapeError
from .world import NUM_CLASSES, GridSpec, reg_slice

LOG_EXTENT_CLIP = (-3.0, 4.0)


@dataclass(frozen=True)
class Detection:
    cls: int
    x: float
    y: float
    length: float
    width: float
    yaw: float
    score: float
    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError("detection extent must be positive")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    @property
    def box(self):
        return (self.x, self.y, self.length, self.width, self.yaw)

    def to_dict(self):
        return {"cls": self.cls, "x": self.x, "y": self.y, "length": self.length,
                "width": self.width, "yaw": self.yaw, "score": self.score,
                "vx": self.vx, "vy": self.vy}


def fuse(ego_features: Grid, ego_conf: Grid, messages=(), heads=1) -> Grid:
    """Per-cell attention over the ego and every received message.

    Logits are ego-query dot products scaled by 1/sqrt(D); softmax weights are
    multiplied by each source's confidence and renormalised. A message only
    takes part where its mask is set; cells with zero total weight keep the
    ego feature.
    """
    msgs = sorted(messages, key=lambda m: (m.sender, m.t_send))
    for m in msgs:
        if m.payload.shape != ego_features.shape or m.confidence.height != ego_conf.height \
                or m.confidence.width != ego_conf.width:
            raise ShapeError(f"message from {m.sender} does not match the ego grid")
    if (ego_conf.height, ego_conf.width) != (ego_features.height, ego_features.width):
        raise ShapeError("ego confidence does not match ego features")
    if not msgs:
        return ego_features
    any_mask = np.zeros(ego_conf.plane().shape, dtype=bool)
    for m in msgs:
        any_mask |= m.mask.values
    ys, xs = np.nonzero(any_mask)
    if len(ys) == 0:
        return ego_features
    feats = np.stack([ego_features.values[ys, xs]] + [m.payload.values[ys, xs] for m in msgs])
    confs = np.stack([ego_conf.plane()[ys, xs]] + [m.confidence.plane()[ys, xs] for m in msgs])
    avail = np.stack([np.ones(len(ys), dtype=bool)] + [m.mask.values[ys, xs] for m in msgs])
    fused = kernels.fuse_attention(feats[:, :, None, :], confs[:, :, None], avail[:, :, None], heads)
    out = np.array(ego_features.values)
    out[ys, xs] = fused[:, 0, :]
    return ego_features.with_values(out)


def decode(features: Grid, peak_thresh=0.3, spec: GridSpec | None = None, num_classes=NUM_CLASSES):
    """Per-class heatmap peaks with their regression read back into boxes."""
    if spec is None:
        spec = GridSpec(features.height, features.width, features.resolution)
    v = features.values
    dets = []
    for c in range(num_classes):
        for x, y in find_peaks(v[:, :, c], peak_thresh):
            h = v[y, x, c]
            if not h > 0:
                continue
            r = v[y, x, reg_slice(c, num_classes)] / h
            if not np.all(np.isfinite(r)):
                continue
            cx, cy = spec.cell_center(x, y)
            dets.append(Detection(
                cls=c,
                x=float(cx + r[0]),
                y=float(cy + r[1]),
                length=float(math.exp(np.clip(r[2], *LOG_EXTENT_CLIP))),
                width=float(math.exp(np.clip(r[3], *LOG_EXTENT_CLIP))),
                yaw=float(math.atan2(r[5], r[4])),
                score=float(min(max(h, 0.0), 1.0)),
                vx=float(r[6]),
                vy=float(r[7]),
            ))
    return dets


def nms(dets, iou_thresh=0.5):
    """Greedy per-class suppression; equal scores keep the lower input index."""
    if not 0.0 < iou_thresh <= 1.0:
        raise ValueError(f"iou_thresh must be in (0, 1], got {iou_thresh}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    near = near_pairs([d.box for d in dets], [d.box for d in dets]) if dets else None
    kept, kept_idx = [], []
    for i in order:
        d = dets[i]
        if all(dets[j].cls != d.cls or not near[i, j] or box_iou(dets[j].box, d.box) < iou_thresh
               for j in kept_idx):
            kept.append(d)
            kept_idx.append(i)
    return kept


def sweep_detections(dets, horizon_s, step_s=0.25):
    """Each detection plus copies moved along its velocity up to ``horizon_s``."""
    if horizon_s <= 0:
        return list(dets)
    out = []
    steps = int(math.floor(horizon_s / step_s + 1e-9))
    for d in dets:
        out.append(d)
        for k in range(1, steps + 1):
            t = k * step_s
            out.append(Detection(d.cls, d.x + d.vx * t, d.y + d.vy * t, d.length, d.width, d.yaw,
                                 d.score, d.vx, d.vy))
    return out


def rasterize_occupancy(dets, height, width, resolution, origin=(0.0, 0.0)) -> Grid:
    """Binary map: 1 where a cell centre lies inside any detection box."""
    boxes = np.array([d.box for d in dets], dtype=np.float64).reshape(-1, 5)
    occ = kernels.boxes_to_cells(height, width, resolution, origin[0], origin[1], boxes)
    return Grid(occ.astype(np.float64)[:, :, None], resolution)
