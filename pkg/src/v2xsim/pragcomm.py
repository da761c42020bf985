"""Confidence/request maps, message packing and communication volume."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .grids import Grid, Mask, ShapeError, apply_mask, channel_max, gaussian_filter

BITS_PER_VALUE = 32
_MSG_HEADER = struct.Struct("<IIdQ")


@dataclass(frozen=True, eq=False)
class Message:
    sender: int
    receiver: int
    payload: Grid
    mask: Mask
    confidence: Grid
    t_send: float
    t_r: float | None = None
    lost: bool = False
    n_steps: int = 0

    def __post_init__(self):
        if (self.payload.height, self.payload.width) != (self.mask.height, self.mask.width):
            raise ShapeError("payload and mask dims differ")

    @property
    def size_bits(self):
        return self.mask.cardinality * self.payload.channels * BITS_PER_VALUE

    def to_bytes(self):
        """Fixed header (sender, receiver, t_send, size_bits), payload grid, packed mask, confidence grid."""
        head = _MSG_HEADER.pack(self.sender, self.receiver, self.t_send, self.size_bits)
        return head + self.payload.to_bytes() + self.mask.to_bits() + self.confidence.to_bytes()

    @classmethod
    def from_bytes(cls, buf):
        sender, receiver, t_send, size_bits = _MSG_HEADER.unpack_from(buf, 0)
        payload, off = Grid._read(buf, _MSG_HEADER.size)
        n_mask = (payload.height * payload.width + 7) // 8
        mask = Mask.from_bits(buf[off:off + n_mask], payload.height, payload.width)
        conf, _ = Grid._read(buf, off + n_mask)
        msg = cls(sender, receiver, payload, mask, conf, t_send)
        if msg.size_bits != size_bits:
            raise ValueError(f"size field {size_bits} disagrees with mask ({msg.size_bits})")
        return msg


@dataclass(frozen=True, eq=False)
class BSM:
    sender: int
    confidence: Grid
    request: Grid
    pose: tuple
    timestamp: float


def confidence_map(heatmap: Grid, sigma_cells: float = 1.0) -> Grid:
    """Channel max, Gaussian blur, clip to [0, 1]."""
    c = gaussian_filter(channel_max(heatmap), sigma_cells)
    return c.with_values(np.clip(c.values, 0.0, 1.0))


def baseline_request_map(conf: Grid) -> Grid:
    return conf.with_values(1.0 - conf.values)


def nearest_waypoint(plan, ego_xy=None):
    pts = np.asarray(plan, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("plan is empty")
    if ego_xy is None:
        return pts[0]
    d2 = ((pts - np.asarray(ego_xy, dtype=np.float64)) ** 2).sum(axis=1)
    return pts[int(np.argmin(d2))]


def aoim_request_map(prev_plan, height, width, resolution, sigma_f_m=15.0, normalize=True,
                     ego_xy=None, origin=(0.0, 0.0)) -> Grid:
    """Gaussian request map around the previous plan's waypoint nearest the ego.

    Unnormalised, the peak is 1/(sigma_F sqrt(2 pi)); with ``normalize`` the
    peak is rescaled to 1.
    """
    wx, wy = nearest_waypoint(prev_plan, ego_xy)
    xs = origin[0] + (np.arange(width) + 0.5) * resolution
    ys = origin[1] + (np.arange(height) + 0.5) * resolution
    d2 = (xs[None, :] - wx) ** 2 + (ys[:, None] - wy) ** 2
    r = np.exp(-d2 / (2.0 * sigma_f_m ** 2))
    if not normalize:
        r = r / (sigma_f_m * math.sqrt(2.0 * math.pi))
    return Grid(r[:, :, None], resolution)


def _check(*grids):
    h, w = grids[0].height, grids[0].width
    for g in grids[1:]:
        if (g.height, g.width) != (h, w):
            raise ShapeError(f"spatial dims differ: {(h, w)} vs {(g.height, g.width)}")


def pack_baseline(features: Grid, conf_sender: Grid, req_receiver: Grid, p_thre,
                  sender=0, receiver=0, t_send=0.0) -> Message:
    """Send cells where request x confidence reaches ``p_thre``."""
    _check(features, conf_sender, req_receiver)
    score = req_receiver.plane() * conf_sender.plane()
    mask = Mask(score >= p_thre)
    return Message(sender, receiver, apply_mask(features, mask), mask, conf_sender, t_send)


def alert_signal(predicted_conf: Grid, current_conf: Grid, n_steps):
    return np.abs(predicted_conf.plane() - current_conf.plane()) / max(int(n_steps), 1)


def pack_apc(warped_features: Grid, predicted_conf: Grid, current_conf: Grid, req_receiver: Grid,
             n_steps, p_thre, sender=0, receiver=0, t_send=0.0) -> Message:
    """Send cells where max(request x predicted confidence, alert) reaches ``p_thre``.

    The alert term is the confidence change spread over the prediction steps;
    zero steps divide by one.
    """
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    _check(warped_features, predicted_conf, current_conf, req_receiver)
    score = np.maximum(req_receiver.plane() * predicted_conf.plane(),
                       alert_signal(predicted_conf, current_conf, n_steps))
    mask = Mask(score >= p_thre)
    return Message(sender, receiver, apply_mask(warped_features, mask), mask, predicted_conf,
                   t_send, n_steps=int(n_steps))


def comm_volume(mask: Mask, height, width, depth, bytes_mode=False):
    """log2 of the transmitted volume; 0 for an empty mask.

    Default: log2(H * W * D * |P| * 32 / 8). ``bytes_mode``: log2(|P| * D * 4).
    """
    card = mask.cardinality
    if card == 0:
        return 0.0
    if bytes_mode:
        return math.log2(card * depth * BITS_PER_VALUE / 8)
    return math.log2(height * width * depth * card * BITS_PER_VALUE / 8)
