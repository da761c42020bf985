"""Per-cell inner loops.

Every public kernel dispatches on :func:`v2xsim._accel.backend`. The numba
versions are explicit loops; the numpy versions are vectorised and serve as
the reference the numba paths are tested against.
"""

import math

import numpy as np
from scipy import ndimage

from ._accel import backend, njit


def gaussian_kernel1d(sigma):
    """Normalised 1-D Gaussian taps, truncated at 3 sigma."""
    radius = max(1, int(3.0 * sigma + 0.5))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


# ---------------------------------------------------------------------------
# separable filter (reflect padding: d c b a | a b c d | d c b a)
# ---------------------------------------------------------------------------

@njit
def _reflect(i, n):
    period = 2 * n
    i = i % period
    if i < 0:
        i += period
    if i >= n:
        i = period - 1 - i
    return i


@njit
def _separable_nb(plane, kernel):
    h, w = plane.shape
    r = kernel.shape[0] // 2
    ry = np.empty(h + 2 * r, dtype=np.int64)
    for i in range(h + 2 * r):
        ry[i] = _reflect(i - r, h)
    rx = np.empty(w + 2 * r, dtype=np.int64)
    for i in range(w + 2 * r):
        rx[i] = _reflect(i - r, w)
    # vertical pass: whole rows at a time so the inner loop is contiguous
    tmp = np.zeros((h, w))
    for y in range(h):
        for t in range(2 * r + 1):
            k = kernel[t]
            src = ry[y + t]
            for x in range(w):
                tmp[y, x] += k * plane[src, x]
    out = np.empty((h, w))
    row = np.empty(w + 2 * r)
    for y in range(h):
        for i in range(w + 2 * r):
            row[i] = tmp[y, rx[i]]
        for x in range(w):
            acc = 0.0
            for t in range(2 * r + 1):
                acc += kernel[t] * row[x + t]
            out[y, x] = acc
    return out


def _separable_np(plane, kernel):
    tmp = ndimage.correlate1d(plane, kernel, axis=0, mode="reflect")
    return ndimage.correlate1d(tmp, kernel, axis=1, mode="reflect")


def separable_filter(plane, kernel):
    plane = np.ascontiguousarray(plane, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    if backend() == "numba":
        return _separable_nb(plane, kernel)
    return _separable_np(plane, kernel)


# ---------------------------------------------------------------------------
# warp: out[y, x] = in[y + dy[y, x], x + dx[y, x]], zero outside
# ---------------------------------------------------------------------------

@njit
def _gather_nb(values, dx, dy):
    h, w, c = values.shape
    out = np.zeros((h, w, c))
    for y in range(h):
        for x in range(w):
            sx = x + dx[y, x]
            sy = y + dy[y, x]
            if 0 <= sx < w and 0 <= sy < h:
                for k in range(c):
                    out[y, x, k] = values[sy, sx, k]
    return out


def _gather_np(values, dx, dy):
    h, w, _ = values.shape
    ys, xs = np.indices((h, w))
    sx = xs + dx
    sy = ys + dy
    ok = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    out = np.zeros_like(values)
    out[ok] = values[sy[ok], sx[ok]]
    return out


def warp_gather(values, dx, dy):
    """Integer gather. ``dx``/``dy`` are int64 arrays of shape (H, W)."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    dx = np.ascontiguousarray(dx, dtype=np.int64)
    dy = np.ascontiguousarray(dy, dtype=np.int64)
    if backend() == "numba":
        return _gather_nb(values, dx, dy)
    return _gather_np(values, dx, dy)


@njit
def _bilinear_nb(values, dx, dy):
    h, w, c = values.shape
    out = np.zeros((h, w, c))
    for y in range(h):
        for x in range(w):
            sx = x + dx[y, x]
            sy = y + dy[y, x]
            x0 = int(math.floor(sx))
            y0 = int(math.floor(sy))
            fx = sx - x0
            fy = sy - y0
            for oy in range(2):
                yy = y0 + oy
                if yy < 0 or yy >= h:
                    continue
                wy = fy if oy == 1 else 1.0 - fy
                for ox in range(2):
                    xx = x0 + ox
                    if xx < 0 or xx >= w:
                        continue
                    wgt = wy * (fx if ox == 1 else 1.0 - fx)
                    if wgt == 0.0:
                        continue
                    for k in range(c):
                        out[y, x, k] += wgt * values[yy, xx, k]
    return out


def _bilinear_np(values, dx, dy):
    h, w, c = values.shape
    ys, xs = np.indices((h, w))
    sx = xs + dx
    sy = ys + dy
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros_like(values)
    for oy in (0, 1):
        wy = fy if oy else 1.0 - fy
        for ox in (0, 1):
            wgt = wy * (fx if ox else 1.0 - fx)
            xx = x0 + ox
            yy = y0 + oy
            ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h) & (wgt != 0.0)
            out[ok] += wgt[ok, None] * values[yy[ok], xx[ok]]
    return out


def warp_bilinear(values, dx, dy):
    values = np.ascontiguousarray(values, dtype=np.float64)
    dx = np.ascontiguousarray(dx, dtype=np.float64)
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    if backend() == "numba":
        return _bilinear_nb(values, dx, dy)
    return _bilinear_np(values, dx, dy)


# ---------------------------------------------------------------------------
# per-location scaled dot-product attention, confidence gated
# ---------------------------------------------------------------------------

@njit
def _fuse_nb(feats, confs, avail, heads):
    s_count, h, w, d = feats.shape
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)
    out = np.empty((h, w, d))
    logits = np.empty(s_count)
    wts = np.empty(s_count)
    for y in range(h):
        for x in range(w):
            for hd in range(heads):
                lo = hd * dh
                m = -np.inf
                for s in range(s_count):
                    if avail[s, y, x]:
                        acc = 0.0
                        for k in range(lo, lo + dh):
                            acc += feats[0, y, x, k] * feats[s, y, x, k]
                        logits[s] = acc * scale
                        if logits[s] > m:
                            m = logits[s]
                z = 0.0
                for s in range(s_count):
                    if avail[s, y, x]:
                        wts[s] = math.exp(logits[s] - m)
                        z += wts[s]
                    else:
                        wts[s] = 0.0
                tot = 0.0
                for s in range(s_count):
                    wts[s] = wts[s] / z * confs[s, y, x]
                    tot += wts[s]
                if tot <= 0.0:
                    for k in range(lo, lo + dh):
                        out[y, x, k] = feats[0, y, x, k]
                    continue
                for k in range(lo, lo + dh):
                    acc = 0.0
                    for s in range(s_count):
                        if wts[s] != 0.0:
                            acc += wts[s] * feats[s, y, x, k]
                    out[y, x, k] = acc / tot
    return out


def _fuse_np(feats, confs, avail, heads):
    s_count, h, w, d = feats.shape
    dh = d // heads
    k = feats.reshape(s_count, h, w, heads, dh)
    logits = np.einsum("hwkd,shwkd->shwk", k[0], k) / math.sqrt(dh)
    logits = np.where(avail[..., None], logits, -np.inf)
    logits -= logits.max(axis=0, keepdims=True)
    e = np.where(avail[..., None], np.exp(logits), 0.0)
    wts = e / e.sum(axis=0, keepdims=True) * confs[..., None]
    tot = wts.sum(axis=0)
    safe = np.where(tot > 0.0, tot, 1.0)
    fused = np.einsum("shwk,shwkd->hwkd", wts, k) / safe[..., None]
    fused = np.where((tot > 0.0)[..., None], fused, k[0])
    return fused.reshape(h, w, d)


def fuse_attention(feats, confs, avail, heads=1):
    """Fuse ``S`` sources; source 0 is the ego and supplies the query.

    feats (S, H, W, D), confs (S, H, W), avail (S, H, W) bool.
    """
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    confs = np.ascontiguousarray(confs, dtype=np.float64)
    avail = np.ascontiguousarray(avail, dtype=np.bool_)
    if feats.shape[-1] % heads:
        raise ValueError(f"feature depth {feats.shape[-1]} not divisible by {heads} heads")
    if backend() == "numba":
        return _fuse_nb(feats, confs, avail, heads)
    return _fuse_np(feats, confs, avail, heads)


# ---------------------------------------------------------------------------
# oriented boxes -> occupied cells (cell centre inside the rectangle)
# ---------------------------------------------------------------------------

@njit
def _boxes_nb(h, w, res, ox, oy, boxes):
    out = np.zeros((h, w), dtype=np.uint8)
    for b in range(boxes.shape[0]):
        cx, cy, ln, wd, yaw = boxes[b, 0], boxes[b, 1], boxes[b, 2], boxes[b, 3], boxes[b, 4]
        c = math.cos(yaw)
        s = math.sin(yaw)
        hl = 0.5 * ln
        hw = 0.5 * wd
        reach = math.sqrt(hl * hl + hw * hw)
        x_lo = max(0, int(math.floor((cx - reach - ox) / res)))
        x_hi = min(w - 1, int(math.floor((cx + reach - ox) / res)))
        y_lo = max(0, int(math.floor((cy - reach - oy) / res)))
        y_hi = min(h - 1, int(math.floor((cy + reach - oy) / res)))
        for y in range(y_lo, y_hi + 1):
            py = oy + (y + 0.5) * res - cy
            for x in range(x_lo, x_hi + 1):
                px = ox + (x + 0.5) * res - cx
                u = c * px + s * py
                v = -s * px + c * py
                if -hl <= u <= hl and -hw <= v <= hw:
                    out[y, x] = 1
    return out


def _boxes_np(h, w, res, ox, oy, boxes):
    out = np.zeros((h, w), dtype=np.uint8)
    if len(boxes) == 0:
        return out
    px = ox + (np.arange(w) + 0.5) * res
    py = oy + (np.arange(h) + 0.5) * res
    gx, gy = np.meshgrid(px, py)
    for cx, cy, ln, wd, yaw in boxes:
        c, s = math.cos(yaw), math.sin(yaw)
        dx, dy = gx - cx, gy - cy
        u = c * dx + s * dy
        v = -s * dx + c * dy
        out[(np.abs(u) <= 0.5 * ln) & (np.abs(v) <= 0.5 * wd)] = 1
    return out


def boxes_to_cells(h, w, res, ox, oy, boxes):
    """Rasterise ``boxes`` (N, 5: cx, cy, length, width, yaw) into a uint8 map."""
    boxes = np.ascontiguousarray(np.asarray(boxes, dtype=np.float64).reshape(-1, 5))
    if backend() == "numba":
        return _boxes_nb(int(h), int(w), float(res), float(ox), float(oy), boxes)
    return _boxes_np(int(h), int(w), float(res), float(ox), float(oy), boxes)
