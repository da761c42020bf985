"""Oriented-rectangle geometry in the BEV plane (metres, radians)."""

import math

import numpy as np


def box_corners(cx, cy, length, width, yaw):
    """Counter-clockwise corners of an oriented rectangle."""
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = 0.5 * length, 0.5 * width
    local = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    return [(cx + c * u - s * v, cy + s * u + c * v) for u, v in local]


def polygon_area(poly):
    """Shoelace area (positive for counter-clockwise)."""
    n = len(poly)
    if n < 3:
        return 0.0
    a = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        a += x0 * y1 - x1 * y0
    return 0.5 * a


def _ccw(poly):
    return poly if polygon_area(poly) >= 0 else poly[::-1]


def clip_polygon(subject, clipper):
    """Sutherland-Hodgman clip of ``subject`` by the convex ``clipper``."""
    subject, clipper = _ccw(list(subject)), _ccw(list(clipper))
    out = subject
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        inside = lambda p: (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax) >= 0  # noqa: E731
        src, out = out, []
        for j in range(len(src)):
            p, q = src[j], src[(j + 1) % len(src)]
            pin, qin = inside(p), inside(q)
            if pin:
                out.append(p)
            if pin != qin:
                dx, dy = q[0] - p[0], q[1] - p[1]
                den = (bx - ax) * dy - (by - ay) * dx
                if den != 0.0:
                    t = ((by - ay) * (p[0] - ax) - (bx - ax) * (p[1] - ay)) / den
                    out.append((p[0] + t * dx, p[1] + t * dy))
    return out


def box_iou(a, b):
    """IoU of two oriented boxes given as (cx, cy, length, width, yaw)."""
    # cheap reject on circumscribed circles
    ra = 0.5 * math.hypot(a[2], a[3])
    rb = 0.5 * math.hypot(b[2], b[3])
    if math.hypot(a[0] - b[0], a[1] - b[1]) > ra + rb:
        return 0.0
    pa, pb = box_corners(*a), box_corners(*b)
    area_a, area_b = a[2] * a[3], b[2] * b[3]
    inter = abs(polygon_area(clip_polygon(pa, pb)))
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def near_pairs(boxes_a, boxes_b):
    """Boolean (len(a), len(b)) matrix: circumscribed circles intersect."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 5)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 5)
    ra = 0.5 * np.hypot(a[:, 2], a[:, 3])
    rb = 0.5 * np.hypot(b[:, 2], b[:, 3])
    d = np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])
    return d <= ra[:, None] + rb[None, :]


def boxes_overlap(a, b):
    """Separating-axis test for two oriented boxes (touching counts as overlap)."""
    pa, pb = np.array(box_corners(*a)), np.array(box_corners(*b))
    for poly in (pa, pb):
        for i in range(4):
            e = poly[(i + 1) % 4] - poly[i]
            axis = np.array([-e[1], e[0]])
            prj_a, prj_b = pa @ axis, pb @ axis
            if prj_a.max() < prj_b.min() or prj_b.max() < prj_a.min():
                return False
    return True


def segment_hits_box(p0, p1, box):
    """True if the segment p0-p1 touches the oriented box (Liang-Barsky in box frame)."""
    cx, cy, length, width, yaw = box
    c, s = math.cos(yaw), math.sin(yaw)

    def local(p):
        dx, dy = p[0] - cx, p[1] - cy
        return c * dx + s * dy, -s * dx + c * dy

    x0, y0 = local(p0)
    x1, y1 = local(p1)
    hl, hw = 0.5 * length, 0.5 * width
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 + hl), (dx, hl - x0), (-dy, y0 + hw), (dy, hw - y0)):
        if p == 0.0:
            if q < 0.0:
                return False
            continue
        r = q / p
        if p < 0.0:
            if r > t1:
                return False
            t0 = max(t0, r)
        else:
            if r < t0:
                return False
            t1 = min(t1, r)
    return t0 <= t1


def point_in_box(px, py, box):
    cx, cy, length, width, yaw = box
    c, s = math.cos(yaw), math.sin(yaw)
    dx, dy = px - cx, py - cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return abs(u) <= 0.5 * length and abs(v) <= 0.5 * width


def wrap_angle(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi
