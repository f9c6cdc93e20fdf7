"""Planar geometry helpers: polylines, arcs, oriented boxes."""

from __future__ import annotations

import numpy as np


def unit(angle: float) -> np.ndarray:
    return np.array([np.cos(angle), np.sin(angle)])


def right_normal(h: np.ndarray) -> np.ndarray:
    """Right-hand normal of a heading vector (x east, y north)."""
    return np.array([h[1], -h[0]])


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def arc_points(center, radius: float, a0: float, a1: float, step: float = 0.25) -> np.ndarray:
    n = max(2, int(np.ceil(abs(a1 - a0) * radius / step)) + 1)
    ang = np.linspace(a0, a1, n)
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])


def bezier_points(p0, p1, p2, p3, n: int = 200) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    return ((1 - t) ** 3) * p0 + 3 * ((1 - t) ** 2) * t * p1 + 3 * (1 - t) * t * t * p2 + t ** 3 * p3


def polyline_length(pts: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def cumulative(pts: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])


def resample(pts: np.ndarray, spacing: float = 2.0, length: float | None = None) -> np.ndarray:
    """Points at arc-length multiples of ``spacing`` along a dense polyline.

    The final point sits at ``length`` (default: full polyline length), so the
    last gap may be shorter when the length is not a multiple of ``spacing``.
    """
    cum = cumulative(pts)
    total = cum[-1] if length is None else float(length)
    n = int(np.floor(total / spacing + 1e-9))
    s = np.arange(n + 1) * spacing
    if total - s[-1] > 1e-6:
        s = np.append(s, total)
    return np.column_stack([np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1])])


def min_turn_radius(pts: np.ndarray, window: float = 2.0) -> float:
    """Smallest radius of the circle through points ``window`` metres apart."""
    p = resample(pts, window)
    if len(p) < 3:
        return np.inf
    a, b, c = p[:-2], p[1:-1], p[2:]
    ab = np.linalg.norm(b - a, axis=1)
    bc = np.linalg.norm(c - b, axis=1)
    ca = np.linalg.norm(a - c, axis=1)
    cross = np.abs((b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0])
    with np.errstate(divide="ignore"):
        r = ab * bc * ca / (2 * cross)
    return float(np.min(r))


def box_corners(x, y, theta, length, width) -> np.ndarray:
    """Corners of oriented boxes; scalar or vector inputs, output (..., 4, 2)."""
    x, y, theta = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(theta, float))
    length, width = np.broadcast_to(length, x.shape), np.broadcast_to(width, x.shape)
    c, s = np.cos(theta), np.sin(theta)
    hl, hw = length / 2, width / 2
    local = np.array([[1, 1], [1, -1], [-1, -1], [-1, 1]], float)
    dx = local[:, 0] * hl[..., None]
    dy = local[:, 1] * hw[..., None]
    cx = x[..., None] + dx * c[..., None] - dy * s[..., None]
    cy = y[..., None] + dx * s[..., None] + dy * c[..., None]
    return np.stack([cx, cy], axis=-1)


def _axes(theta):
    return np.array([[np.cos(theta), np.sin(theta)], [-np.sin(theta), np.cos(theta)]])


def obb_overlap(a, b):
    """Separating-axis test for two oriented boxes ``(x, y, theta, length, width)``.

    Returns ``None`` when disjoint, else the unit contact normal (the axis of
    least penetration, oriented from ``a`` towards ``b``).
    """
    ca = box_corners(*a)
    cb = box_corners(*b)
    best_depth, best_axis = np.inf, None
    for axis in np.vstack([_axes(a[2]), _axes(b[2])]):
        pa, pb = ca @ axis, cb @ axis
        depth = min(pa.max(), pb.max()) - max(pa.min(), pb.min())
        if depth < 0:
            return None
        if depth < best_depth:
            best_depth, best_axis = depth, axis
    d = np.array([b[0] - a[0], b[1] - a[1]])
    if d @ best_axis < 0:
        best_axis = -best_axis
    return best_axis


def obb_intersects_aabbs(box, rects: np.ndarray) -> np.ndarray:
    """Boolean mask of axis-aligned rectangles ``(xmin, ymin, xmax, ymax)`` hit by an oriented box."""
    if len(rects) == 0:
        return np.zeros(0, bool)
    corners = box_corners(*box)
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    hit = (rects[:, 0] <= hi[0]) & (rects[:, 2] >= lo[0]) & (rects[:, 1] <= hi[1]) & (rects[:, 3] >= lo[1])
    if not hit.any():
        return hit
    idx = np.flatnonzero(hit)
    r = rects[idx]
    rc = np.stack([r[:, [0, 1]], r[:, [2, 1]], r[:, [2, 3]], r[:, [0, 3]]], axis=1)
    for axis in _axes(box[2]):
        pb = corners @ axis
        pr = rc @ axis
        sep = (pr.max(axis=1) < pb.min()) | (pr.min(axis=1) > pb.max())
        hit[idx[sep]] = False
    return hit


def project_onto_polyline(pts: np.ndarray, cum: np.ndarray, p, lo: int = 0, hi: int | None = None):
    """Closest point on segments ``lo..hi`` of a polyline.

    Returns ``(s, signed_lateral, segment_index, distance)``; lateral is positive
    to the right of the direction of travel.
    """
    hi = len(pts) - 1 if hi is None else min(hi, len(pts) - 1)
    lo = max(0, min(lo, hi - 1))
    a = pts[lo:hi]
    b = pts[lo + 1:hi + 1]
    ab = b - a
    seg_len2 = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-12)
    ap = np.asarray(p, float) - a
    t = np.clip(np.einsum("ij,ij->i", ap, ab) / seg_len2, 0.0, 1.0)
    closest = a + ab * t[:, None]
    dist2 = np.einsum("ij,ij->i", np.asarray(p) - closest, np.asarray(p) - closest)
    k = int(np.argmin(dist2))
    seg = lo + k
    seg_len = np.sqrt(seg_len2[k])
    s = cum[seg] + t[k] * seg_len
    h = ab[k] / seg_len
    lateral = float(ap[k] @ np.array([h[1], -h[0]]))
    return float(s), lateral, seg, float(np.sqrt(dist2[k]))
