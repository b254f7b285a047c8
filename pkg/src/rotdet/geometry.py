"""Exact geometry of five-parameter rotated boxes.

Angles are radians, counter-clockwise in a y-up frame. ``w`` is the edge
running along ``theta``; the canonical range of ``theta`` is ``[0, pi/2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

HALF_PI = 0.5 * math.pi

EPS_GEOM = 1e-9
EPS_AREA = 1e-12


class InvalidBoxError(ValueError):
    """Raised for non-finite or non-positive box parameters."""


@dataclass(frozen=True)
class RotatedBox:
    cx: float
    cy: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidBoxError(f"non-finite box parameters: {vals}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidBoxError(f"box extents must be positive, got w={self.w}, h={self.h}")

    @classmethod
    def from_array(cls, arr: Sequence[float]) -> "RotatedBox":
        cx, cy, w, h, theta = (float(v) for v in arr)
        return cls(cx, cy, w, h, theta)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h, self.theta], dtype=np.float64)

    @property
    def area(self) -> float:
        return self.w * self.h


def canonicalize(box: RotatedBox) -> RotatedBox:
    """Fold ``theta`` into ``[0, pi/2)``, swapping ``w``/``h`` for odd quarter turns."""
    k = math.floor(box.theta / HALF_PI)
    t = box.theta - k * HALF_PI
    # guard against rounding pushing t onto either end of the range
    if t >= HALF_PI:
        t -= HALF_PI
        k += 1
    elif t < 0.0:
        t += HALF_PI
        k -= 1
    if t >= HALF_PI:
        t = 0.0
        k += 1
    w, h = (box.h, box.w) if k % 2 else (box.w, box.h)
    return RotatedBox(box.cx, box.cy, w, h, t)


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rbox_to_corners(box: RotatedBox) -> np.ndarray:
    """Return the 4 corners of ``box`` as a ``(4, 2)`` array in CCW order."""
    hw, hh = 0.5 * box.w, 0.5 * box.h
    local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
    return local @ rotation_matrix(box.theta).T + np.array([box.cx, box.cy])


def signed_area(poly: np.ndarray) -> float:
    """Shoelace area; positive for CCW winding."""
    if len(poly) < 3:
        return 0.0
    return _shoelace(_as_tuples(poly))


def polygon_area(poly: np.ndarray) -> float:
    return abs(signed_area(poly))


def _is_convex_ccw(poly: np.ndarray) -> bool:
    edges = np.roll(poly, -1, axis=0) - poly
    nxt = np.roll(edges, -1, axis=0)
    cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
    return bool(np.all(cross >= -EPS_GEOM * max(1.0, float(np.abs(poly).max()))))


@dataclass(frozen=True, eq=False)
class Quad:
    """Convex quadrilateral with CCW vertex order.

    Construct through :meth:`from_points`, which fixes the winding and
    reorders vertices around the centroid when the given order is not
    convex.
    """

    vertices: np.ndarray

    @classmethod
    def from_points(cls, points) -> "Quad":
        pts = np.asarray(points, dtype=np.float64).reshape(4, 2)
        if not np.all(np.isfinite(pts)):
            raise InvalidBoxError("quad has non-finite coordinates")
        if signed_area(pts) < 0:
            pts = pts[::-1]
        if not _is_convex_ccw(pts):
            center = pts.mean(axis=0)
            order = np.argsort(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))
            pts = pts[order]
            if not _is_convex_ccw(pts):
                raise InvalidBoxError(f"quad is not convex: {pts.tolist()}")
        return cls(pts)

    def __eq__(self, other):
        return isinstance(other, Quad) and np.array_equal(self.vertices, other.vertices)

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    def flat(self) -> list[float]:
        return self.vertices.reshape(-1).tolist()


def rbox_to_quad(box: RotatedBox) -> Quad:
    return Quad(rbox_to_corners(box))


def point_in_rbox(points, box: RotatedBox, eps: float = EPS_GEOM):
    """Test whether points lie inside or on the boundary of ``box``.

    Points are rotated into the box frame and compared against the
    half-extents. Accepts a single ``(x, y)`` pair (returns ``bool``) or an
    ``(N, 2)`` array (returns a boolean array).
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    c, s = math.cos(box.theta), math.sin(box.theta)
    dx = pts[:, 0] - box.cx
    dy = pts[:, 1] - box.cy
    u = dx * c + dy * s
    v = -dx * s + dy * c
    inside = (np.abs(u) <= 0.5 * box.w + eps) & (np.abs(v) <= 0.5 * box.h + eps)
    return bool(inside[0]) if single else inside


def _dedup(poly: list[tuple[float, float]], eps: float) -> list[tuple[float, float]]:
    out: list[tuple[float, float]] = []
    for p in poly:
        if not out or abs(p[0] - out[-1][0]) > eps or abs(p[1] - out[-1][1]) > eps:
            out.append(p)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) <= eps and abs(out[0][1] - out[-1][1]) <= eps:
        out.pop()
    return out


def _clip(subject: list[tuple[float, float]], clip: list[tuple[float, float]]) -> list[tuple[float, float]]:
    output = subject
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = output
        output = []
        # side >= 0: on or left of the directed clip edge, i.e. inside for CCW
        px, py = inp[-1]
        ps = ex * (py - ay) - ey * (px - ax)
        for cx, cy in inp:
            cs = ex * (cy - ay) - ey * (cx - ax)
            if cs >= 0:
                if ps < 0:
                    t = ps / (ps - cs)
                    output.append((px + t * (cx - px), py + t * (cy - py)))
                output.append((cx, cy))
            elif ps >= 0:
                t = ps / (ps - cs)
                output.append((px + t * (cx - px), py + t * (cy - py)))
            px, py, ps = cx, cy, cs
        output = _dedup(output, EPS_GEOM)
    return output


def _shoelace(poly: list[tuple[float, float]]) -> float:
    # relative to the first vertex: avoids cancellation far from the origin
    ox, oy = poly[0]
    acc = 0.0
    for i in range(1, len(poly) - 1):
        x0, y0 = poly[i][0] - ox, poly[i][1] - oy
        x1, y1 = poly[i + 1][0] - ox, poly[i + 1][1] - oy
        acc += x0 * y1 - x1 * y0
    return 0.5 * acc


def _intersection_area(p: list[tuple[float, float]], q: list[tuple[float, float]]) -> float:
    poly = _clip(p, q)
    if len(poly) < 3:
        return 0.0
    area = abs(_shoelace(poly))
    return area if area >= EPS_AREA else 0.0


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Intersect two convex CCW polygons with Sutherland-Hodgman clipping.

    Returns a ``(k, 2)`` array; ``k == 0`` when the polygons do not overlap
    or the overlap is a sliver with area below ``EPS_AREA``.
    """
    poly = _clip(_as_tuples(subject), _as_tuples(clip))
    if len(poly) < 3 or abs(_shoelace(poly)) < EPS_AREA:
        return np.empty((0, 2))
    return np.array(poly)


def _as_tuples(poly) -> list[tuple[float, float]]:
    return [(float(x), float(y)) for x, y in np.asarray(poly, dtype=np.float64)]


def _corner_tuples(box: RotatedBox) -> list[tuple[float, float]]:
    c, s = math.cos(box.theta), math.sin(box.theta)
    hw, hh = 0.5 * box.w, 0.5 * box.h
    out = []
    for u, v in ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)):
        out.append((box.cx + u * c - v * s, box.cy + u * s + v * c))
    return out


def _bbox_disjoint(p: list[tuple[float, float]], q: list[tuple[float, float]]) -> bool:
    pxs, pys = [v[0] for v in p], [v[1] for v in p]
    qxs, qys = [v[0] for v in q], [v[1] for v in q]
    return max(pxs) < min(qxs) or max(qxs) < min(pxs) or max(pys) < min(qys) or max(qys) < min(pys)


def polygon_iou(p: np.ndarray, q: np.ndarray) -> float:
    """IoU of two convex CCW polygons."""
    pt, qt = _as_tuples(p), _as_tuples(q)
    if _bbox_disjoint(pt, qt):
        return 0.0
    inter = _intersection_area(pt, qt)
    if inter <= 0.0:
        return 0.0
    union = abs(_shoelace(pt)) + abs(_shoelace(qt)) - inter
    return min(1.0, max(0.0, inter / union))


def skew_iou(a: RotatedBox, b: RotatedBox) -> float:
    """Exact IoU of two rotated boxes via convex polygon clipping."""
    # fixed argument order makes the float result exactly symmetric
    if (a.cx, a.cy, a.w, a.h, a.theta) > (b.cx, b.cy, b.w, b.h, b.theta):
        a, b = b, a
    p, q = _corner_tuples(a), _corner_tuples(b)
    if _bbox_disjoint(p, q):
        return 0.0
    inter = _intersection_area(p, q)
    if inter <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / (a.area + b.area - inter)))


def skew_iou_matrix(boxes_a: Sequence[RotatedBox], boxes_b: Sequence[RotatedBox]) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = skew_iou(a, b)
    return out
