"""Slow, independent reference implementations.

Each function here recomputes a quantity by a different route than the
production code (sampling, enumeration, finite differences, naive loops)
and is used by ``selfcheck`` and the test-suite.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .geometry import RotatedBox, rbox_to_corners


def quad_contains(corners: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Cross-product sign test against every edge of a convex CCW polygon."""
    pts = np.atleast_2d(pts)
    inside = np.ones(len(pts), dtype=bool)
    n = len(corners)
    for i in range(n):
        a, b = corners[i], corners[(i + 1) % n]
        cross = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
        inside &= cross >= 0
    return inside


def monte_carlo_iou(a: RotatedBox, b: RotatedBox, n: int, rng: np.random.Generator) -> float:
    """IoU estimated from ``n`` uniform samples over the union's bounding box."""
    ca, cb = rbox_to_corners(a), rbox_to_corners(b)
    both = np.vstack([ca, cb])
    lo, hi = both.min(axis=0), both.max(axis=0)
    pts = rng.uniform(lo, hi, size=(n, 2))
    ina, inb = quad_contains(ca, pts), quad_contains(cb, pts)
    union = np.count_nonzero(ina | inb)
    return np.count_nonzero(ina & inb) / union if union else 0.0


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest per-entry ``|a - n| / max(|a|, |n|, floor)``."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def naive_conv2d(kernel: np.ndarray, bias: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cross-correlation with explicit loops; any odd kernel size, 'same' padding."""
    n, c_in, h, w = x.shape
    c_out, _, kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((n, c_out, h, w))
    for b in range(n):
        for o in range(c_out):
            for i in range(h):
                for j in range(w):
                    acc = bias[o]
                    for c in range(c_in):
                        for u in range(kh):
                            for v in range(kw):
                                ii, jj = i + u - ph, j + v - pw
                                if 0 <= ii < h and 0 <= jj < w:
                                    acc += kernel[o, c, u, v] * x[b, c, ii, jj]
                    out[b, o, i, j] = acc
    return out


def plain_repvgg_fuse(k3, b3, k1, b1, bn3=None, bn1=None, bn_id=None, identity=True):
    """Ungated RepVGG fusion written out channel by channel."""
    c_out, c_in = k3.shape[:2]
    kernel = np.zeros((c_out, c_in, 3, 3))
    bias = np.zeros(c_out)
    for o in range(c_out):
        s3 = 1.0 if bn3 is None else bn3.gamma[o] / math.sqrt(bn3.var[o] + bn3.eps)
        s1 = 1.0 if bn1 is None else bn1.gamma[o] / math.sqrt(bn1.var[o] + bn1.eps)
        kernel[o] += k3[o] * s3
        kernel[o, :, 1, 1] += k1[o, :, 0, 0] * s1
        bias[o] += b3[o] * s3 if bn3 is None else bn3.beta[o] + (b3[o] - bn3.mean[o]) * s3
        bias[o] += b1[o] * s1 if bn1 is None else bn1.beta[o] + (b1[o] - bn1.mean[o]) * s1
        if identity:
            sid = 1.0 if bn_id is None else bn_id.gamma[o] / math.sqrt(bn_id.var[o] + bn_id.eps)
            kernel[o, o, 1, 1] += sid
            if bn_id is not None:
                bias[o] += bn_id.beta[o] - bn_id.mean[o] * sid
    return kernel, bias


def brute_force_nms(boxes: Sequence[RotatedBox], scores, classes, iou_threshold: float, class_aware: bool = True):
    """O(n^2) NMS over a precomputed IoU matrix. Returns kept input indices."""
    from .geometry import polygon_area, clip_convex

    n = len(boxes)
    polys = [rbox_to_corners(b) for b in boxes]
    iou = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            inter = polygon_area(clip_convex(polys[i], polys[j]))
            iou[i, j] = inter / (boxes[i].area + boxes[j].area - inter)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    suppressed = np.zeros(n, dtype=bool)
    keep = []
    for rank, i in enumerate(order):
        if suppressed[i]:
            continue
        keep.append(i)
        for j in order[rank + 1:]:
            if (not class_aware or classes[j] == classes[i]) and iou[i, j] > iou_threshold:
                suppressed[j] = True
    return keep


def brute_force_tal(points, gt_boxes, gt_labels, scores, pred_boxes, alpha, beta, topk):
    """Reference rotated TAL assignment with plain Python loops.

    Returns (assigned_gt, soft_target) as lists.
    """
    from .geometry import skew_iou

    n = len(points)
    claims: dict[int, list[tuple[float, int, float]]] = {i: [] for i in range(n)}
    metric = {}
    for g, (gt, label) in enumerate(zip(gt_boxes, gt_labels)):
        corners = rbox_to_corners(gt)
        cands = []
        for i in range(n):
            if not _inside_tol(corners, points[i]):
                continue
            mu = skew_iou(pred_boxes[i], gt)
            t = (scores[i][label] ** alpha) * (mu ** beta)
            cands.append((t, i, mu))
            metric[(g, i)] = (t, mu)
        cands.sort(key=lambda c: (-c[0], c[1]))
        for t, i, mu in cands[:topk]:
            claims[i].append((mu, g, t))
    assigned = [-1] * n
    for i, cl in claims.items():
        if cl:
            best = max(cl, key=lambda c: (c[0], -c[1]))
            assigned[i] = best[1]
    soft = [0.0] * n
    for g in range(len(gt_boxes)):
        mine = [i for i in range(n) if assigned[i] == g]
        if not mine:
            continue
        max_t = max(metric[(g, i)][0] for i in mine)
        max_mu = max(metric[(g, i)][1] for i in mine)
        for i in mine:
            soft[i] = metric[(g, i)][0] / max_t * max_mu if max_t > 0 else 0.0
    return assigned, soft


def _inside_tol(corners, p, tol=1e-9):
    n = len(corners)
    for i in range(n):
        a, b = corners[i], corners[(i + 1) % n]
        edge = b - a
        cross = edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])
        if cross < -tol * math.hypot(edge[0], edge[1]):
            return False
    return True


def min_area_rect_sweep(pts: np.ndarray, step_deg: float = 1.0) -> float:
    """Smallest bounding-rectangle area over a sweep of orientations."""
    best = math.inf
    for deg in np.arange(0.0, 90.0, step_deg):
        t = math.radians(deg)
        u = np.array([math.cos(t), math.sin(t)])
        v = np.array([-u[1], u[0]])
        pu, pv = pts @ u, pts @ v
        best = min(best, (pu.max() - pu.min()) * (pv.max() - pv.min()))
    return best
