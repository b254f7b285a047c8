"""Label assignment on multi-level anchor-point grids.

Two assigners are provided: the rotated task-aligned assigner, which ranks
anchor points inside each ground-truth box by ``t = s**alpha * iou**beta``,
and a simplified static FCOSR-style assigner used as a baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import RotatedBox, point_in_rbox, skew_iou

DEFAULT_STRIDES = (8, 16, 32)
DEFAULT_SCALE_RANGES = ((0.0, 64.0), (64.0, 128.0), (128.0, math.inf))


@dataclass(frozen=True, eq=False)
class AnchorPointGrid:
    """Flattened anchor points of all pyramid levels, finest level first."""

    points: np.ndarray  # (N, 2)
    strides: np.ndarray  # (N,)
    level_ids: np.ndarray  # (N,)
    level_shapes: tuple[tuple[int, int], ...]  # (rows, cols) per level

    def __len__(self) -> int:
        return len(self.points)

    @property
    def num_levels(self) -> int:
        return len(self.level_shapes)


def build_anchor_points(image_size, strides: Sequence[int] = DEFAULT_STRIDES) -> AnchorPointGrid:
    """Anchor points at cell centres, ``ceil(size / stride)`` cells per axis.

    ``image_size`` is an int (square) or a ``(width, height)`` pair. Points
    within a level are ordered row-major (y outer, x inner).
    """
    if np.ndim(image_size) == 0:
        width = height = int(image_size)
    else:
        width, height = (int(v) for v in image_size)
    pts, strs, lvls, shapes = [], [], [], []
    for level, stride in enumerate(strides):
        cols, rows = math.ceil(width / stride), math.ceil(height / stride)
        xs = (np.arange(cols) + 0.5) * stride
        ys = (np.arange(rows) + 0.5) * stride
        gx, gy = np.meshgrid(xs, ys)
        pts.append(np.stack([gx.ravel(), gy.ravel()], axis=1))
        strs.append(np.full(rows * cols, float(stride)))
        lvls.append(np.full(rows * cols, level))
        shapes.append((rows, cols))
    return AnchorPointGrid(
        np.concatenate(pts).astype(np.float64),
        np.concatenate(strs),
        np.concatenate(lvls),
        tuple(shapes),
    )


@dataclass(frozen=True, eq=False)
class AssignmentInput:
    gt_boxes: Sequence[RotatedBox]
    gt_labels: Sequence[int]
    pred_scores: np.ndarray  # (N, num_classes), values in [0, 1]
    pred_boxes: Sequence[RotatedBox]  # N boxes


@dataclass(frozen=True, eq=False)
class AssignmentResult:
    assigned_gt: np.ndarray  # (N,) gt index, -1 for negatives
    labels: np.ndarray  # (N,) class id, -1 for negatives
    alignment_metric: np.ndarray  # (N,)
    soft_cls_target: np.ndarray  # (N,)

    @property
    def positive_mask(self) -> np.ndarray:
        return self.assigned_gt >= 0

    @classmethod
    def negatives(cls, n: int) -> "AssignmentResult":
        return cls(np.full(n, -1), np.full(n, -1), np.zeros(n), np.zeros(n))


def alignment_metric(score, iou, alpha: float = 1.0, beta: float = 6.0):
    return np.power(score, alpha) * np.power(iou, beta)


def rotated_tal_assign(
    inp: AssignmentInput,
    grid: AnchorPointGrid,
    alpha: float = 1.0,
    beta: float = 6.0,
    topk: int = 13,
) -> AssignmentResult:
    """Rotated task-aligned assignment.

    Candidates for a ground truth are the anchor points inside its rotated
    box. Each ground truth keeps its ``topk`` candidates by alignment metric
    (ties broken by point index); a point kept by several ground truths
    goes to the one its predicted box overlaps most. Soft classification
    targets rescale each ground truth's metrics so their peak equals the
    peak IoU among its positives.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    if topk < 1:
        raise ValueError("topk must be >= 1")
    n = len(grid)
    if n == 0:
        raise ValueError("grid has no anchor points")
    scores = np.asarray(inp.pred_scores, dtype=np.float64)
    if scores.shape[0] != n or len(inp.pred_boxes) != n:
        raise ValueError("prediction arrays do not match the anchor grid")
    num_gt = len(inp.gt_boxes)
    if num_gt == 0:
        return AssignmentResult.negatives(n)

    ious = np.zeros((num_gt, n))
    metrics = np.zeros((num_gt, n))
    selected = np.zeros((num_gt, n), dtype=bool)
    for g, (gt, label) in enumerate(zip(inp.gt_boxes, inp.gt_labels)):
        idx = np.flatnonzero(point_in_rbox(grid.points, gt))
        if idx.size == 0:
            continue
        mu = np.array([skew_iou(inp.pred_boxes[i], gt) for i in idx])
        t = alignment_metric(scores[idx, label], mu, alpha, beta)
        ious[g, idx] = mu
        metrics[g, idx] = t
        order = np.lexsort((idx, -t))[:topk]
        selected[g, idx[order]] = True

    claimed = selected.any(axis=0)
    # argmax returns the first maximum, so IoU ties go to the lower gt index
    assigned = np.argmax(np.where(selected, ious, -1.0), axis=0)
    assigned[~claimed] = -1

    cols = np.arange(n)
    pos = assigned >= 0
    t_assigned = np.where(pos, metrics[np.maximum(assigned, 0), cols], 0.0)
    soft = np.zeros(n)
    for g in range(num_gt):
        mine = assigned == g
        if not mine.any():
            continue
        max_t = t_assigned[mine].max()
        if max_t > 0:
            soft[mine] = t_assigned[mine] * ious[g, mine].max() / max_t
    labels = np.where(pos, np.asarray(inp.gt_labels, dtype=int)[np.maximum(assigned, 0)], -1)
    return AssignmentResult(assigned, labels, t_assigned, soft)


def _check_scale_ranges(scale_ranges, num_levels: int):
    if len(scale_ranges) != num_levels:
        raise ValueError(f"need {num_levels} scale ranges, got {len(scale_ranges)}")
    lo = 0.0
    for a, b in scale_ranges:
        if a != lo or b <= a:
            raise ValueError(f"scale ranges must partition (0, inf): {scale_ranges}")
        lo = b
    if lo != math.inf:
        raise ValueError(f"scale ranges must partition (0, inf): {scale_ranges}")


def point_in_ellipse(points: np.ndarray, box: RotatedBox, shrink: float) -> np.ndarray:
    """Points inside the box's inscribed ellipse scaled by ``shrink``."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    dx = points[:, 0] - box.cx
    dy = points[:, 1] - box.cy
    u = (dx * c + dy * s) / (0.5 * shrink * box.w)
    v = (-dx * s + dy * c) / (0.5 * shrink * box.h)
    return u * u + v * v <= 1.0


def fcosr_assign(
    gt_boxes: Sequence[RotatedBox],
    grid: AnchorPointGrid,
    scale_ranges=DEFAULT_SCALE_RANGES,
    shrink: float = 0.5,
    gt_labels: Sequence[int] | None = None,
) -> AssignmentResult:
    """Static assignment in the style of FCOSR.

    A point is positive for a ground truth when it falls in the shrunken
    inscribed ellipse and the box scale ``sqrt(w*h)`` lies in the point's
    level range. Smaller ground truths claim points first. A ground truth
    left without positives falls back to its nearest unclaimed interior
    point.
    """
    _check_scale_ranges(scale_ranges, grid.num_levels)
    if not 0 < shrink <= 1:
        raise ValueError("shrink must be in (0, 1]")
    n = len(grid)
    if len(gt_boxes) == 0:
        return AssignmentResult.negatives(n)
    labels_in = np.zeros(len(gt_boxes), dtype=int) if gt_labels is None else np.asarray(gt_labels, dtype=int)
    lo = np.array([r[0] for r in scale_ranges])[grid.level_ids]
    hi = np.array([r[1] for r in scale_ranges])[grid.level_ids]

    assigned = np.full(n, -1)
    order = sorted(range(len(gt_boxes)), key=lambda g: (gt_boxes[g].area, g))
    for g in order:
        gt = gt_boxes[g]
        scale = math.sqrt(gt.area)
        ok = point_in_ellipse(grid.points, gt, shrink) & (lo <= scale) & (scale < hi)
        assigned[ok & (assigned < 0)] = g

    for g in order:
        if np.any(assigned == g):
            continue
        gt = gt_boxes[g]
        free = np.flatnonzero(point_in_rbox(grid.points, gt) & (assigned < 0))
        if free.size == 0:
            continue
        dist = np.hypot(grid.points[free, 0] - gt.cx, grid.points[free, 1] - gt.cy)
        assigned[free[np.argmin(dist)]] = g

    pos = assigned >= 0
    labels = np.where(pos, labels_in[np.maximum(assigned, 0)], -1)
    ones = pos.astype(np.float64)
    return AssignmentResult(assigned, labels, ones, ones.copy())
