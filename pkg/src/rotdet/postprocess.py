"""Decoding of anchor-point predictions and rotated non-maximum suppression."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .angle import decode_angle, encode_angle
from .assign import AnchorPointGrid
from .geometry import RotatedBox, canonicalize, skew_iou


@dataclass(frozen=True)
class Detection:
    box: RotatedBox
    score: float
    class_id: int


@dataclass(frozen=True, eq=False)
class RawPrediction:
    scores: np.ndarray  # (N, num_classes)
    box_deltas: np.ndarray  # (N, 4): dx, dy, dw, dh in stride units
    angle_probs: np.ndarray  # (N, 91)


def decode(
    pred: RawPrediction,
    grid: AnchorPointGrid,
    score_threshold: float = 0.1,
    size_decode: str = "exp",
) -> list[Detection]:
    """Turn per-point predictions into detections.

    One detection is emitted per (point, class) whose score exceeds
    ``score_threshold``. Widths and heights are ``exp(delta) * stride``, or
    ``delta * stride`` with ``size_decode="linear"``.
    """
    scores = np.asarray(pred.scores, dtype=np.float64)
    deltas = np.asarray(pred.box_deltas, dtype=np.float64)
    n = len(grid)
    if scores.shape[0] != n or deltas.shape != (n, 4) or len(pred.angle_probs) != n:
        raise ValueError("prediction arrays do not match the anchor grid")
    if size_decode not in ("exp", "linear"):
        raise ValueError(f"unknown size_decode {size_decode!r}")

    out: list[Detection] = []
    point_idx, class_idx = np.nonzero(scores > score_threshold)
    if point_idx.size == 0:
        return out
    thetas = np.atleast_1d(decode_angle(np.asarray(pred.angle_probs)[point_idx]))
    for k, (i, c) in enumerate(zip(point_idx, class_idx)):
        stride = grid.strides[i]
        px, py = grid.points[i]
        dx, dy, dw, dh = deltas[i]
        if size_decode == "exp":
            w, h = math.exp(dw) * stride, math.exp(dh) * stride
        else:
            w, h = dw * stride, dh * stride
        box = canonicalize(RotatedBox(px + dx * stride, py + dy * stride, w, h, float(thetas[k])))
        out.append(Detection(box, float(scores[i, c]), int(c)))
    return out


def encode(box: RotatedBox, point, stride: float, size_decode: str = "exp"):
    """Regression deltas and angle distribution that :func:`decode` maps back to ``box``."""
    box = canonicalize(box)
    px, py = point
    if size_decode == "exp":
        dw, dh = math.log(box.w / stride), math.log(box.h / stride)
    else:
        dw, dh = box.w / stride, box.h / stride
    deltas = np.array([(box.cx - px) / stride, (box.cy - py) / stride, dw, dh])
    return deltas, encode_angle(box.theta).as_distribution()


def rotated_nms(
    dets: Sequence[Detection],
    iou_threshold: float = 0.1,
    class_aware: bool = True,
) -> list[Detection]:
    """Greedy NMS on skew IoU.

    Detections are visited by descending score, ties in input order. A
    detection survives if its IoU with every kept detection (of the same
    class when ``class_aware``) is at most ``iou_threshold``.
    """
    if not 0 < iou_threshold < 1:
        raise ValueError("iou_threshold must be in (0, 1)")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept: list[Detection] = []
    for i in order:
        d = dets[i]
        if all(
            (class_aware and k.class_id != d.class_id) or skew_iou(k.box, d.box) <= iou_threshold
            for k in kept
        ):
            kept.append(d)
    return kept
