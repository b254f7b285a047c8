"""Discrete angle distribution codec and Distribution Focal Loss.

The angle head predicts logits over ``NUM_BINS`` bins of width ``BIN_WIDTH``
spanning ``[0, pi/2]``; the decoded angle is the expectation of the bin
angles under the softmaxed distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gaussian import LossValueAndGrad, probiou_loss
from .geometry import RotatedBox

NUM_BINS = 91
BIN_WIDTH = math.pi / 180.0
BIN_ANGLES = np.arange(NUM_BINS) * BIN_WIDTH
MAX_ANGLE = (NUM_BINS - 1) * BIN_WIDTH
_MID = (NUM_BINS - 1) // 2
_CENTERED = np.arange(NUM_BINS, dtype=np.float64) - _MID

_NORM_TOL = 1e-6
# an angle within this many bin widths of a bin centre is an exact hit
_SNAP_TOL = 1e-11


@dataclass(frozen=True)
class AngleTarget:
    left_bin: int
    right_bin: int
    left_weight: float
    right_weight: float

    def as_distribution(self) -> np.ndarray:
        dist = np.zeros(NUM_BINS)
        dist[self.left_bin] += self.left_weight
        dist[self.right_bin] += self.right_weight
        return dist


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def validate_distribution(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.shape[-1] != NUM_BINS:
        raise ValueError(f"angle distribution needs {NUM_BINS} bins, got {p.shape[-1]}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("angle distribution has negative or non-finite entries")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > _NORM_TOL):
        raise ValueError("angle distribution does not sum to 1")
    return p


def decode_angle(probs) -> float | np.ndarray:
    """Expected angle ``sum_i p_i * i * BIN_WIDTH``.

    A ``(..., 91)`` array decodes along its last axis.
    """
    p = validate_distribution(probs)
    # expectation taken about the middle bin and renormalized: keeps symmetric
    # distributions exact, e.g. uniform decodes to pi/4 bit-for-bit
    if p.ndim == 1:
        offset = math.fsum(p * _CENTERED) / math.fsum(p)
        return (_MID + offset) * BIN_WIDTH
    offset = np.sum(p * _CENTERED, axis=-1) / np.sum(p, axis=-1)
    return (_MID + offset) * BIN_WIDTH


def decode_logits(logits) -> float | np.ndarray:
    return decode_angle(softmax(np.asarray(logits, dtype=np.float64)))


def encode_angle(theta: float) -> AngleTarget:
    """Split ``theta`` between its two neighbouring bins.

    Weights interpolate linearly so that decoding the two-bin distribution
    gives back ``theta``. Angles must already lie in ``[0, pi/2]``.
    """
    if not math.isfinite(theta) or theta < 0.0 or theta > MAX_ANGLE:
        raise ValueError(f"angle {theta!r} outside [0, pi/2]; canonicalize the box first")
    pos = theta / BIN_WIDTH
    nearest = round(pos)
    if abs(pos - nearest) <= _SNAP_TOL * max(1.0, pos):
        nearest = min(int(nearest), NUM_BINS - 1)
        return AngleTarget(nearest, nearest, 1.0, 0.0)
    left = min(int(math.floor(pos)), NUM_BINS - 2)
    right = left + 1
    right_weight = pos - left
    return AngleTarget(left, right, 1.0 - right_weight, right_weight)


def dfl_loss(logits, target: AngleTarget) -> LossValueAndGrad:
    """Cross-entropy between softmax(logits) and the two-bin target.

    ``grad`` holds d(loss)/d(logits), i.e. ``softmax(logits) - target``.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.shape != (NUM_BINS,):
        raise ValueError(f"expected {NUM_BINS} logits, got shape {z.shape}")
    logp = log_softmax(z)
    value = -(target.left_weight * logp[target.left_bin] + target.right_weight * logp[target.right_bin])
    grad = np.exp(logp) - target.as_distribution()
    return LossValueAndGrad(float(value), grad)


def dfl_loss_batch(logits, targets, reduction: str = "mean") -> LossValueAndGrad:
    """DFL over a batch of positive samples; ``grad`` has the logits' shape."""
    z = np.asarray(logits, dtype=np.float64)
    if len(z) != len(targets):
        raise ValueError("logits and targets differ in length")
    if len(targets) == 0:
        return LossValueAndGrad(0.0, np.zeros_like(z))
    parts = [dfl_loss(row, t) for row, t in zip(z, targets)]
    values = np.array([p.value for p in parts])
    grads = np.stack([p.grad for p in parts])
    if reduction == "mean":
        return LossValueAndGrad(float(values.mean()), grads / len(parts))
    if reduction == "sum":
        return LossValueAndGrad(float(values.sum()), grads)
    raise ValueError(f"unknown reduction {reduction!r}")


def joint_box_loss(
    pred: RotatedBox,
    gt: RotatedBox,
    angle_logits,
    probiou_weight: float = 1.0,
    dfl_weight: float = 1.0,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted ProbIoU + DFL loss for one positive sample.

    ``gt`` must be canonical so its angle can be encoded. Returns the total
    loss, the gradient w.r.t. the predicted box and the gradient w.r.t. the
    angle logits.
    """
    box = probiou_loss(pred, gt)
    ang = dfl_loss(angle_logits, encode_angle(gt.theta))
    total = probiou_weight * box.value + dfl_weight * ang.value
    return total, probiou_weight * box.grad, dfl_weight * ang.grad
