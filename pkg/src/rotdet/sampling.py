"""Seeded random boxes for checks and benchmarks."""

from __future__ import annotations

import math

import numpy as np

from .geometry import RotatedBox


def random_box(rng: np.random.Generator, extent: float = 100.0, min_size: float = 4.0, max_size: float = 60.0) -> RotatedBox:
    return RotatedBox(
        float(rng.uniform(-extent, extent)),
        float(rng.uniform(-extent, extent)),
        float(rng.uniform(min_size, max_size)),
        float(rng.uniform(min_size, max_size)),
        float(rng.uniform(0.0, math.pi / 2)),
    )


def perturb_box(rng: np.random.Generator, box: RotatedBox, spread: float = 0.3) -> RotatedBox:
    """A nearby box, as a regression head would predict during training."""
    size = math.sqrt(box.w * box.h)
    return RotatedBox(
        box.cx + float(rng.normal(0, spread * size)),
        box.cy + float(rng.normal(0, spread * size)),
        box.w * math.exp(float(rng.normal(0, spread))),
        box.h * math.exp(float(rng.normal(0, spread))),
        box.theta + float(rng.normal(0, spread)),
    )


def random_pair(rng: np.random.Generator) -> tuple[RotatedBox, RotatedBox]:
    gt = random_box(rng)
    return perturb_box(rng, gt), gt


def random_scene(rng: np.random.Generator, n: int, extent: float = 200.0, num_classes: int = 3):
    """``n`` boxes clustered so that NMS has overlaps to resolve."""
    centers = [random_box(rng, extent) for _ in range(max(1, n // 5))]
    boxes = [perturb_box(rng, centers[int(rng.integers(len(centers)))], 0.15) for _ in range(n)]
    scores = rng.uniform(0.05, 1.0, n)
    classes = rng.integers(0, num_classes, n)
    return boxes, scores, classes
