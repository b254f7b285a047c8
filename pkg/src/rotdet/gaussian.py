"""Gaussian box representation and the ProbIoU / KLD regression losses.

Both losses return the value together with its analytic gradient with
respect to the predicted box parameters ``(cx, cy, w, h, theta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import RotatedBox

# variance of a uniform distribution over an interval of length L is L**2 / 12
COV_DIVISOR = 12.0


class CovarianceError(ArithmeticError):
    """A covariance that should be positive definite is not."""


@dataclass(frozen=True, eq=False)
class GaussianBox:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class LossValueAndGrad:
    value: float
    grad: np.ndarray  # d/d(cx, cy, w, h, theta) of the predicted box


def rbox_to_gaussian(box: RotatedBox, divisor: float = COV_DIVISOR) -> GaussianBox:
    a = box.w * box.w / divisor
    b = box.h * box.h / divisor
    c, s = math.cos(box.theta), math.sin(box.theta)
    cov = np.array(
        [
            [a * c * c + b * s * s, (a - b) * c * s],
            [(a - b) * c * s, a * s * s + b * c * c],
        ]
    )
    return GaussianBox(np.array([box.cx, box.cy]), cov)


def _cov_partials(box: RotatedBox, divisor: float) -> list[np.ndarray]:
    """dSigma/dw, dSigma/dh, dSigma/dtheta."""
    a = box.w * box.w / divisor
    b = box.h * box.h / divisor
    c, s = math.cos(box.theta), math.sin(box.theta)
    da = np.array([[c * c, c * s], [c * s, s * s]])
    db = np.array([[s * s, -c * s], [-c * s, c * c]])
    dt = (a - b) * np.array([[-2 * c * s, c * c - s * s], [c * c - s * s, 2 * c * s]])
    return [da * (2 * box.w / divisor), db * (2 * box.h / divisor), dt]


def _chain(box: RotatedBox, g_mean: np.ndarray, g_cov: np.ndarray, divisor: float) -> np.ndarray:
    """Pull gradients w.r.t. (mean, cov) back onto the box parameters."""
    grad = np.empty(5)
    grad[:2] = g_mean
    for k, d in enumerate(_cov_partials(box, divisor)):
        grad[2 + k] = float(np.sum(g_cov * d))
    return grad


def _det(m: np.ndarray) -> float:
    d = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if not d > 0:
        raise CovarianceError(f"covariance is not positive definite: {m.tolist()}")
    return d


def _inv(m: np.ndarray, det: float) -> np.ndarray:
    return np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det


def bhattacharyya_distance(p: GaussianBox, q: GaussianBox) -> float:
    mix = 0.5 * (p.cov + q.cov)
    det_mix = _det(mix)
    d = p.mean - q.mean
    term1 = 0.125 * float(d @ _inv(mix, det_mix) @ d)
    term2 = 0.5 * math.log(det_mix / math.sqrt(_det(p.cov) * _det(q.cov)))
    return term1 + term2


def probiou_loss(pred: RotatedBox, gt: RotatedBox, divisor: float = COV_DIVISOR) -> LossValueAndGrad:
    """Hellinger-distance ProbIoU loss ``sqrt(1 - exp(-B_D))``.

    The loss behaves like ``|pred - gt|`` near coincidence, so the gradient
    is reported as zero when the two Gaussians are identical.
    """
    gp = rbox_to_gaussian(pred, divisor)
    gg = rbox_to_gaussian(gt, divisor)
    mix = 0.5 * (gp.cov + gg.cov)
    det_mix = _det(mix)
    det_p = _det(gp.cov)
    det_g = _det(gg.cov)
    mix_inv = _inv(mix, det_mix)
    d = gp.mean - gg.mean
    md = mix_inv @ d

    bd = 0.125 * float(d @ md) + 0.5 * math.log(det_mix / math.sqrt(det_p * det_g))
    bd = max(bd, 0.0)
    bc = math.exp(-bd)
    value = math.sqrt(max(1.0 - bc, 0.0))
    if value < 1e-12:
        return LossValueAndGrad(value, np.zeros(5))

    g_mean = 0.25 * md
    g_cov = -0.0625 * np.outer(md, md) + 0.25 * (mix_inv - _inv(gp.cov, det_p))
    dl_dbd = 0.5 * bc / value
    return LossValueAndGrad(value, dl_dbd * _chain(pred, g_mean, g_cov, divisor))


def kl_divergence(p: GaussianBox, q: GaussianBox) -> float:
    """Closed-form ``KL(p || q)`` for 2-D Gaussians."""
    det_q = _det(q.cov)
    q_inv = _inv(q.cov, det_q)
    d = p.mean - q.mean
    return 0.5 * (
        float(np.trace(q_inv @ p.cov)) + float(d @ q_inv @ d) - 2.0 + math.log(det_q / _det(p.cov))
    )


def _box_kl(p: RotatedBox, q: RotatedBox, divisor: float) -> float:
    """``KL(p || q)`` evaluated in the frame of ``q``.

    Each term is written so it vanishes smoothly as ``p -> q``; the generic
    matrix form loses several digits on elongated boxes.
    """
    ap, bp = p.w * p.w / divisor, p.h * p.h / divisor
    aq, bq = q.w * q.w / divisor, q.h * q.h / divisor
    la = 2.0 * math.log(p.w / q.w)
    lb = 2.0 * math.log(p.h / q.h)
    s = math.sin(p.theta - q.theta)
    c, sn = math.cos(q.theta), math.sin(q.theta)
    dx, dy = p.cx - q.cx, p.cy - q.cy
    u = dx * c + dy * sn
    v = -dx * sn + dy * c
    spread = (math.expm1(la) - la) + (math.expm1(lb) - lb) + s * s * (ap - bp) * (1.0 / bq - 1.0 / aq)
    return 0.5 * (spread + u * u / aq + v * v / bq)


def kld_loss(
    pred: RotatedBox,
    gt: RotatedBox,
    tau: float = 1.0,
    reverse: bool = False,
    divisor: float = COV_DIVISOR,
) -> LossValueAndGrad:
    """KLD loss ``1 - 1 / (tau + ln(1 + D))``.

    ``D`` is ``KL(pred || gt)``, or ``KL(gt || pred)`` when ``reverse`` is set.
    """
    gp = rbox_to_gaussian(pred, divisor)
    gg = rbox_to_gaussian(gt, divisor)
    det_p = _det(gp.cov)
    det_g = _det(gg.cov)
    p_inv = _inv(gp.cov, det_p)
    g_inv = _inv(gg.cov, det_g)
    d = gp.mean - gg.mean

    if not reverse:
        div = _box_kl(pred, gt, divisor)
        g_mean = g_inv @ d
        g_cov = 0.5 * (g_inv - p_inv)
    else:
        pd = p_inv @ d
        div = _box_kl(gt, pred, divisor)
        g_mean = pd
        g_cov = 0.5 * (p_inv - p_inv @ gg.cov @ p_inv - np.outer(pd, pd))
    div = max(div, 0.0)

    denom = tau + math.log1p(div)
    value = 1.0 - 1.0 / denom
    dl_ddiv = 1.0 / (denom * denom * (1.0 + div))
    return LossValueAndGrad(value, dl_ddiv * _chain(pred, g_mean, g_cov, divisor))
