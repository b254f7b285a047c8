"""Gated RepVGG block arithmetic and its re-parameterization.

Training-time block::

    y = N3(conv3x3(x)) + alpha1 * N1(conv1x1(x)) + alpha2 * Nid(x)

where each ``N`` is an optional per-channel batch normalization and the
identity branch exists only when input and output channels agree. At
inference the three branches collapse into one 3x3 convolution.

Arrays use the ``(batch, channel, height, width)`` layout for feature maps
and ``(out_channels, in_channels, kh, kw)`` for kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class BatchNormStats:
    mean: np.ndarray
    var: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    @classmethod
    def identity(cls, channels: int) -> "BatchNormStats":
        return cls(np.zeros(channels), np.ones(channels), np.ones(channels), np.zeros(channels), 0.0)

    def scale(self) -> np.ndarray:
        return self.gamma / np.sqrt(self.var + self.eps)

    def apply(self, x: np.ndarray) -> np.ndarray:
        s = self.scale()[None, :, None, None]
        return (x - self.mean[None, :, None, None]) * s + self.beta[None, :, None, None]


@dataclass(frozen=True, eq=False)
class RepBranchWeights:
    k3: np.ndarray  # (C_out, C_in, 3, 3)
    b3: np.ndarray  # (C_out,)
    k1: np.ndarray  # (C_out, C_in, 1, 1)
    b1: np.ndarray  # (C_out,)
    alpha1: float = 1.0
    alpha2: float | None = None  # None: no identity branch
    bn3: BatchNormStats | None = None
    bn1: BatchNormStats | None = None
    bn_id: BatchNormStats | None = None

    def __post_init__(self):
        c_out, c_in = self.k3.shape[:2]
        if self.k3.shape != (c_out, c_in, 3, 3):
            raise ValueError(f"k3 must be (C_out, C_in, 3, 3), got {self.k3.shape}")
        if self.k1.shape != (c_out, c_in, 1, 1):
            raise ValueError(f"k1 must be {(c_out, c_in, 1, 1)}, got {self.k1.shape}")
        if self.b3.shape != (c_out,) or self.b1.shape != (c_out,):
            raise ValueError("bias shapes must be (C_out,)")
        if self.alpha2 is not None and c_in != c_out:
            raise ValueError("identity branch requires C_in == C_out")
        tensors = [self.k3, self.b3, self.k1, self.b1, np.asarray(self.alpha1)]
        if self.alpha2 is not None:
            tensors.append(np.asarray(self.alpha2))
        if not all(np.all(np.isfinite(t)) for t in tensors):
            raise ValueError("branch weights must be finite")

    @property
    def in_channels(self) -> int:
        return self.k3.shape[1]

    @property
    def out_channels(self) -> int:
        return self.k3.shape[0]


@dataclass(frozen=True, eq=False)
class FusedConv:
    kernel: np.ndarray  # (C_out, C_in, 3, 3)
    bias: np.ndarray  # (C_out,)

    @property
    def num_params(self) -> int:
        return self.kernel.size + self.bias.size

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return conv2d_direct(self.kernel, self.bias, x)


def conv2d_direct(kernel: np.ndarray, bias: np.ndarray, x: np.ndarray) -> np.ndarray:
    """3x3 cross-correlation, stride 1, zero padding 1."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise ValueError("expected NCHW input and a (C_out, C_in, 3, 3) kernel")
    if kernel.shape[1] != x.shape[1]:
        raise ValueError(f"kernel expects {kernel.shape[1]} input channels, got {x.shape[1]}")
    _, _, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((x.shape[0], kernel.shape[0], h, w))
    for dy in range(3):
        for dx in range(3):
            out += np.einsum("oc,nchw->nohw", kernel[:, :, dy, dx], xp[:, :, dy : dy + h, dx : dx + w])
    return out + bias[None, :, None, None]


def conv1x1(kernel: np.ndarray, bias: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("oc,nchw->nohw", kernel[:, :, 0, 0], x) + bias[None, :, None, None]


def branch_forward(w: RepBranchWeights, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != w.in_channels:
        raise ValueError(f"input must be (N, {w.in_channels}, H, W), got {x.shape}")
    y3 = conv2d_direct(w.k3, w.b3, x)
    y1 = conv1x1(w.k1, w.b1, x)
    if w.bn3 is not None:
        y3 = w.bn3.apply(y3)
    if w.bn1 is not None:
        y1 = w.bn1.apply(y1)
    y = y3 + w.alpha1 * y1
    if w.alpha2 is not None:
        yid = x if w.bn_id is None else w.bn_id.apply(x)
        y = y + w.alpha2 * yid
    return y


def fold_bn(kernel: np.ndarray, bias: np.ndarray, bn: BatchNormStats | None):
    if bn is None:
        return kernel, bias
    s = bn.scale()
    return kernel * s[:, None, None, None], bn.beta + (bias - bn.mean) * s


def identity_kernel(channels: int) -> np.ndarray:
    k = np.zeros((channels, channels, 3, 3))
    k[np.arange(channels), np.arange(channels), 1, 1] = 1.0
    return k


def fuse(w: RepBranchWeights) -> FusedConv:
    k3, b3 = fold_bn(w.k3, w.b3, w.bn3)
    k1, b1 = fold_bn(w.k1, w.b1, w.bn1)
    kernel = k3.copy()
    kernel[:, :, 1:2, 1:2] += w.alpha1 * k1
    bias = b3 + w.alpha1 * b1
    if w.alpha2 is not None:
        kid, bid = fold_bn(identity_kernel(w.in_channels), np.zeros(w.in_channels), w.bn_id)
        kernel += w.alpha2 * kid
        bias = bias + w.alpha2 * bid
    return FusedConv(kernel, bias)


def random_branch_weights(
    rng: np.random.Generator,
    channels: int,
    with_identity: bool = True,
    with_norm: bool = False,
) -> RepBranchWeights:
    """Random gated block, mostly for checks and benchmarks."""

    def bn():
        if not with_norm:
            return None
        return BatchNormStats(
            rng.normal(0, 0.5, channels),
            rng.uniform(0.2, 2.0, channels),
            rng.uniform(0.5, 1.5, channels),
            rng.normal(0, 0.5, channels),
        )

    return RepBranchWeights(
        k3=rng.normal(0, 0.5, (channels, channels, 3, 3)),
        b3=rng.normal(0, 0.5, channels),
        k1=rng.normal(0, 0.5, (channels, channels, 1, 1)),
        b1=rng.normal(0, 0.5, channels),
        alpha1=float(rng.uniform(-1.5, 1.5)),
        alpha2=float(rng.uniform(-1.5, 1.5)) if with_identity else None,
        bn3=bn(),
        bn1=bn(),
        bn_id=bn() if with_identity else None,
    )
