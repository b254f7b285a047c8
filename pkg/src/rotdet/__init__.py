"""Numerical core of an anchor-free rotated object detector.

Rotated-box geometry and SkewIoU, Gaussian box losses (ProbIoU, KLD), the
DFL angle codec, rotated task-aligned label assignment, gated RepVGG
re-parameterization, rotated NMS and DOTA tiling/evaluation.
"""

from .angle import AngleTarget, decode_angle, dfl_loss, encode_angle
from .assign import (
    AnchorPointGrid,
    AssignmentInput,
    AssignmentResult,
    build_anchor_points,
    fcosr_assign,
    rotated_tal_assign,
)
from .gaussian import GaussianBox, LossValueAndGrad, kld_loss, probiou_loss, rbox_to_gaussian
from .geometry import (
    InvalidBoxError,
    Quad,
    RotatedBox,
    canonicalize,
    clip_convex,
    point_in_rbox,
    rbox_to_quad,
    skew_iou,
)
from .postprocess import Detection, RawPrediction, decode, rotated_nms
from .repfusion import FusedConv, RepBranchWeights, branch_forward, conv2d_direct, fuse

__version__ = "0.1.0"
