"""Numerical self-checks run by ``rotdet selfcheck``.

Every check compares a production routine against an independent oracle
and reports the largest deviation next to its tolerance.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import angle, assign, dota, gaussian, geometry, oracles, postprocess, repfusion
from .geometry import Quad, RotatedBox
from .sampling import perturb_box, random_box, random_pair, random_scene


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    passed: bool
    seconds: float = 0.0
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return (
            f"{tag}  {self.name:<28} max_err={self.max_error:.3e}  tol={self.tolerance:.1e}"
            f"  ({self.seconds:.2f}s){extra}"
        )


def _result(name, err, tol, detail="", extra_ok=True):
    err = float(err)
    return CheckResult(name, err, tol, bool(err <= tol and extra_ok), detail=detail)


# --- geometry ---------------------------------------------------------------


def check_skew_iou_monte_carlo(rng, pairs=100, samples=1_000_000):
    worst = 0.0
    for _ in range(pairs):
        gt = random_box(rng)
        pred = perturb_box(rng, gt, float(rng.choice([0.1, 0.3, 0.6])))
        est = oracles.monte_carlo_iou(pred, gt, samples, rng)
        worst = max(worst, abs(geometry.skew_iou(pred, gt) - est))
    return _result("skew_iou_vs_monte_carlo", worst, 5e-3)


def check_skew_iou_octagon(rng=None):
    a = RotatedBox(0.0, 0.0, 1.0, 1.0, 0.0)
    b = RotatedBox(0.0, 0.0, 1.0, 1.0, math.pi / 4)
    return _result("skew_iou_octagon", abs(geometry.skew_iou(a, b) - 1 / math.sqrt(2)), 1e-9)


# --- losses -----------------------------------------------------------------


def gradient_error(loss_fn, pred: RotatedBox, gt: RotatedBox, h: float = 1e-5) -> float:
    analytic = loss_fn(pred, gt).grad
    numeric = oracles.central_difference(
        lambda x: loss_fn(RotatedBox.from_array(x), gt).value, pred.as_array(), h
    )
    return oracles.relative_error(analytic, numeric)


def check_gradients(rng, pairs=200):
    out = []
    for name in ("probiou_loss", "kld_loss"):
        # resolved through the module so a patched loss is what gets checked
        fn = getattr(gaussian, name)
        worst = max(gradient_error(fn, *random_pair(rng)) for _ in range(pairs))
        out.append(_result(f"{name}_gradient_fd", worst, 1e-4))
    return out


def check_boundary_continuity(rng, pairs=100):
    worst = 0.0
    for _ in range(pairs):
        pred, gt = random_pair(rng)
        swapped = RotatedBox(gt.cx, gt.cy, gt.h, gt.w, gt.theta + math.pi / 2)
        diff = gaussian.probiou_loss(pred, gt).value - gaussian.probiou_loss(pred, swapped).value
        worst = max(worst, abs(diff))
    return _result("probiou_edge_exchange", worst, 1e-9)


def check_square_degeneracy(rng, cases=20):
    worst = 0.0
    dfl_spread = math.inf
    thetas = np.linspace(0.0, math.pi / 2 - 0.05, 7)
    for _ in range(cases):
        side = float(rng.uniform(5, 50))
        pred = perturb_box(rng, RotatedBox(0.0, 0.0, side, side, 0.0))
        vals = [gaussian.probiou_loss(pred, RotatedBox(0.0, 0.0, side, side, t)).value for t in thetas]
        worst = max(worst, max(vals) - min(vals))
        logits = rng.normal(size=angle.NUM_BINS)
        dfl = [angle.dfl_loss(logits, angle.encode_angle(float(t))).value for t in thetas]
        dfl_spread = min(dfl_spread, max(dfl) - min(dfl))
    return _result(
        "square_angle_degeneracy",
        worst,
        1e-9,
        detail=f"min_dfl_spread={dfl_spread:.3e} (> 1e-3 required)",
        extra_ok=dfl_spread > 1e-3,
    )


def check_angle_codec(rng, n=1000):
    worst = 0.0
    for theta in rng.uniform(0.0, math.pi / 2, n):
        t = angle.encode_angle(float(theta))
        worst = max(worst, abs(angle.decode_angle(t.as_distribution()) - theta))
    uniform = angle.decode_angle(np.full(angle.NUM_BINS, 1.0 / angle.NUM_BINS))
    exact = uniform == math.pi / 4
    return _result("dfl_codec_round_trip", worst, 1e-12, detail=f"uniform_is_pi_over_4={exact}", extra_ok=exact)


# --- re-parameterization ----------------------------------------------------


def check_fusion(rng, sets=100):
    worst = 0.0
    plain_worst = 0.0
    for k in range(sets):
        c = (1, 4, 8)[k % 3]
        w = repfusion.random_branch_weights(rng, c, with_identity=True, with_norm=bool(k % 2))
        x = rng.uniform(-1, 1, (2, c, 6, 7))
        fused = repfusion.fuse(w)
        worst = max(worst, float(np.max(np.abs(repfusion.branch_forward(w, x) - fused(x)))))

        ungated = repfusion.RepBranchWeights(w.k3, w.b3, w.k1, w.b1, 1.0, 1.0, w.bn3, w.bn1, w.bn_id)
        fu = repfusion.fuse(ungated)
        kp, bp = oracles.plain_repvgg_fuse(w.k3, w.b3, w.k1, w.b1, w.bn3, w.bn1, w.bn_id)
        plain_worst = max(plain_worst, float(np.max(np.abs(fu.kernel - kp))), float(np.max(np.abs(fu.bias - bp))))
    return [
        _result("repvgg_fusion_equivalence", worst, 1e-5),
        _result("gated_equals_plain_fusion", plain_worst, 1e-5),
    ]


# --- assignment -------------------------------------------------------------


def random_tal_case(rng, grid_cells=8, stride=8, max_gts=3, num_classes=3):
    size = grid_cells * stride
    grid = assign.build_anchor_points(size, (stride,))
    gts = [
        RotatedBox(
            float(rng.uniform(0, size)),
            float(rng.uniform(0, size)),
            float(rng.uniform(6, 0.8 * size + 6)),
            float(rng.uniform(6, 0.8 * size + 6)),
            float(rng.uniform(0, math.pi / 2)),
        )
        for _ in range(int(rng.integers(1, max_gts + 1)))
    ]
    labels = [int(v) for v in rng.integers(0, num_classes, len(gts))]
    scores = rng.uniform(0, 1, (len(grid), num_classes))
    preds = []
    for p in grid.points:
        base = gts[int(rng.integers(len(gts)))]
        preds.append(
            RotatedBox(
                float(p[0] + rng.normal(0, 3)),
                float(p[1] + rng.normal(0, 3)),
                base.w * math.exp(float(rng.normal(0, 0.2))),
                base.h * math.exp(float(rng.normal(0, 0.2))),
                base.theta + float(rng.normal(0, 0.2)),
            )
        )
    return assign.AssignmentInput(gts, labels, scores, preds), grid


def check_tal_oracle(rng, draws=20):
    mismatches = 0
    worst = 0.0
    for _ in range(draws):
        inp, grid = random_tal_case(rng, grid_cells=int(rng.integers(2, 9)))
        topk = int(rng.integers(1, 14))
        res = assign.rotated_tal_assign(inp, grid, 1.0, 6.0, topk)
        ref_assigned, ref_soft = oracles.brute_force_tal(
            grid.points, inp.gt_boxes, inp.gt_labels, inp.pred_scores, inp.pred_boxes, 1.0, 6.0, topk
        )
        mismatches += int(np.any(np.asarray(ref_assigned) != res.assigned_gt))
        worst = max(worst, float(np.max(np.abs(np.asarray(ref_soft) - res.soft_cls_target))))
    spot = abs(float(assign.alignment_metric(0.9, 0.5, 1.0, 6.0)) - 0.9 * 0.5**6)
    return _result(
        "tal_vs_brute_force",
        max(worst, spot),
        1e-12,
        detail=f"assignment_mismatches={mismatches}",
        extra_ok=mismatches == 0,
    )


# --- NMS --------------------------------------------------------------------


def check_nms_oracle(rng, scenes=50, boxes=50):
    mismatches = 0
    not_idempotent = 0
    for _ in range(scenes):
        bs, scores, classes = random_scene(rng, boxes)
        dets = [postprocess.Detection(b, float(s), int(c)) for b, s, c in zip(bs, scores, classes)]
        thr = float(rng.uniform(0.05, 0.7))
        aware = bool(rng.integers(2))
        kept = postprocess.rotated_nms(dets, thr, aware)
        ref = oracles.brute_force_nms(bs, scores, classes, thr, aware)
        mismatches += int([dets.index(k) for k in kept] != ref)
        not_idempotent += int(postprocess.rotated_nms(kept, thr, aware) != kept)
    bad = mismatches + not_idempotent
    return _result(
        "rotated_nms_vs_brute_force",
        float(bad),
        0.0,
        detail=f"keep_set_mismatches={mismatches} idempotence_failures={not_idempotent}",
    )


# --- DOTA protocol ----------------------------------------------------------


def check_tiling(rng=None):
    problems = []
    ss = dota.plan_tiles(4000, 4000, dota.PRESETS["dota-ss"])
    offsets = {0, 768, 1536, 2304, 2976}
    if len(ss) != 25 or {(t.x0, t.y0) for t in ss} != {(x, y) for x in offsets for y in offsets}:
        problems.append("dota-ss offsets")
    ms_spec = dota.PRESETS["dota-ms"]
    ms = dota.plan_tiles(4000, 4000, ms_spec)
    if sorted({t.scale for t in ms}) != [0.5, 1.0, 1.5] or ms_spec.stride != 524:
        problems.append("dota-ms groups")
    for scale in (0.5, 1.0, 1.5):
        xs = sorted({t.x0 for t in ms if t.scale == scale})
        if xs[-1] + ms_spec.patch_size != dota.scaled_size(4000, scale):
            problems.append(f"scale {scale} clamp")
        # every step but the clamped last one is the nominal stride
        if any(b - a != 524 for a, b in zip(xs[:-2], xs[1:-1])):
            problems.append(f"scale {scale} stride")
    return _result("dota_tiling_protocol", float(len(problems)), 0.0, detail=", ".join(problems))


def _rect(cx, cy, w, h):
    return Quad.from_points(geometry.rbox_to_corners(RotatedBox(cx, cy, w, h, 0.0)))


def check_evaluator(rng=None):
    classes = ("plane",)
    gts = {"img": [dota.DotaAnnotation(_rect(50, 50, 20, 10), "plane"), dota.DotaAnnotation(_rect(200, 200, 30, 30), "plane")]}
    dets = {
        "img": [
            postprocess.Detection(RotatedBox(50, 50, 20, 10, 0.0), 0.9, 0),
            postprocess.Detection(RotatedBox(400, 400, 10, 10, 0.0), 0.8, 0),
            postprocess.Detection(RotatedBox(200, 200, 30, 30, 0.0), 0.7, 0),
        ]
    }
    ap3 = dota.evaluate_map(gts, dets, classes=classes).ap["plane"]
    err = abs(ap3 - (0.5 + 0.5 * 2 / 3))

    perfect = dota.evaluate_map(
        gts, {"img": [dets["img"][0], dets["img"][2]]}, classes=classes
    ).mAP
    err = max(err, abs(perfect - 1.0))

    hard = {"img": gts["img"] + [dota.DotaAnnotation(_rect(300, 100, 20, 20), "plane", 1)]}
    with_hard_det = {"img": dets["img"] + [postprocess.Detection(RotatedBox(300, 100, 20, 20, 0.0), 0.95, 0)]}
    rep = dota.evaluate_map(hard, with_hard_det, classes=classes)
    err = max(err, abs(rep.ap["plane"] - ap3), abs(rep.num_gt["plane"] - 2))
    return _result("evaluator_fixtures", err, 1e-6, detail=f"three_det_ap={ap3:.6f}")


CHECKS = (
    check_skew_iou_octagon,
    check_skew_iou_monte_carlo,
    check_gradients,
    check_boundary_continuity,
    check_square_degeneracy,
    check_angle_codec,
    check_fusion,
    check_tal_oracle,
    check_nms_oracle,
    check_tiling,
    check_evaluator,
)


def run_all(seed: int = 0, echo=None) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []
    for check in CHECKS:
        start = time.perf_counter()
        out = check(rng)
        elapsed = time.perf_counter() - start
        for r in out if isinstance(out, list) else [out]:
            r.seconds = elapsed
            results.append(r)
            if echo is not None:
                echo(r.line())
    return results
