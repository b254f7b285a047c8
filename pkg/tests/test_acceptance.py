"""Acceptance criteria, one test each, at the stated tolerances.

Each test prints a single ``ACCEPT PASS|FAIL`` line (shown even without
``-s``) before asserting.
"""

import math
import time

import numpy as np
import pytest

from rotdet import angle, assign, dota, gaussian, geometry, oracles, postprocess, repfusion
from rotdet.cli import main
from rotdet.geometry import Quad, RotatedBox
from rotdet.sampling import perturb_box, random_box, random_pair, random_scene
from rotdet.selfcheck import random_tal_case


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPT {'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return ok

    return emit


def test_skew_iou_oracle(report):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        gt = random_box(rng)
        pred = perturb_box(rng, gt, float(rng.choice([0.1, 0.3, 0.6])))
        est = oracles.monte_carlo_iou(pred, gt, 1_000_000, rng)
        worst = max(worst, abs(geometry.skew_iou(pred, gt) - est))
    elapsed = time.perf_counter() - start
    square = RotatedBox(0, 0, 1, 1, 0)
    octagon_err = abs(geometry.skew_iou(square, RotatedBox(0, 0, 1, 1, math.pi / 4)) - 1 / math.sqrt(2))
    ok = worst <= 5e-3 and octagon_err <= 1e-9 and elapsed < 60
    assert report(
        "skew_iou_oracle", ok, f"mc_max_err={worst:.2e} (<=5e-3) octagon_err={octagon_err:.1e} (<=1e-9) time={elapsed:.1f}s (<60s)"
    )


def test_gradient_checks(report):
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst = {}
    for name in ("probiou_loss", "kld_loss"):
        fn = getattr(gaussian, name)
        errs = []
        for _ in range(200):
            pred, gt = random_pair(rng)
            numeric = oracles.central_difference(lambda x: fn(RotatedBox.from_array(x), gt).value, pred.as_array(), 1e-5)
            errs.append(oracles.relative_error(fn(pred, gt).grad, numeric))
        worst[name] = max(errs)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-4 and elapsed < 10
    detail = " ".join(f"{k}={v:.2e}" for k, v in worst.items())
    assert report("gradient_checks", ok, f"{detail} (<=1e-4) time={elapsed:.2f}s (<10s)")


def test_boundary_continuity(report):
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(100):
        pred, gt = random_pair(rng)
        exchanged = RotatedBox(gt.cx, gt.cy, gt.h, gt.w, gt.theta + math.pi / 2)
        worst = max(worst, abs(gaussian.probiou_loss(pred, gt).value - gaussian.probiou_loss(pred, exchanged).value))
    assert report("boundary_continuity", worst <= 1e-9, f"max_diff={worst:.2e} (<=1e-9)")


def test_square_angle_degeneracy(report):
    rng = np.random.default_rng(404)
    thetas = np.linspace(0, math.pi / 2 - 0.05, 9)
    probiou_spread, dfl_spread = 0.0, math.inf
    for _ in range(20):
        side = float(rng.uniform(5, 50))
        pred = perturb_box(rng, RotatedBox(3.0, -2.0, side, side, 0.0))
        vals = [gaussian.probiou_loss(pred, RotatedBox(3.0, -2.0, side, side, float(t))).value for t in thetas]
        probiou_spread = max(probiou_spread, max(vals) - min(vals))
        logits = rng.normal(size=angle.NUM_BINS)
        dfl = [angle.dfl_loss(logits, angle.encode_angle(float(t))).value for t in thetas]
        dfl_spread = min(dfl_spread, max(dfl) - min(dfl))
    ok = probiou_spread <= 1e-9 and dfl_spread > 1e-6
    assert report(
        "square_angle_degeneracy", ok, f"probiou_spread={probiou_spread:.2e} (<=1e-9) min_dfl_spread={dfl_spread:.3f} (>0)"
    )


def test_angle_codec(report):
    rng = np.random.default_rng(505)
    worst = max(
        abs(angle.decode_angle(angle.encode_angle(float(t)).as_distribution()) - t) for t in rng.uniform(0, math.pi / 2, 1000)
    )
    uniform_exact = angle.decode_angle(np.full(angle.NUM_BINS, 1 / angle.NUM_BINS)) == math.pi / 4
    ok = worst <= 1e-12 and uniform_exact
    assert report("angle_codec", ok, f"round_trip_max_err={worst:.1e} (<=1e-12) uniform_is_pi_over_4={uniform_exact}")


def test_reparameterization(report):
    rng = np.random.default_rng(606)
    start = time.perf_counter()
    worst = {False: 0.0, True: 0.0}
    plain_worst = 0.0
    for k in range(100):
        c = (1, 4, 8)[k % 3]
        norm = bool(k % 2)
        w = repfusion.random_branch_weights(rng, c, with_identity=True, with_norm=norm)
        x = rng.uniform(-1, 1, (2, c, 7, 6))
        fused = repfusion.fuse(w)
        diff = np.max(np.abs(repfusion.branch_forward(w, x) - repfusion.conv2d_direct(fused.kernel, fused.bias, x)))
        worst[norm] = max(worst[norm], float(diff))
        ungated = repfusion.RepBranchWeights(w.k3, w.b3, w.k1, w.b1, 1.0, 1.0, w.bn3, w.bn1, w.bn_id)
        fu = repfusion.fuse(ungated)
        kp, bp = oracles.plain_repvgg_fuse(w.k3, w.b3, w.k1, w.b1, w.bn3, w.bn1, w.bn_id)
        plain_worst = max(plain_worst, float(np.max(np.abs(fu.kernel - kp))), float(np.max(np.abs(fu.bias - bp))))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-5 and plain_worst <= 1e-5 and elapsed < 30
    assert report(
        "reparameterization",
        ok,
        f"no_norm={worst[False]:.1e} with_norm={worst[True]:.1e} plain_fusion={plain_worst:.1e} (<=1e-5) time={elapsed:.2f}s (<30s)",
    )


def test_assignment(report):
    rng = np.random.default_rng(707)
    mismatches, soft_err = 0, 0.0
    for _ in range(20):
        inp, grid = random_tal_case(rng, grid_cells=int(rng.integers(1, 9)), max_gts=3)
        topk = int(rng.integers(1, 14))
        res = assign.rotated_tal_assign(inp, grid, 1.0, 6.0, topk)
        ref_a, ref_s = oracles.brute_force_tal(
            grid.points, inp.gt_boxes, inp.gt_labels, inp.pred_scores, inp.pred_boxes, 1.0, 6.0, topk
        )
        mismatches += int(res.assigned_gt.tolist() != list(ref_a))
        soft_err = max(soft_err, float(np.max(np.abs(res.soft_cls_target - np.asarray(ref_s)))))
    spots = [(0.9, 0.5), (1.0, 1.0), (0.3, 0.77), (0.05, 0.99)]
    spot_err = max(abs(float(assign.alignment_metric(s, m, 1.0, 6.0)) - s * m**6) for s, m in spots)
    spot_err = max(spot_err, abs(float(assign.alignment_metric(0.9, 0.5)) - 0.0140625))
    ok = mismatches == 0 and soft_err <= 1e-12 and spot_err <= 1e-12
    assert report("tal_assignment", ok, f"oracle_mismatches={mismatches} soft_err={soft_err:.1e} spot_err={spot_err:.1e} (<=1e-12)")


def test_rotated_nms(report):
    rng = np.random.default_rng(808)
    mismatches = not_idempotent = 0
    for _ in range(50):
        boxes, scores, classes = random_scene(rng, 50)
        dets = [postprocess.Detection(b, float(s), int(c)) for b, s, c in zip(boxes, scores, classes)]
        thr = float(rng.uniform(0.05, 0.7))
        aware = bool(rng.integers(2))
        kept = postprocess.rotated_nms(dets, thr, aware)
        mismatches += int([dets.index(k) for k in kept] != oracles.brute_force_nms(boxes, scores, classes, thr, aware))
        not_idempotent += int(postprocess.rotated_nms(kept, thr, aware) != kept)
    ok = mismatches == 0 and not_idempotent == 0
    assert report("rotated_nms", ok, f"keep_set_mismatches={mismatches}/50 idempotence_failures={not_idempotent}/50")


def test_tiling_protocol(report):
    ss = dota.plan_tiles(4000, 4000, dota.PRESETS["dota-ss"])
    offsets = {0, 768, 1536, 2304, 2976}
    ss_ok = len(ss) == 25 and {(t.x0, t.y0) for t in ss} == {(x, y) for x in offsets for y in offsets}
    ms_spec = dota.PRESETS["dota-ms"]
    ms = dota.plan_tiles(4000, 4000, ms_spec)
    groups = sorted({t.scale for t in ms})
    strides_ok = True
    for scale in groups:
        xs = sorted({t.x0 for t in ms if t.scale == scale})
        strides_ok &= all(b - a == 524 for a, b in zip(xs[:-2], xs[1:-1]))
        strides_ok &= xs[-1] + 1024 == dota.scaled_size(4000, scale)
    ok = ss_ok and groups == [0.5, 1.0, 1.5] and ms_spec.stride == 524 and strides_ok
    assert report("tiling_protocol", ok, f"dota-ss tiles={len(ss)} offsets_ok={ss_ok}; dota-ms groups={groups} stride={ms_spec.stride}")


def _rect(cx, cy, w, h, difficulty=0):
    quad = Quad.from_points(geometry.rbox_to_corners(RotatedBox(cx, cy, w, h, 0.0)))
    return dota.DotaAnnotation(quad, "plane", difficulty)


def _det(cx, cy, w, h, score):
    return postprocess.Detection(RotatedBox(cx, cy, w, h, 0.0), score, 0)


def test_evaluator(report):
    classes = ("plane",)
    gts = {"img": [_rect(50, 50, 20, 10), _rect(200, 200, 30, 30)]}
    dets = {"img": [_det(50, 50, 20, 10, 0.9), _det(400, 400, 10, 10, 0.8), _det(200, 200, 30, 30, 0.7)]}
    ap3 = dota.evaluate_map(gts, dets, classes=classes).ap["plane"]
    perfect = dota.evaluate_map(gts, {"img": [dets["img"][0], dets["img"][2]]}, classes=classes).mAP

    hard_gts = {"img": gts["img"] + [_rect(300, 100, 20, 20, difficulty=1)]}
    hard_dets = {"img": dets["img"] + [_det(300, 100, 20, 20, 0.95)]}
    hard = dota.evaluate_map(hard_gts, hard_dets, classes=classes)
    # a detection on a difficult gt is neither TP nor FP: the PR curve is unchanged
    pr_same = np.array_equal(hard.precision["plane"], [1.0, 0.5, 2 / 3])
    ok = abs(ap3 - 0.8333) <= 1e-4 + 1e-6 and abs(ap3 - 5 / 6) <= 1e-6 and perfect == 1.0
    ok = ok and hard.num_gt["plane"] == 2 and hard.ap["plane"] == ap3 and pr_same
    assert report(
        "evaluator", ok, f"three_det_ap={ap3:.6f} perfect_mAP={perfect} difficult_gt_total={hard.num_gt['plane']} difficult_ap={hard.ap['plane']:.6f}"
    )


def test_selfcheck_command(report, capsys):
    start = time.perf_counter()
    code = main(["selfcheck"])
    elapsed = time.perf_counter() - start
    summary = [line for line in capsys.readouterr().out.splitlines() if "checks passed" in line]
    ok = code == 0 and elapsed < 300
    assert report("selfcheck_command", ok, f"exit={code} {summary[-1] if summary else ''} wall={elapsed:.1f}s (<300s)")
