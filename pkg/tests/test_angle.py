import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rotdet.angle import (
    BIN_WIDTH,
    NUM_BINS,
    decode_angle,
    decode_logits,
    dfl_loss,
    dfl_loss_batch,
    encode_angle,
    joint_box_loss,
    softmax,
)
from rotdet.geometry import RotatedBox
from rotdet.oracles import central_difference, relative_error


def one_hot(i):
    p = np.zeros(NUM_BINS)
    p[i] = 1.0
    return p


class TestDecode:
    def test_one_hot(self):
        assert decode_angle(one_hot(30)) == pytest.approx(math.pi / 6, abs=1e-15)

    def test_symmetric_pair(self):
        p = np.zeros(NUM_BINS)
        p[29] = p[31] = 0.5
        assert decode_angle(p) == pytest.approx(math.pi / 6, abs=1e-15)

    def test_uniform_is_exact(self):
        assert decode_angle(np.full(NUM_BINS, 1 / NUM_BINS)) == math.pi / 4
        assert decode_logits(np.zeros(NUM_BINS)) == math.pi / 4

    def test_batch(self, rng):
        p = softmax(rng.normal(size=(7, NUM_BINS)))
        np.testing.assert_allclose(decode_angle(p), [decode_angle(row) for row in p], atol=1e-15)

    def test_range(self, rng):
        for _ in range(100):
            theta = decode_angle(softmax(rng.normal(0, 3, NUM_BINS)))
            assert 0 <= theta <= math.pi / 2

    @pytest.mark.parametrize(
        "bad",
        [np.full(NUM_BINS, 0.02), np.full(90, 1 / 90), -one_hot(3) + 2 * one_hot(4)],
    )
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            decode_angle(bad)

    def test_linearity(self, rng):
        for _ in range(50):
            p = softmax(rng.normal(size=NUM_BINS))
            q = softmax(rng.normal(size=NUM_BINS))
            lam = float(rng.uniform())
            mixed = decode_angle(lam * p + (1 - lam) * q)
            assert mixed == pytest.approx(lam * decode_angle(p) + (1 - lam) * decode_angle(q), abs=1e-13)


class TestEncode:
    def test_exact_bin(self):
        t = encode_angle(30 * BIN_WIDTH)
        assert (t.left_bin, t.left_weight) == (30, 1.0)

    def test_interpolated(self):
        t = encode_angle(45.3 * BIN_WIDTH)
        assert (t.left_bin, t.right_bin) == (45, 46)
        assert t.left_weight == pytest.approx(0.7, abs=1e-12)
        assert t.right_weight == pytest.approx(0.3, abs=1e-12)

    def test_upper_endpoint(self):
        t = encode_angle(math.pi / 2)
        dist = t.as_distribution()
        assert dist[90] == 1.0 and dist.sum() == 1.0

    def test_zero(self):
        assert encode_angle(0.0).as_distribution()[0] == 1.0

    @pytest.mark.parametrize("theta", [-1e-6, math.pi / 2 + 1e-6, math.nan])
    def test_out_of_range(self, theta):
        with pytest.raises(ValueError):
            encode_angle(theta)

    @given(st.floats(0, math.pi / 2))
    def test_invariants(self, theta):
        t = encode_angle(theta)
        assert t.right_bin in (t.left_bin, t.left_bin + 1)
        assert t.left_weight >= 0 and t.right_weight >= 0
        assert t.left_weight + t.right_weight == pytest.approx(1.0, abs=1e-15)
        assert t.left_bin * BIN_WIDTH <= theta + 1e-12
        assert theta <= t.right_bin * BIN_WIDTH + 1e-12

    def test_round_trip(self, rng):
        for theta in rng.uniform(0, math.pi / 2, 1000):
            assert abs(decode_angle(encode_angle(theta).as_distribution()) - theta) <= 1e-12


class TestDFL:
    def test_perfect_prediction(self):
        logits = np.full(NUM_BINS, -50.0)
        logits[30] = 50.0
        assert dfl_loss(logits, encode_angle(30 * BIN_WIDTH)).value < 1e-30

    def test_uniform_logits(self):
        r = dfl_loss(np.zeros(NUM_BINS), encode_angle(30 * BIN_WIDTH))
        assert r.value == pytest.approx(-math.log(1 / 91), abs=1e-12)
        assert r.value == pytest.approx(4.5109, abs=1e-4)

    def test_gradient_fd(self, rng):
        for _ in range(50):
            logits = rng.normal(0, 2, NUM_BINS)
            target = encode_angle(float(rng.uniform(0, math.pi / 2)))
            numeric = central_difference(lambda z: dfl_loss(z, target).value, logits, 1e-5)
            assert relative_error(dfl_loss(logits, target).grad, numeric, floor=1e-6) <= 1e-4

    def test_minimized_at_target(self, rng):
        for _ in range(5):
            target = encode_angle(float(rng.uniform(0, math.pi / 2)))
            logits = rng.normal(size=NUM_BINS)
            for _ in range(20000):
                logits -= 1.0 * dfl_loss(logits, target).grad
            np.testing.assert_allclose(softmax(logits), target.as_distribution(), atol=5e-3)
            # cross-entropy bottoms out at the entropy of the target
            w = np.array([target.left_weight, target.right_weight])
            w = w[w > 0]
            assert dfl_loss(logits, target).value == pytest.approx(-np.sum(w * np.log(w)), abs=5e-3)

    def test_batch_mean(self, rng):
        logits = rng.normal(size=(4, NUM_BINS))
        targets = [encode_angle(float(t)) for t in rng.uniform(0, 1.5, 4)]
        r = dfl_loss_batch(logits, targets)
        assert r.value == pytest.approx(np.mean([dfl_loss(z, t).value for z, t in zip(logits, targets)]))
        assert r.grad.shape == logits.shape
        assert dfl_loss_batch(np.zeros((0, NUM_BINS)), []).value == 0.0

    def test_square_gt_angle_is_observable(self, rng):
        logits = rng.normal(size=NUM_BINS)
        vals = {round(dfl_loss(logits, encode_angle(t)).value, 9) for t in (0.0, 0.3, 0.9, 1.4)}
        assert len(vals) == 4


def test_joint_loss_weights(rng):
    gt = RotatedBox(10, 10, 30, 12, 0.4)
    pred = RotatedBox(12, 9, 28, 13, 0.5)
    logits = rng.normal(size=NUM_BINS)
    total, gbox, glog = joint_box_loss(pred, gt, logits, 2.0, 0.5)
    from rotdet.gaussian import probiou_loss

    expected = 2.0 * probiou_loss(pred, gt).value + 0.5 * dfl_loss(logits, encode_angle(0.4)).value
    assert total == pytest.approx(expected)
    assert gbox.shape == (5,) and glog.shape == (NUM_BINS,)
