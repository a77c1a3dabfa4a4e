import numpy as np
import pytest

from metareweight.losses import (LossKind, ce_loss, grad_logits_batch, loss_grad_logits,
                                 loss_value, loss_values_batch, mae_loss, softmax,
                                 symmetry_sum)
from metareweight.numkit import Rng


def random_simplex(rng: Rng, k: int) -> np.ndarray:
    raw = -np.log(rng.uniforms(k))
    return raw / raw.sum()


class TestCeLoss:
    def test_one_hot_is_zero(self):
        u = np.zeros(4)
        u[2] = 1.0
        assert ce_loss(2, u) == 0.0

    def test_uniform_is_log_k(self):
        assert ce_loss(0, [0.2] * 5) == pytest.approx(np.log(5), abs=1e-12)

    def test_half_is_log_two(self):
        assert ce_loss(0, [0.5, 0.5]) == pytest.approx(np.log(2), abs=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            ce_loss(5, [0.2] * 5)

    def test_zero_probability_clamped(self):
        u = np.zeros(3)
        u[0] = 1.0
        assert ce_loss(1, u) == pytest.approx(-np.log(1e-12))

    def test_nonnegative(self):
        rng = Rng(1)
        for _ in range(100):
            u = random_simplex(rng, 5)
            assert ce_loss(rng.randint(5), u) >= 0.0


class TestMaeLoss:
    def test_one_hot_is_zero(self):
        u = np.zeros(4)
        u[1] = 1.0
        assert mae_loss(1, u) == 0.0

    def test_uniform_value(self):
        assert mae_loss(0, [0.2] * 5) == pytest.approx(1.6, abs=1e-12)

    def test_closed_form_identity(self):
        rng = Rng(2)
        for _ in range(100):
            u = random_simplex(rng, 6)
            label = rng.randint(6)
            assert mae_loss(label, u) == pytest.approx(2.0 * (1.0 - u[label]), abs=1e-12)

    def test_bounded(self):
        rng = Rng(3)
        for _ in range(200):
            u = random_simplex(rng, 4)
            assert 0.0 <= mae_loss(rng.randint(4), u) <= 2.0


class TestSymmetrySum:
    @pytest.mark.parametrize("k", [2, 3, 5, 10])
    def test_mae_is_constant(self, k):
        rng = Rng(k)
        for _ in range(1000):
            u = random_simplex(rng, k)
            assert abs(symmetry_sum(LossKind.MAE, u) - (2 * k - 2)) <= 1e-12

    def test_mae_two_random_points_agree(self):
        rng = Rng(9)
        a = symmetry_sum(LossKind.MAE, random_simplex(rng, 10))
        b = symmetry_sum(LossKind.MAE, random_simplex(rng, 10))
        assert a == pytest.approx(18.0, abs=1e-12)
        assert abs(a - b) < 1e-12

    def test_ce_is_not_constant(self):
        uniform = symmetry_sum(LossKind.CE, [0.2] * 5)
        assert uniform == pytest.approx(5 * np.log(5), abs=1e-9)
        spiky = symmetry_sum(LossKind.CE, [0.9, 0.025, 0.025, 0.025, 0.025])
        assert spiky > uniform
        assert abs(spiky - uniform) > 0.1

    def test_ce_witness_within_ten_draws(self):
        rng = Rng(77)
        sums = [symmetry_sum(LossKind.CE, random_simplex(rng, 5)) for _ in range(10)]
        assert max(sums) - min(sums) > 0.1


class TestLossGradLogits:
    def test_ce_zero_logits_closed_form(self):
        g = loss_grad_logits(LossKind.CE, 0, np.zeros(5))
        assert np.allclose(g, [0.2 - 1.0, 0.2, 0.2, 0.2, 0.2], atol=1e-12)

    @pytest.mark.parametrize("kind", list(LossKind))
    def test_gradient_sums_to_zero(self, kind):
        rng = Rng(4)
        for _ in range(50):
            z = rng.gaussians(6, 0.0, 2.0)
            g = loss_grad_logits(kind, rng.randint(6), z)
            assert abs(g.sum()) < 1e-10

    @pytest.mark.parametrize("kind", list(LossKind))
    @pytest.mark.parametrize("k", [2, 5, 10])
    def test_matches_finite_differences(self, kind, k):
        rng = Rng(10 * k)
        step = 1e-6
        for _ in range(34):  # ~100 (z, label) pairs across the K grid
            z = rng.gaussians(k, 0.0, 2.0)
            label = rng.randint(k)
            g = loss_grad_logits(kind, label, z)
            fd = np.empty(k)
            for i in range(k):
                zp, zm = z.copy(), z.copy()
                zp[i] += step
                zm[i] -= step
                fd[i] = (loss_value(kind, label, softmax(zp))
                         - loss_value(kind, label, softmax(zm))) / (2 * step)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))


class TestBatchedForms:
    @pytest.mark.parametrize("kind", list(LossKind))
    def test_batch_matches_scalar(self, kind):
        rng = Rng(21)
        z = rng.gaussians(8 * 5).reshape(8, 5)
        labels = rng.randints(8, 5)
        probs = np.stack([softmax(row) for row in z])
        vals = loss_values_batch(kind, labels, probs)
        grads = grad_logits_batch(kind, labels, probs)
        for i in range(8):
            assert vals[i] == pytest.approx(loss_value(kind, labels[i], probs[i]), abs=1e-12)
            assert np.allclose(grads[i], loss_grad_logits(kind, labels[i], z[i]), atol=1e-12)
