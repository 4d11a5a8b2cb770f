import numpy as np
import pytest

from urbansplat import losses


def fd_check(fn, x, rng, n_checks=12, h=1e-6, tol=1e-4):
    """Central-difference the scalar loss against its returned gradient."""
    _, grad = fn(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    idxs = rng.choice(flat.size, min(n_checks, flat.size), replace=False)
    for i in idxs:
        orig = flat[i]
        flat[i] = orig + h
        lp = fn(x)[0]
        flat[i] = orig - h
        lm = fn(x)[0]
        flat[i] = orig
        fd = (lp - lm) / (2.0 * h)
        assert abs(fd - g[i]) <= tol * max(abs(fd), abs(g[i]), 1.0), \
            f"entry {i}: fd {fd:.6e} vs grad {g[i]:.6e}"


class TestL1:
    def test_value(self):
        pred = np.array([[1.0, 2.0], [3.0, 4.0]])
        target = np.array([[1.5, 2.0], [2.0, 6.0]])
        value, grad = losses.l1_loss(pred, target)
        assert value == pytest.approx((0.5 + 0.0 + 1.0 + 2.0) / 4.0)
        np.testing.assert_array_equal(
            grad, np.array([[-1.0, 0.0], [1.0, -1.0]]) / 4.0)

    def test_grad_fd(self):
        rng = np.random.default_rng(0)
        pred = rng.uniform(size=(9, 7, 3))
        target = rng.uniform(size=(9, 7, 3))
        fd_check(lambda x: losses.l1_loss(x, target), pred, rng)


class TestSsim:
    def test_identical_images_score_one(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(size=(16, 14, 3))
        value, grad = losses.ssim(img, img.copy())
        assert value == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(grad, 0.0, atol=1e-9)

    def test_bounded(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(size=(12, 12))
        b = rng.uniform(size=(12, 12))
        value, _ = losses.ssim(a, b)
        assert -1.0 <= value <= 1.0
        value_ab, _ = losses.ssim(a, b)
        value_ba, _ = losses.ssim(b, a)
        assert value_ab == pytest.approx(value_ba, abs=1e-12)

    def test_constant_images_closed_form(self):
        # constants make every windowed moment a multiple of the window
        # mass m: mu = a m, var = a^2 m (1 - m), cov = a b m (1 - m), so
        # per-pixel SSIM has a closed form, including the zero-pad border
        a, b = 0.3, 0.7
        H, W = 25, 31
        k = np.exp(-(np.arange(-5, 6) ** 2) / (2.0 * 1.5 ** 2))
        k /= k.sum()
        mass_r = np.convolve(np.ones(H), k, mode="same")
        mass_c = np.convolve(np.ones(W), k, mode="same")
        m = np.outer(mass_r, mass_c)
        c1, c2 = losses.SSIM_C1, losses.SSIM_C2
        per_px = ((2 * a * b * m * m + c1) * (2 * a * b * m * (1 - m) + c2)) / (
            ((a * a + b * b) * m * m + c1)
            * ((a * a + b * b) * m * (1 - m) + c2))
        value, _ = losses.ssim(np.full((H, W), a), np.full((H, W), b))
        assert value == pytest.approx(per_px.mean(), abs=1e-12)

    def test_grad_fd(self):
        rng = np.random.default_rng(3)
        pred = rng.uniform(size=(14, 11, 3))
        target = rng.uniform(size=(14, 11, 3))
        fd_check(lambda x: losses.ssim(x, target), pred, rng, tol=1e-3)


class TestColorLoss:
    def test_zero_at_target(self):
        rng = np.random.default_rng(4)
        img = rng.uniform(size=(10, 10, 3))
        value, _ = losses.color_loss(img, img.copy())
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_mix_weight(self):
        rng = np.random.default_rng(5)
        pred = rng.uniform(size=(12, 10, 3))
        target = rng.uniform(size=(12, 10, 3))
        v1, _ = losses.l1_loss(pred, target)
        vs, _ = losses.ssim(pred, target)
        value, _ = losses.color_loss(pred, target, ssim_weight=0.2)
        assert value == pytest.approx(0.8 * v1 + 0.2 * (1.0 - vs), abs=1e-12)

    def test_grad_fd(self):
        rng = np.random.default_rng(6)
        pred = rng.uniform(size=(12, 10, 3))
        target = rng.uniform(size=(12, 10, 3))
        fd_check(lambda x: losses.color_loss(x, target), pred, rng, tol=1e-3)


class TestDepthLoss:
    def test_trims_worst_errors(self):
        # 20 supervised pixels, keep floor(0.95*20+0.5)=19: the single
        # largest error must not contribute value or gradient
        pred = np.zeros((4, 5))
        lidar = np.zeros((4, 5))
        lidar[0, 0] = -100.0  # giant outlier error at pixel 0
        lidar[1, 1] = -1.0
        mask = np.ones((4, 5), dtype=bool)
        value, grad = losses.depth_loss(pred, lidar, mask)
        assert value == pytest.approx(1.0 / 19.0)
        assert grad[0, 0] == 0.0
        assert grad[1, 1] == pytest.approx(1.0 / 19.0)

    def test_unmasked_pixels_ignored(self):
        pred = np.full((3, 3), 5.0)
        lidar = np.zeros((3, 3))
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 1] = True
        value, grad = losses.depth_loss(pred, lidar, mask)
        assert value == pytest.approx(5.0)
        assert np.count_nonzero(grad) == 1

    def test_empty_mask(self):
        value, grad = losses.depth_loss(np.ones((2, 2)), np.zeros((2, 2)),
                                        np.zeros((2, 2), dtype=bool))
        assert value == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_grad_fd(self):
        rng = np.random.default_rng(7)
        pred = rng.uniform(1.0, 10.0, size=(8, 9))
        lidar = pred + rng.normal(0.0, 0.5, size=(8, 9))
        mask = rng.uniform(size=(8, 9)) < 0.6
        fd_check(lambda x: losses.depth_loss(x, lidar, mask), pred, rng,
                 h=1e-7)


class TestSkyLoss:
    def test_perfect_separation_is_tiny(self):
        opacity = np.array([[0.0, 1.0], [1.0, 0.0]])
        sky = np.array([[1.0, 0.0], [0.0, 1.0]])
        value, grad = losses.sky_loss(opacity, sky)
        assert value < 1e-5
        np.testing.assert_array_equal(grad, 0.0)  # clamped pixels: no grad

    def test_wrong_side_is_large(self):
        opacity = np.array([[1.0 - 1e-6]])
        sky = np.array([[1.0]])
        value, _ = losses.sky_loss(opacity, sky)
        assert value > 10.0

    def test_grad_fd(self):
        rng = np.random.default_rng(8)
        opacity = rng.uniform(0.05, 0.95, size=(7, 9))
        sky = (rng.uniform(size=(7, 9)) < 0.4).astype(np.float64)
        fd_check(lambda x: losses.sky_loss(x, sky), opacity, rng)


class TestSemanticLoss:
    def test_uniform_logits_give_log_m(self):
        M = 5
        logits = np.zeros((6, 4, M))
        labels = np.random.default_rng(9).integers(0, M, size=(6, 4))
        value, _ = losses.semantic_loss(logits, labels)
        assert value == pytest.approx(np.log(M))

    def test_grad_rows_sum_to_zero(self):
        rng = np.random.default_rng(10)
        logits = rng.normal(size=(5, 6, 4))
        labels = rng.integers(0, 4, size=(5, 6))
        _, grad = losses.semantic_loss(logits, labels)
        np.testing.assert_allclose(grad.sum(axis=-1), 0.0, atol=1e-12)

    def test_ignore_index(self):
        rng = np.random.default_rng(11)
        logits = rng.normal(size=(4, 4, 3))
        labels = np.full((4, 4), -1)
        labels[0, 0] = 1
        value, grad = losses.semantic_loss(logits, labels)
        assert np.count_nonzero(np.any(grad != 0.0, axis=-1)) == 1
        all_ignored = losses.semantic_loss(logits, np.full((4, 4), -1))
        assert all_ignored[0] == 0.0

    def test_grad_fd(self):
        rng = np.random.default_rng(12)
        logits = rng.normal(size=(6, 5, 4))
        labels = rng.integers(0, 4, size=(6, 5))
        fd_check(lambda x: losses.semantic_loss(x, labels), logits, rng)


class TestOpacityEntropy:
    def test_half_is_log_two(self):
        value, grad = losses.opacity_entropy(np.full(10, 0.5))
        assert value == pytest.approx(np.log(2.0))
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_empty(self):
        value, grad = losses.opacity_entropy(np.zeros(0))
        assert value == 0.0 and grad.size == 0

    def test_grad_fd(self):
        rng = np.random.default_rng(13)
        o = rng.uniform(0.05, 0.95, size=40)
        fd_check(losses.opacity_entropy, o, rng)
