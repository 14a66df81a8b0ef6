import numpy as np
import pytest

from diver.metrics import mse, psnr, ssim


class TestPsnr:
    def test_identical_images_inf(self):
        img = np.random.default_rng(0).random((16, 16, 3))
        assert psnr(img, img) == float("inf")

    def test_known_value(self):
        a = np.zeros((8, 8))
        b = np.full((8, 8), 0.1)
        assert psnr(a, b) == pytest.approx(20.0)  # -10 log10(0.01)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse(np.zeros((2, 2)), np.zeros((3, 3)))


class TestSsim:
    def test_identical_is_one(self):
        img = np.random.default_rng(1).random((32, 32, 3))
        assert ssim(img, img) == pytest.approx(1.0)

    def test_noise_lowers_ssim(self):
        rng = np.random.default_rng(2)
        img = rng.random((32, 32))
        noisy = np.clip(img + 0.3 * rng.normal(size=img.shape), 0, 1)
        s = ssim(img, noisy)
        assert 0.0 < s < 0.8

    def test_order_symmetric(self):
        rng = np.random.default_rng(3)
        a, b = rng.random((24, 24, 3)), rng.random((24, 24, 3))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_constant_shift_detected(self):
        a = np.full((32, 32), 0.4)
        b = np.full((32, 32), 0.6)
        assert ssim(a, b) < 1.0
        assert ssim(a, a) == pytest.approx(1.0)
