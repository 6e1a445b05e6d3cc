"""
metrics 단위 테스트

PSNR/SSIM 정의, SSIM 및 결합 손실의 해석적 기울기, mean±std 집계
"""
import math

import numpy as np
import pytest

from errors import DataError, ShapeError
from layers.gradcheck import max_relative_error, numerical_gradient
from metrics import (
    DEFAULT_SSIM,
    IDENTICAL,
    MetricsRecord,
    SliceMetrics,
    SsimConfig,
    aggregate,
    combined_loss,
    combined_loss_grad,
    evaluate_pair,
    format_mean_std,
    psnr,
    ssim,
    ssim_grad,
    ssim_map,
)


GRADCHECK_SEEDS = range(20)


def random_pair(seed, size=16):
    rng = np.random.default_rng(seed)
    target = rng.uniform(0, 255, (size, size))
    pred = np.clip(target + rng.normal(0, 20, (size, size)), 0, None)
    return pred, target


def brute_force_ssim_map(f, g, cfg):
    """창 위치마다 가중 통계를 직접 계산"""
    w = cfg.window
    k = cfg.window_size
    out = np.empty((f.shape[0] - k + 1, f.shape[1] - k + 1))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            pf, pg = f[i:i + k, j:j + k], g[i:i + k, j:j + k]
            mu_f, mu_g = np.sum(w * pf), np.sum(w * pg)
            var_f = np.sum(w * pf * pf) - mu_f ** 2
            var_g = np.sum(w * pg * pg) - mu_g ** 2
            cov = np.sum(w * pf * pg) - mu_f * mu_g
            out[i, j] = ((2 * mu_f * mu_g + cfg.c1) * (2 * cov + cfg.c2)
                         / ((mu_f ** 2 + mu_g ** 2 + cfg.c1) * (var_f + var_g + cfg.c2)))
    return out


class TestPsnr:
    """PSNR 테스트"""

    def test_known_value(self):
        """MSE = 1 이면 20·log₁₀(255)"""
        assert psnr(np.zeros((4, 4)), np.ones((4, 4))) == pytest.approx(20 * math.log10(255))

    def test_identical(self):
        """MSE = 0 이면 identical 표시"""
        img = np.random.default_rng(0).uniform(0, 255, (5, 5))
        assert psnr(img, img.copy()) == IDENTICAL

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))


class TestSsim:
    """SSIM 테스트"""

    def test_self_similarity_is_one(self):
        """ssim(f, f) = 1"""
        f = np.random.default_rng(1).uniform(0, 255, (20, 20))
        assert ssim(f, f) == pytest.approx(1.0, abs=1e-12)

    def test_constants(self):
        """C1 = (0.01·255)², C2 = (0.03·255)², 창 합 = 1"""
        assert DEFAULT_SSIM.c1 == pytest.approx(6.5025)
        assert DEFAULT_SSIM.c2 == pytest.approx(58.5225)
        assert DEFAULT_SSIM.window.shape == (11, 11)
        assert DEFAULT_SSIM.window.sum() == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_brute_force(self, seed):
        """32×32 쌍에서 벡터화 구현과 창별 직접 계산이 1e-10 이내로 일치"""
        f, g = random_pair(seed, size=32)
        np.testing.assert_allclose(ssim_map(f, g), brute_force_ssim_map(f, g, DEFAULT_SSIM), rtol=0, atol=1e-10)

    def test_symmetric_and_bounded(self):
        f, g = random_pair(3)
        assert ssim(f, g) == pytest.approx(ssim(g, f), rel=1e-12)
        assert -1.0 <= ssim(f, g) < 1.0

    def test_image_smaller_than_window(self):
        """창보다 작은 영상은 ShapeError"""
        with pytest.raises(ShapeError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_invalid_window(self):
        with pytest.raises(ValueError):
            SsimConfig(window_size=10)

    @pytest.mark.parametrize("seed", GRADCHECK_SEEDS)
    def test_gradient(self, seed):
        """해석적 ∇_f SSIM 과 중앙 차분 비교"""
        f, g = random_pair(seed, size=14)
        value, grad = ssim_grad(f, g)
        assert value == pytest.approx(ssim(f, g), rel=1e-12)
        numeric = numerical_gradient(lambda: ssim(f, g), f, h=1e-4)
        assert max_relative_error(grad, numeric) < 1e-4

    def test_gradient_small_window(self):
        """창 크기를 바꿔도 기울기 식 유지"""
        cfg = SsimConfig(window_size=5, window_sigma=1.0)
        f, g = random_pair(9, size=9)
        _, grad = ssim_grad(f, g, cfg)
        numeric = numerical_gradient(lambda: ssim(f, g, cfg), f, h=1e-4)
        assert max_relative_error(grad, numeric) < 1e-4


class TestCombinedLoss:
    """결합 손실 테스트"""

    def test_zero_at_target(self):
        """pred = target 이면 손실 0"""
        _, target = random_pair(0)
        assert combined_loss(target.copy(), target, form="product") == 0.0
        assert combined_loss(target.copy(), target, form="sum") == pytest.approx(0.0, abs=1e-12)

    def test_product_form_value(self):
        """L = ‖pred − target‖² · (1 − SSIM)"""
        pred, target = random_pair(4)
        expected = np.sum((pred - target) ** 2) * (1 - ssim(pred, target))
        assert combined_loss(pred, target, form="product") == pytest.approx(expected, rel=1e-12)

    def test_sum_form_value(self):
        pred, target = random_pair(5)
        expected = np.sum((pred - target) ** 2) + 2.0 * (1 - ssim(pred, target))
        assert combined_loss(pred, target, form="sum", ssim_weight=2.0) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("seed", GRADCHECK_SEEDS)
    @pytest.mark.parametrize("form", ["product", "sum"])
    def test_gradient(self, form, seed):
        """곱의 미분법으로 구한 기울기와 중앙 차분 비교"""
        pred, target = random_pair(100 + seed, size=13)
        _, grad = combined_loss_grad(pred, target, form=form)
        numeric = numerical_gradient(lambda: combined_loss(pred, target, form=form), pred, h=1e-4)
        assert max_relative_error(grad, numeric) < 1e-4

    def test_unknown_form(self):
        pred, target = random_pair(7)
        with pytest.raises(ValueError):
            combined_loss(pred, target, form="ratio")


class TestAggregate:
    """집계 테스트"""

    def test_sample_std(self):
        """표본 표준편차 (n−1)"""
        assert aggregate([1.0, 2.0, 3.0]) == (2.0, 1.0)

    def test_single_value(self):
        assert aggregate([5.0]) == (5.0, 0.0)

    def test_empty(self):
        with pytest.raises(DataError):
            aggregate([])

    def test_format(self):
        """PSNR 4자리, SSIM 5자리"""
        assert format_mean_std(31.41144, 2.27612, 4) == "31.4114±2.2761"
        assert format_mean_std(0.866123, 0.038341, 5) == "0.86612±0.03834"

    def test_identical_slices_excluded_from_psnr(self):
        """identical 슬라이스는 PSNR 평균에서 빠지고 개수로 보고"""
        record = MetricsRecord(method="x")
        record.add(SliceMetrics(psnr=30.0, ssim=0.9, slice_id="a"))
        record.add(SliceMetrics(psnr=IDENTICAL, ssim=1.0, slice_id="b"))
        record.add(SliceMetrics(psnr=32.0, ssim=0.8, slice_id="c"))
        row = record.summary_row()
        assert row["identical"] == 1
        assert row["PSNR mean"] == pytest.approx(31.0)
        assert row["SSIM mean"] == pytest.approx(0.9)
        assert row["n_slices"] == 3

    def test_evaluate_pair(self):
        pred, target = random_pair(8)
        entry = evaluate_pair(pred, target, slice_id="v1_s0")
        assert entry.slice_id == "v1_s0"
        assert entry.psnr == pytest.approx(psnr(pred, target))
        assert entry.ssim == pytest.approx(ssim(pred, target))
