"""
손실 함수와 평가 지표
- combined_loss: ‖pred − target‖² · (1 − SSIM) 과 그 해석적 기울기
- psnr / ssim: 8비트 기준 [0, 255] 크기 영상 지표
- evaluate_pair / aggregate: 슬라이스별 지표와 mean±std 요약
"""
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

import config
from errors import DataError, ShapeError

logger = config.setup_logger(__name__)

# MSE = 0 일 때의 PSNR 결과
IDENTICAL = "identical"
LOSS_FORMS = ("product", "sum")

PsnrValue = Union[float, str]


# ==============================================
# 설정
# ==============================================

@dataclass(frozen=True)
class SsimConfig:
    """SSIM 가우시안 창과 안정화 상수 (C1 = (0.01·L)², C2 = (0.03·L)²)"""
    dynamic_range: float = config.PEAK_VALUE
    window_size: int = config.SSIM_WINDOW_SIZE
    window_sigma: float = config.SSIM_WINDOW_SIGMA

    def __post_init__(self):
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError(f"window_size 는 홀수여야 합니다: {self.window_size}")
        if self.dynamic_range <= 0 or self.window_sigma <= 0:
            raise ValueError("dynamic_range 와 window_sigma 는 양수여야 합니다")

    @property
    def c1(self) -> float:
        return (0.01 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (0.03 * self.dynamic_range) ** 2

    @cached_property
    def window(self) -> np.ndarray:
        """합이 1 인 2D 가우시안 창"""
        offsets = np.arange(self.window_size) - self.window_size // 2
        g = np.exp(-(offsets ** 2) / (2.0 * self.window_sigma ** 2))
        g /= g.sum()
        w = np.outer(g, g)
        return w / w.sum()


DEFAULT_SSIM = SsimConfig()


# ==============================================
# PSNR
# ==============================================

def _check_same(f: np.ndarray, g: np.ndarray):
    if f.shape != g.shape:
        raise ShapeError(f"두 영상의 shape 이 다릅니다: {f.shape} / {g.shape}")


def mse(f: np.ndarray, g: np.ndarray) -> float:
    _check_same(f, g)
    diff = np.asarray(f, dtype=np.float64) - np.asarray(g, dtype=np.float64)
    return float(np.mean(diff * diff))


def psnr_from_mse(value: float, peak: float = config.PEAK_VALUE) -> PsnrValue:
    """10·log₁₀(peak² / MSE), MSE = 0 이면 IDENTICAL"""
    if value == 0:
        return IDENTICAL
    return 10.0 * math.log10(peak * peak / value)


def psnr(f: np.ndarray, g: np.ndarray, peak: float = config.PEAK_VALUE) -> PsnrValue:
    """PSNR (dB). 입력은 [0, 255] 규약으로 스케일된 영상"""
    return psnr_from_mse(mse(f, g), peak)


# ==============================================
# SSIM
# ==============================================

def _window_mean(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    """valid 영역 가중 평균: out[p] = Σ_q w[q]·img[p+q]"""
    return np.tensordot(sliding_window_view(img, w.shape), w, axes=([2, 3], [0, 1]))


def _window_scatter(m: np.ndarray, w: np.ndarray) -> np.ndarray:
    """_window_mean 의 전치: out[q] = Σ_p w[q−p]·m[p] (full 크기로 복원)"""
    k = w.shape[0]
    padded = np.pad(m, k - 1)
    return _window_mean(padded, w[::-1, ::-1])


@dataclass
class _SsimTerms:
    mu_f: np.ndarray
    mu_g: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    ssim_map: np.ndarray


def _ssim_terms(f: np.ndarray, g: np.ndarray, cfg: SsimConfig) -> _SsimTerms:
    _check_same(f, g)
    if f.ndim != 2:
        raise ShapeError(f"SSIM 은 2D 영상에 대해 정의됩니다: {f.shape}")
    k = cfg.window_size
    if f.shape[0] < k or f.shape[1] < k:
        raise ShapeError(f"영상 {f.shape} 이 SSIM 창 {k}×{k} 보다 작습니다")

    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    w = cfg.window

    mu_f = _window_mean(f, w)
    mu_g = _window_mean(g, w)
    var_f = _window_mean(f * f, w) - mu_f * mu_f
    var_g = _window_mean(g * g, w) - mu_g * mu_g
    cov = _window_mean(f * g, w) - mu_f * mu_g

    a1 = 2.0 * mu_f * mu_g + cfg.c1
    a2 = 2.0 * cov + cfg.c2
    b1 = mu_f * mu_f + mu_g * mu_g + cfg.c1
    b2 = var_f + var_g + cfg.c2
    return _SsimTerms(mu_f, mu_g, a1, a2, b1, b2, (a1 * a2) / (b1 * b2))


def ssim_map(f: np.ndarray, g: np.ndarray, cfg: SsimConfig = DEFAULT_SSIM) -> np.ndarray:
    """valid 영역 국소 SSIM 맵 [(H−k+1), (W−k+1)]"""
    return _ssim_terms(f, g, cfg).ssim_map


def ssim(f: np.ndarray, g: np.ndarray, cfg: SsimConfig = DEFAULT_SSIM) -> float:
    """평균 SSIM"""
    return float(np.mean(ssim_map(f, g, cfg)))


def ssim_grad(f: np.ndarray, g: np.ndarray,
              cfg: SsimConfig = DEFAULT_SSIM) -> Tuple[float, np.ndarray]:
    """
    평균 SSIM 과 f 에 대한 해석적 기울기

    ∂S_p/∂f(q) = w(q−p)·[α_p + β_p·f(q) + γ_p·g(q)] 를 모든 창 p 에 대해 모읍니다.

    Returns:
        (평균 SSIM, ∇_f SSIM)
    """
    t = _ssim_terms(f, g, cfg)
    s = t.ssim_map
    alpha = 2.0 * s * (t.mu_g / t.a1 - t.mu_f / t.b1 - t.mu_g / t.a2 + t.mu_f / t.b2)
    beta = -2.0 * s / t.b2
    gamma = 2.0 * s / t.a2

    w = cfg.window
    count = s.size
    f64 = np.asarray(f, dtype=np.float64)
    g64 = np.asarray(g, dtype=np.float64)
    grad = (_window_scatter(alpha, w)
            + f64 * _window_scatter(beta, w)
            + g64 * _window_scatter(gamma, w)) / count
    return float(np.mean(s)), grad


# ==============================================
# 결합 손실
# ==============================================

def combined_loss(pred_mag: np.ndarray, target_mag: np.ndarray,
                  cfg: SsimConfig = DEFAULT_SSIM, form: str = config.LOSS_FORM,
                  ssim_weight: float = config.SSIM_LOSS_WEIGHT) -> float:
    """
    product: L = ‖pred − target‖₂² · (1 − SSIM)
    sum:     L = ‖pred − target‖₂² + λ·(1 − SSIM)
    """
    loss, _ = combined_loss_grad(pred_mag, target_mag, cfg, form, ssim_weight, need_grad=False)
    return loss


def combined_loss_grad(pred_mag: np.ndarray, target_mag: np.ndarray,
                       cfg: SsimConfig = DEFAULT_SSIM, form: str = config.LOSS_FORM,
                       ssim_weight: float = config.SSIM_LOSS_WEIGHT,
                       need_grad: bool = True) -> Tuple[float, Optional[np.ndarray]]:
    """
    결합 손실과 pred 에 대한 기울기 (곱의 미분법)

    product: ∇L = 2(pred − target)(1 − S) − ‖pred − target‖² ∇S

    Returns:
        (손실, ∇_pred L 또는 None)
    """
    if form not in LOSS_FORMS:
        raise ValueError(f"알 수 없는 손실 형태: {form}")
    _check_same(pred_mag, target_mag)

    pred = np.asarray(pred_mag, dtype=np.float64)
    residual = pred - np.asarray(target_mag, dtype=np.float64)
    l2 = float(np.sum(residual * residual))

    if need_grad:
        s, grad_s = ssim_grad(pred, target_mag, cfg)
    else:
        s, grad_s = ssim(pred, target_mag, cfg), None

    if form == "product":
        loss = l2 * (1.0 - s)
        grad = None if grad_s is None else 2.0 * residual * (1.0 - s) - l2 * grad_s
    else:
        loss = l2 + ssim_weight * (1.0 - s)
        grad = None if grad_s is None else 2.0 * residual - ssim_weight * grad_s
    return loss, grad


# ==============================================
# 평가 기록
# ==============================================

@dataclass
class SliceMetrics:
    psnr: PsnrValue
    ssim: float
    slice_id: str = ""


def evaluate_pair(pred: np.ndarray, target: np.ndarray, cfg: SsimConfig = DEFAULT_SSIM,
                  slice_id: str = "") -> SliceMetrics:
    """한 슬라이스의 PSNR/SSIM"""
    return SliceMetrics(psnr=psnr(pred, target, cfg.dynamic_range),
                        ssim=ssim(pred, target, cfg), slice_id=slice_id)


def aggregate(values: Sequence[float]) -> Tuple[float, float]:
    """표본 평균과 표본 표준편차 (n−1, 1개면 0)"""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise DataError("집계할 기록이 없습니다")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def format_mean_std(mean: float, std: float, decimals: int) -> str:
    """표 형식 "mean±std" (PSNR 4자리, SSIM 5자리)"""
    return f"{mean:.{decimals}f}±{std:.{decimals}f}"


@dataclass
class MetricsRecord:
    """한 메서드/평면의 슬라이스별 지표 모음"""
    method: str
    plane: str = "sagittal"
    slices: List[SliceMetrics] = field(default_factory=list)

    def add(self, entry: SliceMetrics):
        self.slices.append(entry)

    @property
    def numeric_psnr(self) -> List[float]:
        return [s.psnr for s in self.slices if s.psnr != IDENTICAL]

    @property
    def identical_count(self) -> int:
        return sum(1 for s in self.slices if s.psnr == IDENTICAL)

    def psnr_summary(self) -> Tuple[float, float]:
        return aggregate(self.numeric_psnr)

    def ssim_summary(self) -> Tuple[float, float]:
        return aggregate([s.ssim for s in self.slices])

    def summary_row(self) -> dict:
        psnr_mean, psnr_std = self.psnr_summary()
        ssim_mean, ssim_std = self.ssim_summary()
        return {
            "method": self.method,
            "plane": self.plane,
            "n_slices": len(self.slices),
            "identical": self.identical_count,
            "PSNR mean": psnr_mean,
            "PSNR std": psnr_std,
            "SSIM mean": ssim_mean,
            "SSIM std": ssim_std,
            "PSNR": format_mean_std(psnr_mean, psnr_std, 4),
            "SSIM": format_mean_std(ssim_mean, ssim_std, 5),
        }
