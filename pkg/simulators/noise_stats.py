"""
2-NEX 잡음 통계
신호 강화 맵 / 잡음 맵, Rayleigh 모멘트와 적합, 국소 분산 맵,
히스토그램과 비중심 카이제곱 오버레이, 적합도 진단
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

import config
from errors import DataError, ShapeError
from simulators.acquisition import ComplexImage

logger = config.setup_logger(__name__)

MIN_FIT_SAMPLES = 100
CHI2_DOF = 2          # 복소 채널 1개 = 자유도 2
MIN_EXPECTED_COUNT = 5.0


# ==============================================
# 타입 정의
# ==============================================

@dataclass(frozen=True)
class NoiseStats:
    """σ = √2·σ₀ 와 Rayleigh 평균/분산"""
    sigma: float
    mu_R: float
    sigma_R2: float


@dataclass(frozen=True)
class Chi2Fit:
    """x ≈ scale · ncχ²(dof, noncentrality)"""
    dof: int
    scale: float
    noncentrality: float
    sample_mean: float
    sample_var: float

    def pdf(self, x: np.ndarray) -> np.ndarray:
        if self.noncentrality <= 0:
            return stats.chi2.pdf(x, self.dof, scale=self.scale)
        return stats.ncx2.pdf(x, self.dof, self.noncentrality, scale=self.scale)


# ==============================================
# 신호 강화 맵 / 잡음 맵
# ==============================================

def _check_pair(a: ComplexImage, b: ComplexImage):
    if a.shape != b.shape:
        raise ShapeError(f"두 NEX 영상의 shape 이 다릅니다: {a.shape} / {b.shape}")


def signal_strengthened_map(a: ComplexImage, b: ComplexImage) -> ComplexImage:
    """두 NEX 의 복소 합"""
    _check_pair(a, b)
    return ComplexImage(real=a.real + b.real, imag=a.imag + b.imag)


def noise_map(a: ComplexImage, b: ComplexImage) -> ComplexImage:
    """두 NEX 의 복소 차 (같은 신호라면 순수 잡음, 성분 std = √2·σ₀·g)"""
    _check_pair(a, b)
    return ComplexImage(real=a.real - b.real, imag=a.imag - b.imag)


# ==============================================
# Rayleigh
# ==============================================

def rayleigh_moments(sigma: float) -> NoiseStats:
    """μ_R = σ√(π/2), σ_R² = (2 − π/2)σ²"""
    if sigma <= 0:
        raise ValueError(f"sigma 는 양수여야 합니다: {sigma}")
    return NoiseStats(sigma=sigma,
                      mu_R=sigma * np.sqrt(np.pi / 2.0),
                      sigma_R2=(2.0 - np.pi / 2.0) * sigma ** 2)


def fit_rayleigh(samples: np.ndarray) -> float:
    """최대우도 추정 σ̂ = sqrt(mean(x²) / 2)"""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise DataError(f"degenerate samples: Rayleigh 적합에는 최소 2개 샘플이 필요합니다 ({x.size})")
    if np.any(x < 0):
        raise DataError("degenerate samples: Rayleigh 샘플은 음수일 수 없습니다")
    if not np.any(x > 0):
        raise DataError("degenerate samples: 모든 샘플이 0 입니다")
    return float(np.sqrt(np.mean(x * x) / 2.0))


def rayleigh_pdf(x: np.ndarray, sigma: float) -> np.ndarray:
    """히스토그램 오버레이용 Rayleigh 밀도"""
    return stats.rayleigh.pdf(x, scale=sigma)


def rayleigh_goodness_of_fit(samples: np.ndarray, sigma: float, bins: int = 50) -> float:
    """
    히스토그램과 적합 Rayleigh 의 피어슨 χ² 통계량

    기대 빈도가 5 미만인 구간은 제외합니다. 값이 클수록 적합이 나쁩니다.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    counts, edges = np.histogram(x, bins=bins, range=(0.0, float(x.max())))
    expected = x.size * np.diff(stats.rayleigh.cdf(edges, scale=sigma))
    keep = expected >= MIN_EXPECTED_COUNT
    return float(np.sum((counts[keep] - expected[keep]) ** 2 / expected[keep]))


# ==============================================
# 국소 분산 맵
# ==============================================

def local_variance_map(mag_noise: np.ndarray, patch: int = 3) -> np.ndarray:
    """
    중심 patch×patch 이웃의 불편 표본분산 (경계는 잘린 이웃 사용)

    Args:
        mag_noise: 2D 잡음 크기 영상
        patch: 홀수 패치 크기 (≥ 3)
    """
    img = np.asarray(mag_noise, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"2D 영상이 필요합니다: {img.shape}")
    if patch < 3 or patch % 2 == 0:
        raise ValueError(f"patch 는 3 이상의 홀수여야 합니다: {patch}")
    if img.shape[0] < patch or img.shape[1] < patch:
        raise ValueError(f"patch {patch} 가 영상 {img.shape} 보다 큽니다")

    r = patch // 2
    padded = np.pad(img, r, mode="constant", constant_values=np.nan)
    windows = sliding_window_view(padded, (patch, patch))
    return np.nanvar(windows, axis=(2, 3), ddof=1)


def pearson_r(a: np.ndarray, b: np.ndarray) -> float:
    """두 맵의 피어슨 상관계수"""
    if a.shape != b.shape:
        raise ShapeError(f"shape 불일치: {a.shape} / {b.shape}")
    return float(np.corrcoef(a.ravel(), b.ravel())[0, 1])


# ==============================================
# 히스토그램 / 카이제곱 오버레이
# ==============================================

def histogram(samples: np.ndarray, bins: int = 50) -> Tuple[np.ndarray, np.ndarray]:
    """[min, max] 등간격 히스토그램 → (edges, counts)"""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise DataError("히스토그램에 샘플이 없습니다")
    counts, edges = np.histogram(x, bins=bins, range=(float(x.min()), float(x.max())))
    return edges, counts


def chi2_overlay(samples_squared: np.ndarray, sigma: Optional[float] = None) -> Chi2Fit:
    """
    제곱 잡음 크기의 비중심 카이제곱 적합 (모멘트 매칭, 자유도 2)

    x/σ² ~ ncχ²(2, λ) 에서 E[x] = σ²(2+λ), Var[x] = 4σ⁴(1+λ).
    sigma 를 알면 λ 만 표본 평균으로 추정하고,
    모르면 평균과 분산으로 σ² 와 λ 를 함께 맞춥니다.

    Args:
        samples_squared: |n|² 샘플
        sigma: 성분 잡음 표준편차 (선택)
    """
    x = np.asarray(samples_squared, dtype=np.float64).ravel()
    if x.size < MIN_FIT_SAMPLES:
        raise DataError(f"카이제곱 적합에는 최소 {MIN_FIT_SAMPLES}개 샘플이 필요합니다 ({x.size})")

    mean = float(x.mean())
    var = float(x.var(ddof=1))
    if mean <= 0:
        raise DataError("degenerate samples: 제곱 샘플 평균이 0 입니다")

    if sigma is not None:
        if sigma <= 0:
            raise ValueError(f"sigma 는 양수여야 합니다: {sigma}")
        scale = sigma ** 2
    else:
        # 4a² − 4a·m + v = 0 의 작은 근 (λ ≥ 0), 과분산이면 중심 분포로 고정
        disc = max(mean * mean - var, 0.0)
        scale = 0.5 * (mean - np.sqrt(disc))

    noncentrality = max(mean / scale - CHI2_DOF, 0.0)
    return Chi2Fit(dof=CHI2_DOF, scale=float(scale), noncentrality=float(noncentrality),
                   sample_mean=mean, sample_var=var)


# ==============================================
# 슬라이스 묶음 분석
# ==============================================

@dataclass
class NoiseReport:
    """여러 슬라이스의 2-NEX 잡음을 모은 통계"""
    n_samples: int
    sigma_hat: float
    expected_sigma: Optional[float]
    moments: NoiseStats
    sample_mean: float
    sample_var: float
    goodness_of_fit: float
    chi2: Chi2Fit
    variance_map: np.ndarray
    gfactor_r: float
    noise_hist: Tuple[np.ndarray, np.ndarray]
    squared_hist: Tuple[np.ndarray, np.ndarray]

    def summary(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "sigma_hat": self.sigma_hat,
            "expected_sigma": self.expected_sigma,
            "rayleigh_mean": self.moments.mu_R,
            "rayleigh_var": self.moments.sigma_R2,
            "sample_mean": self.sample_mean,
            "sample_var": self.sample_var,
            "rayleigh_chi2_stat": self.goodness_of_fit,
            "chi2_scale": self.chi2.scale,
            "chi2_noncentrality": self.chi2.noncentrality,
            "variance_gfactor2_r": self.gfactor_r,
        }


def analyze_noise_pairs(pairs: Sequence[Tuple[ComplexImage, ComplexImage]], gfactor: np.ndarray,
                        sigma0: Optional[float] = None, bins: int = 50, patch: int = 3) -> NoiseReport:
    """
    슬라이스별 잡음 맵을 모아 Rayleigh/카이제곱 적합과 국소 분산-g-factor 상관을 계산합니다.

    국소 분산 맵은 슬라이스 평균이며, 잡음 맵은 신호와 무관하므로
    평균할수록 gfactor² 모양에 가까워집니다.
    σ₀ 를 알면 카이제곱 오버레이의 σ 를 √2·σ₀ 로 고정해 비중심도만 추정하고,
    모르면 σ 와 비중심도를 함께 모멘트 매칭합니다.

    Args:
        pairs: (NEX₁, NEX₂) 목록
        gfactor: [H, W] 잡음 배율 맵
        sigma0: 알려진 채널 잡음 (기대 σ = √2·σ₀, 카이제곱 σ 고정)

    Raises:
        DataError: 잡음이 없는 입력 ("degenerate samples")
    """
    if not pairs:
        raise DataError("분석할 슬라이스가 없습니다")
    magnitudes = [noise_map(a, b).magnitude() for a, b in pairs]
    samples = np.concatenate([m.ravel() for m in magnitudes])

    sigma_hat = fit_rayleigh(samples)
    expected_sigma = float(np.sqrt(2.0) * sigma0) if sigma0 else None
    variance_map = np.mean([local_variance_map(m, patch) for m in magnitudes], axis=0)
    g2 = np.asarray(gfactor, dtype=np.float64) ** 2
    r = pearson_r(variance_map, g2) if np.ptp(g2) > 0 else float("nan")

    squared = samples * samples
    report = NoiseReport(
        n_samples=int(samples.size),
        sigma_hat=sigma_hat,
        expected_sigma=expected_sigma,
        moments=rayleigh_moments(sigma_hat),
        sample_mean=float(samples.mean()),
        sample_var=float(samples.var(ddof=1)),
        goodness_of_fit=rayleigh_goodness_of_fit(samples, sigma_hat, bins),
        chi2=chi2_overlay(squared, expected_sigma),
        variance_map=variance_map,
        gfactor_r=r,
        noise_hist=histogram(samples, bins),
        squared_hist=histogram(squared, bins),
    )
    logger.info(f"📊 잡음 분석: {report.n_samples} 샘플, σ̂={sigma_hat:.6f}, "
                f"χ²={report.goodness_of_fit:.2f}, λ={report.chi2.noncentrality:.4f}, r(var, g²)={r:.4f}")
    return report
