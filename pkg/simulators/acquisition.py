"""
다중 NEX 획득 시뮬레이터
공간적으로 변하는 복소 가우시안 잡음 (σ₀ · g-factor) 을 더해 K 번의 독립 획득을 만듭니다.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

import config
from errors import DataError, ShapeError
from metrics import psnr
from utils import SeedLike, substream

logger = config.setup_logger(__name__)


# ==============================================
# 타입 정의
# ==============================================

@dataclass
class ComplexImage:
    """2D 복소 MR 슬라이스 (실수부/허수부 평면)"""
    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        if self.real.ndim != 2 or self.real.shape != self.imag.shape:
            raise ShapeError(f"실수부/허수부 shape 불일치: {self.real.shape} / {self.imag.shape}")
        if not (np.all(np.isfinite(self.real)) and np.all(np.isfinite(self.imag))):
            raise DataError("복소 영상에 NaN/Inf 가 있습니다")

    @classmethod
    def from_complex(cls, z: np.ndarray) -> "ComplexImage":
        return cls(real=np.ascontiguousarray(z.real), imag=np.ascontiguousarray(z.imag))

    @property
    def shape(self):
        return self.real.shape

    def to_complex(self) -> np.ndarray:
        return self.real + 1j * self.imag

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.real, self.imag)

    def to_channels(self, dtype=np.float32) -> np.ndarray:
        """[2, H, W] (실수부, 허수부)"""
        return np.stack([self.real, self.imag]).astype(dtype)


@dataclass
class NexSet:
    """같은 슬라이스의 K 개 독립 획득"""
    slices: List[ComplexImage]
    sigma0: float
    gfactor: np.ndarray

    def __post_init__(self):
        if not self.slices:
            raise DataError("NexSet 에는 최소 1개의 획득이 필요합니다")
        shape = self.slices[0].shape
        if any(s.shape != shape for s in self.slices):
            raise ShapeError("NexSet 의 모든 획득은 같은 shape 이어야 합니다")
        if self.gfactor.shape != shape:
            raise ShapeError(f"gfactor shape {self.gfactor.shape} != 영상 {shape}")
        if self.sigma0 <= 0:
            raise ValueError(f"sigma0 는 양수여야 합니다: {self.sigma0}")
        if np.any(self.gfactor <= 0):
            raise ValueError("gfactor 는 모든 위치에서 양수여야 합니다")

    @property
    def count(self) -> int:
        return len(self.slices)

    def average(self, indices: Optional[Sequence[int]] = None) -> ComplexImage:
        """선택한 획득들의 복소 평균 (기본: 전체)"""
        chosen = [self.slices[i] for i in (indices if indices is not None else range(self.count))]
        stacked = np.stack([s.to_complex() for s in chosen])
        return ComplexImage.from_complex(stacked.mean(axis=0))


# ==============================================
# g-factor
# ==============================================

def default_gfactor(height: int, width: int, peak: float = config.GFACTOR_PEAK) -> np.ndarray:
    """
    1 + peak·exp(−r²/(2·(0.25·min(H,W))²)), 중심은 축에서 벗어난 위치 (0.35H, 0.6W)
    """
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    cy, cx = 0.35 * (height - 1), 0.6 * (width - 1)
    spread = 0.25 * min(height, width)
    r2 = (rows - cy) ** 2 + (cols - cx) ** 2
    return 1.0 + peak * np.exp(-r2 / (2.0 * spread ** 2))


def stationary_gfactor(height: int, width: int) -> np.ndarray:
    return np.ones((height, width), dtype=np.float64)


# ==============================================
# 획득 시뮬레이션
# ==============================================

def acquire_nex(clean: ComplexImage, sigma0: float, gfactor: np.ndarray, K: int,
                seed: SeedLike, first_index: int = 0) -> NexSet:
    """
    K 번의 독립 획득을 시뮬레이션합니다.

    각 획득 = clean + n, n 의 실수/허수부는 std = σ₀·gfactor 인 독립 가우시안.
    NEX 인덱스마다 (seed, index) 로 결정되는 독립 스트림을 씁니다.

    Args:
        clean: 잡음 없는 영상
        sigma0: 채널당 잡음 표준편차
        gfactor: [H, W] 양수 배율 맵
        K: 획득 횟수
        seed: 정수 또는 (볼륨, 슬라이스 …) 시드 튜플
        first_index: 첫 NEX 인덱스 (입력/타깃 획득을 분리할 때 사용)
    """
    if sigma0 <= 0:
        raise ValueError(f"sigma0 는 양수여야 합니다: {sigma0}")
    if K < 1:
        raise ValueError(f"K 는 1 이상이어야 합니다: {K}")
    if gfactor.shape != clean.shape:
        raise ShapeError(f"gfactor shape {gfactor.shape} != 영상 {clean.shape}")
    if np.any(gfactor <= 0):
        raise ValueError("gfactor 는 모든 위치에서 양수여야 합니다")

    std = sigma0 * gfactor
    slices = []
    for k in range(first_index, first_index + K):
        rng = substream(seed, "nex", k)
        noise_re = rng.standard_normal(clean.shape)
        noise_im = rng.standard_normal(clean.shape)
        slices.append(ComplexImage(real=clean.real + std * noise_re,
                                   imag=clean.imag + std * noise_im))
    return NexSet(slices=slices, sigma0=sigma0, gfactor=gfactor)


def nex_psnr_gain(clean: ComplexImage, nex: NexSet, K: int, scale: float,
                  mask: Optional[np.ndarray] = None) -> float:
    """
    K-NEX 복소 평균이 1-NEX 대비 얻는 크기 영상 PSNR 이득 (dB)

    Args:
        clean: 잡음 없는 기준 영상
        nex: K 개 이상의 획득
        K: 평균할 획득 수
        scale: 크기 영상을 [0, 255] 로 옮기는 배율
        mask: 평가할 픽셀 (신호 우세 영역, None 이면 전체)
    """
    if nex.count < K:
        raise DataError(f"획득 수 {nex.count} < K={K}")
    region = mask if mask is not None else np.ones(clean.shape, dtype=bool)
    reference = clean.magnitude()[region] * scale
    single = nex.slices[0].magnitude()[region] * scale
    averaged = nex.average(range(K)).magnitude()[region] * scale
    return float(psnr(averaged, reference) - psnr(single, reference))


def complex_images_to_tensor(images: Union[Sequence[ComplexImage], NexSet],
                             dtype=np.float32) -> np.ndarray:
    """복소 영상 목록 → [2K, H, W] 채널 배열 (Re₁, Im₁, Re₂, Im₂, …)"""
    items = images.slices if isinstance(images, NexSet) else list(images)
    return np.concatenate([img.to_channels(dtype) for img in items], axis=0)
