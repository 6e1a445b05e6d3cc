"""
합성 복소 팬텀 생성기
겹치는 타원 강도 × 부드러운 위상, 2× 슈퍼샘플링 안티앨리어싱.
볼륨은 타원체 집합이며, 각 슬라이스는 해당 깊이의 단면입니다.
"""
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

import config
from simulators.acquisition import ComplexImage
from utils import substream

logger = config.setup_logger(__name__)

MIN_SIZE = 16
SUPERSAMPLE = 2
SLICE_DEPTH_RANGE = 0.6   # 슬라이스는 z ∈ [−0.6, 0.6] 에 배치


# ==============================================
# 타입 정의
# ==============================================

@dataclass(frozen=True)
class Ellipse:
    """정규화 좌표계 [-1, 1]² 의 타원 (rotation: 라디안)"""
    center: Tuple[float, float]
    axes: Tuple[float, float]
    rotation: float
    amplitude: complex

    def __post_init__(self):
        if abs(self.amplitude) > 1.0:
            raise ValueError(f"타원 진폭은 |a| ≤ 1 이어야 합니다: {self.amplitude}")
        if min(self.axes) <= 0:
            raise ValueError(f"타원 축은 양수여야 합니다: {self.axes}")


@dataclass(frozen=True)
class PhantomSpec:
    """
    2D 팬텀 명세

    phase_coeffs: (c0, cx, cy, cxx, cyy, cxy) → φ = c0 + cx·x + cy·y + cxx·x² + cyy·y² + cxy·x·y
    """
    seed: int
    height: int
    width: int
    ellipses: Tuple[Ellipse, ...] = ()
    phase_coeffs: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.height < MIN_SIZE or self.width < MIN_SIZE:
            raise ValueError(f"팬텀 크기는 {MIN_SIZE} 이상이어야 합니다: {self.height}×{self.width}")
        if len(self.phase_coeffs) != 6:
            raise ValueError(f"위상 계수는 6개여야 합니다: {len(self.phase_coeffs)}")

    @property
    def ellipse_count(self) -> int:
        return len(self.ellipses)


@dataclass(frozen=True)
class Ellipsoid:
    center: Tuple[float, float, float]
    axes: Tuple[float, float, float]
    rotation: float
    amplitude: complex


@dataclass(frozen=True)
class PhantomVolume:
    seed: int
    ellipsoids: Tuple[Ellipsoid, ...] = field(default_factory=tuple)
    phase_coeffs: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


# ==============================================
# 래스터화
# ==============================================

def _grid(height: int, width: int, factor: int) -> Tuple[np.ndarray, np.ndarray]:
    """픽셀(또는 서브픽셀) 중심 좌표 (y: 행, x: 열)"""
    ys = -1.0 + (2.0 * np.arange(height * factor) + 1.0) / (height * factor)
    xs = -1.0 + (2.0 * np.arange(width * factor) + 1.0) / (width * factor)
    return np.meshgrid(ys, xs, indexing="ij")


def _inside(ellipse: Ellipse, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    cos_r, sin_r = np.cos(ellipse.rotation), np.sin(ellipse.rotation)
    dx = x - ellipse.center[0]
    dy = y - ellipse.center[1]
    xr = cos_r * dx + sin_r * dy
    yr = -sin_r * dx + cos_r * dy
    return (xr / ellipse.axes[0]) ** 2 + (yr / ellipse.axes[1]) ** 2 <= 1.0


def phase_map(spec: PhantomSpec) -> np.ndarray:
    """픽셀 중심에서의 부드러운 위상 φ(x, y)"""
    y, x = _grid(spec.height, spec.width, 1)
    c0, cx, cy, cxx, cyy, cxy = spec.phase_coeffs
    return c0 + cx * x + cy * y + cxx * x * x + cyy * y * y + cxy * x * y


def generate_phantom(spec: PhantomSpec) -> ComplexImage:
    """
    명세로부터 결정적인 복소 팬텀 슬라이스를 생성합니다.

    뒤에 오는 타원이 앞의 타원을 덮어씁니다 (조직 중첩).
    2×2 서브샘플 평균으로 경계를 안티앨리어싱합니다.
    """
    y, x = _grid(spec.height, spec.width, SUPERSAMPLE)
    canvas = np.zeros(y.shape, dtype=np.complex128)
    for ellipse in spec.ellipses:
        canvas[_inside(ellipse, y, x)] = ellipse.amplitude

    s = SUPERSAMPLE
    intensity = canvas.reshape(spec.height, s, spec.width, s).mean(axis=(1, 3))
    image = intensity * np.exp(1j * phase_map(spec))
    return ComplexImage.from_complex(image)


# ==============================================
# 무작위 팬텀 / 볼륨
# ==============================================

def _random_amplitude(rng: np.random.Generator, low: float, high: float) -> complex:
    return complex(rng.uniform(low, high) * np.exp(1j * rng.uniform(-0.3, 0.3)))


def _random_phase_coeffs(rng: np.random.Generator) -> Tuple[float, ...]:
    return (
        float(rng.uniform(-np.pi, np.pi)),
        float(rng.uniform(-1.0, 1.0)),
        float(rng.uniform(-1.0, 1.0)),
        float(rng.uniform(-0.5, 0.5)),
        float(rng.uniform(-0.5, 0.5)),
        float(rng.uniform(-0.5, 0.5)),
    )


def random_phantom_spec(seed: int, height: int, width: int, n_inner: int = 6) -> PhantomSpec:
    """몸체 타원 1개 + 내부 구조 타원 n_inner 개"""
    rng = substream(seed, "phantom")
    ellipses: List[Ellipse] = [
        Ellipse(center=(float(rng.uniform(-0.05, 0.05)), float(rng.uniform(-0.05, 0.05))),
                axes=(float(rng.uniform(0.7, 0.9)), float(rng.uniform(0.75, 0.92))),
                rotation=float(rng.uniform(-0.3, 0.3)),
                amplitude=_random_amplitude(rng, 0.3, 0.5))
    ]
    for _ in range(n_inner):
        ellipses.append(Ellipse(
            center=(float(rng.uniform(-0.5, 0.5)), float(rng.uniform(-0.5, 0.5))),
            axes=(float(rng.uniform(0.05, 0.35)), float(rng.uniform(0.05, 0.35))),
            rotation=float(rng.uniform(0, np.pi)),
            amplitude=_random_amplitude(rng, 0.1, 1.0),
        ))
    return PhantomSpec(seed=seed, height=height, width=width,
                       ellipses=tuple(ellipses), phase_coeffs=_random_phase_coeffs(rng))


def random_volume(seed: int, n_inner: int = 8) -> PhantomVolume:
    """타원체 팬텀 볼륨 (몸체 타원체는 모든 슬라이스를 관통)"""
    rng = substream(seed, "volume")
    ellipsoids: List[Ellipsoid] = [
        Ellipsoid(center=(float(rng.uniform(-0.05, 0.05)), float(rng.uniform(-0.05, 0.05)), 0.0),
                  axes=(float(rng.uniform(0.7, 0.9)), float(rng.uniform(0.75, 0.92)), 1.5),
                  rotation=float(rng.uniform(-0.3, 0.3)),
                  amplitude=_random_amplitude(rng, 0.3, 0.5))
    ]
    for _ in range(n_inner):
        ellipsoids.append(Ellipsoid(
            center=(float(rng.uniform(-0.5, 0.5)), float(rng.uniform(-0.5, 0.5)),
                    float(rng.uniform(-0.5, 0.5))),
            axes=(float(rng.uniform(0.05, 0.35)), float(rng.uniform(0.05, 0.35)),
                  float(rng.uniform(0.2, 0.8))),
            rotation=float(rng.uniform(0, np.pi)),
            amplitude=_random_amplitude(rng, 0.1, 1.0),
        ))
    return PhantomVolume(seed=seed, ellipsoids=tuple(ellipsoids),
                         phase_coeffs=_random_phase_coeffs(rng))


def slice_depth(slice_index: int, n_slices: int) -> float:
    """슬라이스 인덱스 → z 좌표"""
    return -SLICE_DEPTH_RANGE + 2 * SLICE_DEPTH_RANGE * (slice_index + 0.5) / n_slices


def volume_slice_spec(volume: PhantomVolume, slice_index: int, n_slices: int,
                      height: int, width: int) -> PhantomSpec:
    """
    볼륨의 slice_index 번째 단면을 2D 명세로 변환합니다.

    z 에서 타원체 단면은 축이 sqrt(1 − ((z−cz)/c)²) 배로 줄어든 타원입니다.
    """
    if not 0 <= slice_index < n_slices:
        raise ValueError(f"슬라이스 인덱스 범위 초과: {slice_index} / {n_slices}")

    z = slice_depth(slice_index, n_slices)
    ellipses: List[Ellipse] = []
    for body in volume.ellipsoids:
        t = (z - body.center[2]) / body.axes[2]
        if abs(t) >= 1.0:
            continue
        shrink = float(np.sqrt(1.0 - t * t))
        ellipses.append(Ellipse(center=body.center[:2],
                                axes=(body.axes[0] * shrink, body.axes[1] * shrink),
                                rotation=body.rotation, amplitude=body.amplitude))

    c0, cx, cy, cxx, cyy, cxy = volume.phase_coeffs
    return PhantomSpec(seed=volume.seed * 10000 + slice_index, height=height, width=width,
                       ellipses=tuple(ellipses),
                       phase_coeffs=(c0 + 0.2 * z, cx, cy, cxx, cyy, cxy))
