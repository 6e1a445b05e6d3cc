"""
3×3 합성곱 레이어 (stride 1, zero padding 1)
im2col 방식으로 순전파/역전파를 모두 행렬곱으로 계산합니다.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

import config
from errors import ShapeError

K = config.KERNEL_SIZE
PAD = K // 2


# ==============================================
# 타입 정의
# ==============================================

@dataclass
class ConvParams:
    """합성곱 파라미터 (kernels: [Cout, Cin, 3, 3], bias: [Cout])"""
    kernels: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernels.ndim != 4 or self.kernels.shape[2:] != (K, K):
            raise ShapeError(f"커널은 [Cout, Cin, {K}, {K}] 이어야 합니다: {self.kernels.shape}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} 가 Cout={self.kernels.shape[0]} 과 맞지 않습니다"
            )

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    def astype(self, dtype) -> "ConvParams":
        return ConvParams(self.kernels.astype(dtype), self.bias.astype(dtype))


@dataclass
class ConvGrads:
    """ConvParams와 같은 shape의 기울기"""
    kernels: np.ndarray
    bias: np.ndarray


def check_tensor(x: np.ndarray, name: str = "x") -> Tuple[int, int, int, int]:
    """[N, C, H, W] 4차원 텐서인지 확인하고 shape 반환"""
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        shape = getattr(x, "shape", None)
        raise ShapeError(f"{name}: [N, C, H, W] 4차원 텐서가 필요합니다 (받은 shape: {shape})")
    return x.shape


# ==============================================
# im2col 헬퍼
# ==============================================

def _im2col(x: np.ndarray) -> np.ndarray:
    """[N, C, H, W] → [N·H·W, C·9] (zero padding 1)"""
    n, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (PAD, PAD), (PAD, PAD)))
    windows = sliding_window_view(padded, (K, K), axis=(2, 3))   # N, C, H, W, 3, 3
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * K * K)


def _correlate(x: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """bias 없는 same-size 상관 연산"""
    n, _, h, w = x.shape
    cout = kernels.shape[0]
    out = _im2col(x) @ kernels.reshape(cout, -1).T                 # N·H·W, Cout
    return np.ascontiguousarray(out.reshape(n, h, w, cout).transpose(0, 3, 1, 2))


# ==============================================
# 순전파 / 역전파
# ==============================================

def conv2d_forward(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """
    out[n,co,i,j] = bias[co] + Σ x[n,ci,i+di−1,j+dj−1]·k[co,ci,di,dj]

    Args:
        x: 입력 텐서 [N, Cin, H, W]
        p: 합성곱 파라미터

    Returns:
        np.ndarray: [N, Cout, H, W]
    """
    _, c, h, w = check_tensor(x)
    if c != p.in_channels:
        raise ShapeError(f"입력 채널 {c} 가 커널 Cin={p.in_channels} 과 다릅니다")
    if h < 1 or w < 1:
        raise ShapeError(f"공간 크기는 1 이상이어야 합니다: {x.shape}")

    out = _correlate(x, p.kernels.astype(x.dtype, copy=False))
    out += p.bias.astype(x.dtype, copy=False)[None, :, None, None]
    return out


def conv2d_backward(grad_out: np.ndarray, cached_x: np.ndarray,
                    p: ConvParams) -> Tuple[np.ndarray, ConvGrads]:
    """
    합성곱 역전파

    grad_x 는 grad_out 과 (채널 전치 + 180° 회전) 커널의 full correlation 입니다.

    Returns:
        (grad_x, ConvGrads)
    """
    n, c, h, w = check_tensor(cached_x, "cached_x")
    expected = (n, p.out_channels, h, w)
    if check_tensor(grad_out, "grad_out") != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != 순전파 출력 {expected}")

    g_cols = grad_out.transpose(0, 2, 3, 1).reshape(n * h * w, p.out_channels)
    grad_k = (g_cols.T @ _im2col(cached_x)).reshape(p.kernels.shape)
    grad_b = grad_out.sum(axis=(0, 2, 3))

    flipped = p.kernels.astype(grad_out.dtype, copy=False).transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
    grad_x = _correlate(grad_out, flipped)
    return grad_x, ConvGrads(kernels=grad_k, bias=grad_b)
