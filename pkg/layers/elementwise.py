"""
원소별/채널 연산과 각각의 역전파 규칙
ReLU, 채널 결합, 덧셈, NEX 쌍 평균, 복소 크기(magnitude)
"""
from typing import Tuple

import numpy as np

import config
from errors import ShapeError
from layers.conv import check_tensor


# ==============================================
# ReLU
# ==============================================

def relu(x: np.ndarray) -> np.ndarray:
    """max(0, x)"""
    return np.maximum(x, 0)


def relu_backward(grad_out: np.ndarray, cached_x: np.ndarray) -> np.ndarray:
    """x > 0 인 위치만 기울기 통과 (x == 0 에서는 0)"""
    if grad_out.shape != cached_x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != x {cached_x.shape}")
    return np.where(cached_x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


# ==============================================
# 채널 결합 / 덧셈
# ==============================================

def channel_concat(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """채널 축으로 쌓기: [N,Ca,H,W] + [N,Cb,H,W] → [N,Ca+Cb,H,W]"""
    na, _, ha, wa = check_tensor(a, "a")
    nb, _, hb, wb = check_tensor(b, "b")
    if (na, ha, wa) != (nb, hb, wb):
        raise ShapeError(f"concat 할 수 없는 shape: {a.shape} / {b.shape}")
    return np.concatenate([a, b], axis=1)


def channel_concat_backward(grad_out: np.ndarray, split: int) -> Tuple[np.ndarray, np.ndarray]:
    """concat 역전파: 앞 split 채널과 나머지로 분리"""
    return grad_out[:, :split], grad_out[:, split:]


def elementwise_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """같은 shape 텐서의 원소별 합 (역전파는 양쪽에 그대로 전달)"""
    if a.shape != b.shape:
        raise ShapeError(f"add shape 불일치: {a.shape} / {b.shape}")
    return a + b


# ==============================================
# NEX 쌍 평균
# ==============================================

def channel_mean_pair(x: np.ndarray) -> np.ndarray:
    """앞쪽 절반 채널과 뒤쪽 절반 채널의 평균 ([Re₁,Im₁,Re₂,Im₂] → [Re_avg, Im_avg])"""
    _, c, _, _ = check_tensor(x)
    if c % 2 != 0:
        raise ShapeError(f"채널 수가 2로 나누어떨어지지 않습니다: {c}")
    half = c // 2
    return (x[:, :half] + x[:, half:]) * x.dtype.type(0.5)


def channel_mean_pair_backward(grad_out: np.ndarray) -> np.ndarray:
    """각 절반에 ½ 씩 분배"""
    half = grad_out * grad_out.dtype.type(0.5)
    return np.concatenate([half, half], axis=1)


# ==============================================
# 복소 크기
# ==============================================

def magnitude(x: np.ndarray, eps: float = config.MAGNITUDE_EPS) -> np.ndarray:
    """
    out = sqrt(re² + im² + eps)

    Args:
        x: [N, 2, H, W] (실수부, 허수부)

    Returns:
        np.ndarray: [N, 1, H, W]
    """
    _, c, _, _ = check_tensor(x)
    if c != 2:
        raise ShapeError(f"magnitude 입력은 2채널(실수/허수)이어야 합니다: {c}")
    re, im = x[:, 0:1], x[:, 1:2]
    return np.sqrt(re * re + im * im + x.dtype.type(eps))


def magnitude_backward(grad_out: np.ndarray, cached_x: np.ndarray,
                       cached_out: np.ndarray) -> np.ndarray:
    """∂out/∂re = re/out, ∂out/∂im = im/out"""
    if grad_out.shape != cached_out.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != 출력 {cached_out.shape}")
    scale = grad_out / cached_out
    return np.concatenate([scale * cached_x[:, 0:1], scale * cached_x[:, 1:2]], axis=1)
