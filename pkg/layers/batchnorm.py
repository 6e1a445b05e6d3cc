"""
배치 정규화 (채널별, 통계 축: N·H·W)

순전파는 입력 파라미터를 수정하지 않습니다. train 모드에서 갱신된
running 통계는 캐시의 updated_params 로 돌려주고, 호출자가 반영합니다.
"""
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

import config
from errors import ShapeError
from layers.conv import check_tensor

MODES = ("train", "eval")


@dataclass
class BatchNormParams:
    """BN 파라미터와 running 통계"""
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = config.BN_MOMENTUM
    epsilon: float = config.BN_EPSILON

    def __post_init__(self):
        c = self.gamma.shape
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape != c:
                raise ShapeError(f"BN {name} shape {getattr(self, name).shape} != gamma {c}")
        if np.any(self.running_var < 0):
            raise ValueError("running_var 는 0 이상이어야 합니다")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError(f"momentum 은 (0,1) 범위여야 합니다: {self.momentum}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon 은 양수여야 합니다: {self.epsilon}")

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> "BatchNormParams":
        """gamma=1, beta=0, running_mean=0, running_var=1"""
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def astype(self, dtype) -> "BatchNormParams":
        return replace(
            self,
            gamma=self.gamma.astype(dtype),
            beta=self.beta.astype(dtype),
            running_mean=self.running_mean.astype(dtype),
            running_var=self.running_var.astype(dtype),
        )


@dataclass
class BatchNormCache:
    mode: str
    x_hat: Optional[np.ndarray] = None
    inv_std: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None
    updated_params: Optional[BatchNormParams] = None


def _bcast(v: np.ndarray) -> np.ndarray:
    return v[None, :, None, None]


def batchnorm_forward(x: np.ndarray, p: BatchNormParams,
                      mode: str = "train") -> Tuple[np.ndarray, BatchNormCache]:
    """
    배치 정규화 순전파

    Args:
        x: [N, C, H, W]
        p: BN 파라미터
        mode: "train" (배치 통계 + EMA 갱신) 또는 "eval" (running 통계)

    Returns:
        (출력, 캐시)
    """
    n, c, h, w = check_tensor(x)
    if c != p.channels:
        raise ShapeError(f"입력 채널 {c} 가 BN 채널 {p.channels} 과 다릅니다")
    if mode not in MODES:
        raise ValueError(f"알 수 없는 BN 모드: {mode}")

    dtype = x.dtype
    gamma = p.gamma.astype(dtype, copy=False)
    beta = p.beta.astype(dtype, copy=False)

    if mode == "eval":
        inv_std = 1.0 / np.sqrt(p.running_var.astype(dtype) + dtype.type(p.epsilon))
        x_hat = (x - _bcast(p.running_mean.astype(dtype))) * _bcast(inv_std)
        return _bcast(gamma) * x_hat + _bcast(beta), BatchNormCache(mode="eval")

    m = n * h * w
    if m == 1:
        raise ValueError("train 모드에서 N·H·W = 1 인 배치는 분산이 정의되지 않습니다")

    mean = x.mean(axis=(0, 2, 3))
    centered = x - _bcast(mean)
    var = (centered * centered).mean(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + dtype.type(p.epsilon))
    x_hat = centered * _bcast(inv_std)
    out = _bcast(gamma) * x_hat + _bcast(beta)

    # running_var 는 불편 분산으로 갱신
    unbiased = var * (m / (m - 1))
    mom = p.momentum
    updated = replace(
        p,
        running_mean=((1 - mom) * p.running_mean + mom * mean).astype(p.running_mean.dtype),
        running_var=((1 - mom) * p.running_var + mom * unbiased).astype(p.running_var.dtype),
    )
    cache = BatchNormCache(mode="train", x_hat=x_hat, inv_std=inv_std,
                           gamma=gamma, updated_params=updated)
    return out, cache


def batchnorm_backward(grad_out: np.ndarray,
                       cache: BatchNormCache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    배치 평균/분산의 x 의존성을 포함한 BN 역전파

    Returns:
        (grad_x, grad_gamma, grad_beta)
    """
    if cache.mode != "train":
        raise ValueError("BN 역전파는 train 모드 캐시에서만 정의됩니다")
    if grad_out.shape != cache.x_hat.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != 캐시 {cache.x_hat.shape}")

    n, _, h, w = grad_out.shape
    m = n * h * w
    x_hat = cache.x_hat

    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * x_hat).sum(axis=(0, 2, 3))

    scale = cache.gamma * cache.inv_std / m
    grad_x = _bcast(scale) * (
        m * grad_out - _bcast(grad_beta) - x_hat * _bcast(grad_gamma)
    )
    return grad_x, grad_gamma, grad_beta
