"""
중앙 차분 기반 기울기 검사 (float64)
"""
from typing import Callable, Iterable, Optional

import numpy as np


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-6,
                       indices: Optional[Iterable[tuple]] = None) -> np.ndarray:
    """
    스칼라 함수 f 의 x 에 대한 중앙 차분 기울기

    x 를 제자리에서 흔들었다가 복원합니다. f 는 x 를 클로저로 참조해야 합니다.

    Args:
        f: 인자 없는 스칼라 함수
        x: float64 배열 (제자리 수정됨)
        h: 차분 간격
        indices: 검사할 원소 인덱스 (None 이면 전체)

    Returns:
        np.ndarray: x 와 같은 shape 의 수치 기울기 (검사하지 않은 원소는 0)
    """
    if x.dtype != np.float64:
        raise TypeError(f"기울기 검사는 float64 에서만 수행합니다: {x.dtype}")

    grad = np.zeros_like(x)
    targets = indices if indices is not None else np.ndindex(x.shape)
    for idx in targets:
        original = x[idx]
        x[idx] = original + h
        f_plus = f()
        x[idx] = original - h
        f_minus = f()
        x[idx] = original
        grad[idx] = (f_plus - f_minus) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """max|a − n| / max(max|a|, max|n|, floor)"""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)),
                float(np.max(np.abs(numeric), initial=0.0)), floor)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def sample_indices(shape: tuple, count: int, rng: np.random.Generator) -> list:
    """큰 배열에서 검사할 원소를 무작위로 선택"""
    total = int(np.prod(shape))
    flat = rng.choice(total, size=min(count, total), replace=False)
    return [np.unravel_index(i, shape) for i in sorted(flat)]
