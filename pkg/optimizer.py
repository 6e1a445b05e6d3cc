"""
Adam 최적화기와 ReduceLROnPlateau 방식 학습률 스케줄러
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
from errors import NumericalError, ShapeError

logger = config.setup_logger(__name__)


# ==============================================
# Adam
# ==============================================

@dataclass
class AdamState:
    """파라미터 경로별 1차/2차 모멘트와 스텝 카운터"""
    beta1: float = config.ADAM_BETA1
    beta2: float = config.ADAM_BETA2
    eps: float = config.ADAM_EPS
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"beta 는 [0, 1) 범위여야 합니다: {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ValueError(f"eps 는 양수여야 합니다: {self.eps}")

    def arrays(self) -> Dict[str, np.ndarray]:
        """체크포인트 저장용 평탄화"""
        out = {f"m/{k}": a for k, a in self.m.items()}
        out.update({f"v/{k}": a for k, a in self.v.items()})
        return out

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], step: int, **hyper) -> "AdamState":
        m = {k[2:]: a for k, a in arrays.items() if k.startswith("m/")}
        v = {k[2:]: a for k, a in arrays.items() if k.startswith("v/")}
        return cls(step=step, m=m, v=v, **hyper)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: AdamState, lr: float) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    편향 보정 Adam 한 스텝

    m ← β₁m + (1−β₁)g, v ← β₂v + (1−β₂)g², θ ← θ − lr·m̂/(√v̂ + ε)
    모멘트와 갱신은 float64 로 계산하고 파라미터는 원래 dtype 으로 돌려줍니다.
    기울기가 없는 파라미터는 그대로 둡니다.

    Args:
        params: 경로 → 파라미터 배열
        grads: 경로 → 기울기 배열
        state: 이전 상태 (변경하지 않음)
        lr: 학습률

    Returns:
        (새 파라미터 dict, 새 AdamState)

    Raises:
        NumericalError: NaN/Inf 기울기 (파라미터 경로 포함)
    """
    if lr <= 0:
        raise ValueError(f"학습률은 양수여야 합니다: {lr}")

    for path, g in grads.items():
        if path not in params:
            raise ShapeError(f"알 수 없는 파라미터 경로의 기울기: {path}")
        if g.shape != params[path].shape:
            raise ShapeError(f"{path}: 기울기 shape {g.shape} != 파라미터 {params[path].shape}")
        if not np.all(np.isfinite(g)):
            logger.error(f"❌ 비유한 기울기: {path}")
            raise NumericalError(f"non-finite gradient at {path}")

    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** step
    corr2 = 1.0 - b2 ** step

    new_params = dict(params)
    new_m = dict(state.m)
    new_v = dict(state.v)
    for path, g in grads.items():
        g64 = g.astype(np.float64)
        m = b1 * state.m.get(path, np.zeros_like(g64)) + (1.0 - b1) * g64
        v = b2 * state.v.get(path, np.zeros_like(g64)) + (1.0 - b2) * g64 * g64
        update = lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        theta = params[path]
        new_params[path] = (theta.astype(np.float64) - update).astype(theta.dtype)
        new_m[path] = m
        new_v[path] = v

    return new_params, AdamState(beta1=b1, beta2=b2, eps=state.eps, step=step, m=new_m, v=new_v)


# ==============================================
# Plateau 스케줄러
# ==============================================

@dataclass
class PlateauScheduler:
    """
    감시 값이 patience 에포크 연속으로 best 보다 엄격히 작아지지 않으면 lr 에 factor 를 곱합니다.
    감소 후 카운터는 0 으로 돌아갑니다.
    """
    lr: float = config.INITIAL_LR
    factor: float = config.PLATEAU_FACTOR
    patience: int = config.PLATEAU_PATIENCE
    best: Optional[float] = None
    bad_epochs: int = 0
    drops: List[int] = field(default_factory=list)
    epoch: int = 0

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValueError(f"factor 는 (0, 1) 범위여야 합니다: {self.factor}")
        if self.patience < 1:
            raise ValueError(f"patience 는 1 이상이어야 합니다: {self.patience}")
        if self.lr <= 0:
            raise ValueError(f"lr 은 양수여야 합니다: {self.lr}")

    def step(self, value: float) -> float:
        """에포크 하나의 감시 값을 반영하고 다음 에포크의 lr 을 반환"""
        self.epoch += 1
        if self.best is None or value < self.best:
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
                self.drops.append(self.epoch)
                logger.info(f"📉 학습률 감소 (에포크 {self.epoch}): {self.lr:.3e}")
        return self.lr

    def state_dict(self) -> dict:
        return {"lr": self.lr, "factor": self.factor, "patience": self.patience,
                "best": self.best, "bad_epochs": self.bad_epochs,
                "drops": list(self.drops), "epoch": self.epoch}

    @classmethod
    def from_state(cls, state: dict) -> "PlateauScheduler":
        return cls(**state)


def plateau_schedule(losses: Sequence[float], lr: float = config.INITIAL_LR,
                     factor: float = config.PLATEAU_FACTOR,
                     patience: int = config.PLATEAU_PATIENCE) -> List[float]:
    """
    손실 기록 전체에 스케줄러를 적용한 에포크별 lr 기록

    반환값의 i 번째 원소는 i+1 번째 에포크의 감시 값을 본 직후의 lr 입니다.
    """
    scheduler = PlateauScheduler(lr=lr, factor=factor, patience=patience)
    return [scheduler.step(v) for v in losses]
