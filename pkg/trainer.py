"""
학습 하네스
에포크 루프 (셔플 → 순전파 → 결합 손실 → 역전파 → Adam), plateau 스케줄,
체크포인트/재개, 테스트셋 평가, 변형 비교 실험
"""
import os
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

import config
import storage
from dataset import Dataset
from errors import ConfigError, NumericalError, ShapeError
from layers import channel_mean_pair, magnitude, magnitude_backward
from metrics import (
    DEFAULT_SSIM,
    LOSS_FORMS,
    MetricsRecord,
    SsimConfig,
    aggregate,
    combined_loss,
    combined_loss_grad,
    evaluate_pair,
)
from network import (
    INPUT_MODES,
    VARIANTS,
    NetworkConfig,
    NetworkParams,
    backward,
    build_network,
    denoise_batch,
    forward,
)
from optimizer import AdamState, PlateauScheduler, adam_step
from utils import config_hash, substream

logger = config.setup_logger(__name__)

LAST_CHECKPOINT = "last"
BEST_CHECKPOINT = "best"
# 결과에 영향을 주지 않는 키 (재개 시 해시 비교에서 제외)
NON_RESULT_KEYS = ("epochs", "show_progress")


# ==============================================
# 설정 / 기록 타입
# ==============================================

@dataclass
class TrainConfig:
    lr: float = config.INITIAL_LR
    plateau_factor: float = config.PLATEAU_FACTOR
    plateau_patience: int = config.PLATEAU_PATIENCE
    batch_size: int = config.BATCH_SIZE
    epochs: int = config.DEFAULT_EPOCHS
    seed: int = 0
    image_size: int = config.IMAGE_SIZE
    input_mode: str = "dual"
    variant: str = "full"
    loss_form: str = config.LOSS_FORM
    ssim_weight: float = config.SSIM_LOSS_WEIGHT
    extract_width: int = config.EXTRACT_WIDTH
    bridge_width: int = config.BRIDGE_WIDTH
    val_volumes: int = 0
    show_progress: bool = config.SHOW_PROGRESS

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr 은 양수여야 합니다: {self.lr}")
        if not 0 < self.plateau_factor < 1:
            raise ValueError(f"plateau_factor 는 (0, 1) 범위여야 합니다: {self.plateau_factor}")
        if self.plateau_patience < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("plateau_patience/batch_size 는 1 이상, epochs 는 0 이상이어야 합니다")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode 는 {INPUT_MODES} 중 하나여야 합니다: {self.input_mode}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant 는 {VARIANTS} 중 하나여야 합니다: {self.variant}")
        if self.loss_form not in LOSS_FORMS:
            raise ValueError(f"loss_form 은 {LOSS_FORMS} 중 하나여야 합니다: {self.loss_form}")
        if self.seed < 0:
            raise ValueError(f"seed 는 0 이상이어야 합니다: {self.seed}")
        if self.val_volumes < 0:
            raise ValueError(f"val_volumes 는 0 이상이어야 합니다: {self.val_volumes}")

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(input_mode=self.input_mode, variant=self.variant,
                             extract_width=self.extract_width, bridge_width=self.bridge_width)

    def result_hash(self) -> str:
        values = config.config_to_dict(self)
        for key in NON_RESULT_KEYS:
            values.pop(key, None)
        return config_hash(values)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: Optional[float]
    lr: float
    wall_time: float


@dataclass
class TrainingHistory:
    """에포크별 손실/lr/소요 시간과 체크포인트 경로"""
    epochs: List[EpochRecord] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_loss: Optional[float] = None

    @property
    def lrs(self) -> List[float]:
        return [e.lr for e in self.epochs]

    @property
    def train_losses(self) -> List[float]:
        return [e.train_loss for e in self.epochs]

    def to_rows(self) -> List[dict]:
        return [vars(e).copy() for e in self.epochs]

    def to_dict(self) -> dict:
        return {"epochs": self.to_rows(), "checkpoints": list(self.checkpoints),
                "best_epoch": self.best_epoch, "best_loss": self.best_loss}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingHistory":
        return cls(epochs=[EpochRecord(**row) for row in data.get("epochs", [])],
                   checkpoints=list(data.get("checkpoints", [])),
                   best_epoch=data.get("best_epoch"), best_loss=data.get("best_loss"))


# ==============================================
# 손실 / 기울기
# ==============================================

def batch_loss_and_grads(params: NetworkParams, x: np.ndarray, target_mag: np.ndarray,
                         scale: float, cfg: TrainConfig,
                         ssim_cfg: SsimConfig = DEFAULT_SSIM):
    """
    배치 평균 결합 손실과 파라미터 기울기

    손실은 배율 scale 로 [0, 255] 에 옮긴 크기 영상에서 계산합니다.

    Args:
        x: 네트워크 입력 [N, C, H, W]
        target_mag: 배율 적용된 타깃 크기 [N, H, W]

    Returns:
        (손실, 경로 → 기울기, BN running 통계 갱신)
    """
    trace = forward(params, x, mode="train")
    mag = magnitude(trace.h)
    n = x.shape[0]

    total = 0.0
    grad_mag = np.zeros(mag.shape, dtype=np.float64)
    for i in range(n):
        loss_i, grad_i = combined_loss_grad(mag[i, 0].astype(np.float64) * scale, target_mag[i],
                                            ssim_cfg, cfg.loss_form, cfg.ssim_weight)
        total += loss_i
        grad_mag[i, 0] = grad_i * (scale / n)
    loss = total / n
    if not np.isfinite(loss):
        return loss, {}, trace.bn_updates

    grad_h = magnitude_backward(grad_mag.astype(mag.dtype), trace.h, mag)
    grads = backward(params, trace, grad_h).params
    return loss, grads, trace.bn_updates


def _batches(n: int, batch_size: int):
    for start in range(0, n, batch_size):
        yield start, min(start + batch_size, n)


def validation_loss(params: NetworkParams, dataset: Dataset, cfg: TrainConfig,
                    ssim_cfg: SsimConfig = DEFAULT_SSIM) -> float:
    """eval 모드 평균 결합 손실"""
    x_all = dataset.network_inputs(cfg.input_mode).astype(np.float32)
    target = dataset.target_magnitude() * dataset.scale
    losses = []
    for start, stop in _batches(len(dataset), cfg.batch_size):
        _, mag = denoise_batch(params, x_all[start:stop])
        for i, m in enumerate(mag):
            losses.append(combined_loss(m.astype(np.float64) * dataset.scale, target[start + i],
                                        ssim_cfg, cfg.loss_form, cfg.ssim_weight))
    return float(np.mean(losses))


# ==============================================
# 학습 루프
# ==============================================

def _check_geometry(cfg: TrainConfig, *datasets: Optional[Dataset]):
    expected = (cfg.image_size, cfg.image_size)
    for ds in datasets:
        if ds is not None and ds.image_shape != expected:
            raise ShapeError(f"데이터셋 영상 크기 {ds.image_shape} != 설정 {expected}")


def _save(ckpt_root: str, name: str, params: NetworkParams, adam: AdamState,
          scheduler: PlateauScheduler, history: TrainingHistory, cfg: TrainConfig, epoch: int) -> str:
    info = {
        "epoch": epoch,
        "config": config.config_to_dict(cfg),
        "config_hash": cfg.result_hash(),
        "adam_step": adam.step,
        "scheduler": scheduler.state_dict(),
        "history": history.to_dict(),
    }
    path = os.path.join(ckpt_root, name)
    storage.save_checkpoint(path, params.state(), config.config_to_dict(params.config), info,
                            adam_arrays=adam.arrays())
    return path


def params_from_checkpoint(ckpt: storage.Checkpoint) -> NetworkParams:
    """체크포인트 → NetworkParams (레이어 구조는 저장된 네트워크 설정으로 재구성)"""
    try:
        net_cfg = NetworkConfig(**ckpt.network)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"체크포인트 네트워크 설정 오류: {e}")
    skeleton = build_network(net_cfg, seed=0)
    missing = set(skeleton.state()) - set(ckpt.params)
    if missing:
        raise ConfigError(f"체크포인트에 파라미터가 없습니다: {sorted(missing)[:5]}")
    return skeleton.with_arrays(ckpt.params)


def train(cfg: TrainConfig, train_set: Dataset, val_set: Optional[Dataset] = None,
          checkpoint_dir: Optional[str] = None,
          resume: bool = False) -> Tuple[NetworkParams, TrainingHistory]:
    """
    네트워크를 학습합니다.

    plateau 스케줄러는 에포크 평균 학습 손실을 감시합니다.
    checkpoint_dir 가 있으면 매 에포크 last/ 를 갱신하고, 검증 손실
    (검증셋이 없으면 학습 손실) 이 최저일 때 best/ 를 갱신합니다.

    Args:
        cfg: 학습 설정
        train_set: 학습 데이터셋
        val_set: 검증 데이터셋 (선택)
        checkpoint_dir: 체크포인트 루트 (선택)
        resume: last/ 체크포인트에서 이어서 학습

    Returns:
        (마지막 파라미터, TrainingHistory)

    Raises:
        NumericalError: NaN/Inf 손실 (배치 인덱스 포함)
    """
    _check_geometry(cfg, train_set, val_set)
    params = build_network(cfg.network_config(), cfg.seed)
    adam = AdamState()
    scheduler = PlateauScheduler(lr=cfg.lr, factor=cfg.plateau_factor, patience=cfg.plateau_patience)
    history = TrainingHistory()
    start_epoch = 0

    if resume:
        if checkpoint_dir is None:
            raise ConfigError("재개하려면 checkpoint_dir 가 필요합니다")
        last = storage.load_checkpoint(os.path.join(checkpoint_dir, LAST_CHECKPOINT))
        if last.info.get("config_hash") != cfg.result_hash():
            raise ConfigError("체크포인트 설정 해시가 현재 설정과 다릅니다")
        params = params_from_checkpoint(last)
        adam = AdamState.from_arrays(last.adam, step=int(last.info["adam_step"]))
        scheduler = PlateauScheduler.from_state(last.info["scheduler"])
        history = TrainingHistory.from_dict(last.info["history"])
        start_epoch = int(last.info["epoch"])
        logger.info(f"🔁 체크포인트에서 재개: 에포크 {start_epoch}")
    elif checkpoint_dir is not None:
        # 에포크 0 (초기화 상태) 체크포인트
        _save(checkpoint_dir, LAST_CHECKPOINT, params, adam, scheduler, history, cfg, 0)
        _save(checkpoint_dir, BEST_CHECKPOINT, params, adam, scheduler, history, cfg, 0)

    x_all = train_set.network_inputs(cfg.input_mode).astype(np.float32)
    target_all = train_set.target_magnitude() * train_set.scale
    n = len(train_set)

    logger.info(f"🏋️ 학습 시작: {cfg.variant}/{cfg.input_mode}, {n} 슬라이스, "
                f"에포크 {start_epoch}→{cfg.epochs}, 배치 {cfg.batch_size}, 손실 {cfg.loss_form}")
    run_start = time.time()

    for epoch in range(start_epoch, cfg.epochs):
        epoch_start = time.time()
        lr = scheduler.lr
        order = substream(cfg.seed, "shuffle", epoch).permutation(n)
        batch_losses = []

        batches = list(_batches(n, cfg.batch_size))
        for b, (start, stop) in enumerate(tqdm(batches, desc=f"epoch {epoch + 1}",
                                               disable=not cfg.show_progress, leave=False)):
            idx = order[start:stop]
            loss, grads, bn_updates = batch_loss_and_grads(params, x_all[idx], target_all[idx],
                                                           train_set.scale, cfg)
            if not np.isfinite(loss):
                logger.error(f"❌ 비유한 손실: 에포크 {epoch + 1}, 배치 {b}")
                raise NumericalError(f"non-finite loss at epoch {epoch + 1}, batch {b}")
            new_arrays, adam = adam_step(params.trainable(), grads, adam, lr)
            params = params.with_arrays(new_arrays).with_running_stats(bn_updates)
            batch_losses.append(loss)

        train_loss = float(np.mean(batch_losses))
        val_loss = validation_loss(params, val_set, cfg) if val_set is not None else None
        scheduler.step(train_loss)
        history.epochs.append(EpochRecord(epoch=epoch + 1, train_loss=train_loss, val_loss=val_loss,
                                          lr=lr, wall_time=time.time() - epoch_start))

        monitored = val_loss if val_loss is not None else train_loss
        improved = history.best_loss is None or monitored < history.best_loss
        if improved:
            history.best_loss, history.best_epoch = monitored, epoch + 1

        if checkpoint_dir is not None:
            history.checkpoints.append(os.path.join(checkpoint_dir, LAST_CHECKPOINT))
            _save(checkpoint_dir, LAST_CHECKPOINT, params, adam, scheduler, history, cfg, epoch + 1)
            if improved:
                _save(checkpoint_dir, BEST_CHECKPOINT, params, adam, scheduler, history, cfg, epoch + 1)

        val_text = f", val {val_loss:.4f}" if val_loss is not None else ""
        logger.info(f"   에포크 {epoch + 1}/{cfg.epochs}: train {train_loss:.4f}{val_text}, lr {lr:.2e}")

    logger.info(f"✅ 학습 완료 ({time.time() - run_start:.1f}초)")
    return params, history


# ==============================================
# 평가
# ==============================================

def method_label(variant: str, input_mode: str = "dual") -> str:
    label = config.VARIANT_LABELS[variant]
    if input_mode != "dual":
        label = f"{label} ({config.INPUT_MODE_LABELS[input_mode]})"
    return label


def prediction_record(dataset: Dataset, pred_mag: np.ndarray, method: str,
                      ssim_cfg: SsimConfig = DEFAULT_SSIM) -> MetricsRecord:
    """예측 크기 [S, H, W] (배율 적용 전) 의 슬라이스별 PSNR/SSIM"""
    target = dataset.target_magnitude() * dataset.scale
    record = MetricsRecord(method=method, plane=dataset.plane)
    for i in range(len(dataset)):
        record.add(evaluate_pair(pred_mag[i] * dataset.scale, target[i], ssim_cfg,
                                 slice_id=dataset.slice_name(i)))
    return record


def baseline_magnitude(dataset: Dataset) -> np.ndarray:
    """네트워크와 같은 연산 (쌍 평균 → 크기) 으로 계산한 2NEX-avg 크기 [S, H, W]"""
    return magnitude(channel_mean_pair(dataset.inputs.astype(np.float64)))[:, 0]


def baseline_record(dataset: Dataset, ssim_cfg: SsimConfig = DEFAULT_SSIM) -> MetricsRecord:
    return prediction_record(dataset, baseline_magnitude(dataset), config.BASELINE_METHOD, ssim_cfg)


def predict_magnitude(params: NetworkParams, dataset: Dataset,
                      batch_size: int = config.BATCH_SIZE) -> np.ndarray:
    """float64 eval 모드 디노이즈 크기 [S, H, W]"""
    p64 = params.astype(np.float64)
    x_all = dataset.network_inputs(params.config.input_mode).astype(np.float64)
    out = [denoise_batch(p64, x_all[start:stop])[1] for start, stop in _batches(len(dataset), batch_size)]
    return np.concatenate(out, axis=0)


def evaluate_model(params: NetworkParams, dataset: Dataset, method: Optional[str] = None,
                   ssim_cfg: SsimConfig = DEFAULT_SSIM,
                   batch_size: int = config.BATCH_SIZE) -> MetricsRecord:
    """테스트셋 슬라이스별 PSNR/SSIM (8-NEX 타깃 기준)"""
    label = method or method_label(params.config.variant, params.config.input_mode)
    return prediction_record(dataset, predict_magnitude(params, dataset, batch_size), label, ssim_cfg)


# ==============================================
# 변형 비교 실험
# ==============================================

@dataclass
class AblationResult:
    """메서드 → 시드 → MetricsRecord"""
    baseline: MetricsRecord
    per_seed: Dict[str, Dict[int, MetricsRecord]]
    seeds: List[int]
    tolerance: float = config.ABLATION_TOLERANCE_DB

    def pooled(self, method: str) -> MetricsRecord:
        pooled = MetricsRecord(method=method, plane=self.baseline.plane)
        for seed in self.seeds:
            for entry in self.per_seed[method][seed].slices:
                pooled.add(entry)
        return pooled

    def _rows(self, methods: Sequence[str]) -> List[dict]:
        rows = [self.baseline.summary_row()]
        rows.extend(self.pooled(m).summary_row() for m in methods if m in self.per_seed)
        return rows

    def variant_rows(self) -> List[dict]:
        return self._rows([method_label(v) for v in VARIANTS])

    def input_rows(self) -> List[dict]:
        return self._rows([method_label("full", "single"), method_label("full", "dual")])

    def seed_means(self, method: str) -> List[float]:
        return [self.per_seed[method][s].psnr_summary()[0] for s in self.seeds]

    def seed_rows(self) -> List[dict]:
        """메서드별 시드 평균 PSNR/SSIM 과 시드 간 표준편차"""
        rows = []
        for method, by_seed in self.per_seed.items():
            psnr_means = self.seed_means(method)
            ssim_means = [by_seed[s].ssim_summary()[0] for s in self.seeds]
            row = {"method": method}
            for seed, p, s in zip(self.seeds, psnr_means, ssim_means):
                row[f"PSNR seed {seed}"] = p
                row[f"SSIM seed {seed}"] = s
            row["PSNR seed mean"], row["PSNR seed std"] = aggregate(psnr_means)
            row["SSIM seed mean"], row["SSIM seed std"] = aggregate(ssim_means)
            rows.append(row)
        return rows

    def dominance(self) -> Dict[str, bool]:
        """전체 모델 평균 PSNR ≥ 비교 대상 − 허용 오차"""
        full = method_label("full")
        if full not in self.per_seed:
            return {}
        full_mean = float(np.mean(self.seed_means(full)))
        checks = {}
        for method in self.per_seed:
            if method != full:
                checks[f"{full} >= {method}"] = full_mean >= float(np.mean(self.seed_means(method))) - self.tolerance
        return checks


def run_ablation(train_set: Dataset, test_set: Dataset, seeds: Sequence[int], cfg: TrainConfig,
                 variants: Sequence[str] = VARIANTS, include_single: bool = True,
                 checkpoint_root: Optional[str] = None) -> AblationResult:
    """
    각 변형을 같은 예산/시드로 학습하고 테스트셋에서 평가합니다.
    검증셋은 학습셋에서 cfg.val_volumes 개 볼륨을 떼어 만들고, 테스트셋은 평가에만 씁니다.

    Args:
        seeds: 학습 시드 목록 (같은 시드는 모든 변형에 동일하게 적용)
        cfg: 공통 학습 설정 (seed/variant/input_mode 는 덮어씀)
        include_single: 단일 입력 전체 모델도 학습
    """
    if not seeds:
        raise ConfigError("비교 실험에는 최소 1개의 시드가 필요합니다")
    fit_set, val_set = train_set.holdout_volumes(cfg.val_volumes)
    runs = [(v, "dual") for v in variants]
    if include_single:
        runs.append(("full", "single"))

    logger.info(f"🔬 비교 실험: {len(runs)}개 구성 × 시드 {list(seeds)}")
    per_seed: Dict[str, Dict[int, MetricsRecord]] = {}
    for seed in seeds:
        for variant, mode in runs:
            run_cfg = replace(cfg, seed=int(seed), variant=variant, input_mode=mode)
            label = method_label(variant, mode)
            ckpt = (os.path.join(checkpoint_root, f"{variant}_{mode}_seed{seed}")
                    if checkpoint_root else None)
            params, _ = train(run_cfg, fit_set, val_set, checkpoint_dir=ckpt)
            record = evaluate_model(params, test_set, label)
            per_seed.setdefault(label, {})[int(seed)] = record
            logger.info(f"   {label} seed {seed}: PSNR {record.psnr_summary()[0]:.4f} dB")

    result = AblationResult(baseline=baseline_record(test_set), per_seed=per_seed,
                            seeds=[int(s) for s in seeds])
    for check, ok in result.dominance().items():
        logger.info(f"   {'✅' if ok else '⚠️'} {check} (허용 오차 {result.tolerance} dB)")
    return result
