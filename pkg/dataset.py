"""
데이터셋 모듈
팬텀 볼륨 → 슬라이스 → 2-NEX 입력 / 8-NEX 타깃 / 잡음 없는 오라클
σ₀ 보정, 학습/테스트 분할, 디스크 저장/로드
"""
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

import config
import storage
from errors import DataError, ShapeError
from metrics import IDENTICAL, psnr
from simulators import (
    ComplexImage,
    acquire_nex,
    default_gfactor,
    generate_phantom,
    random_volume,
    stationary_gfactor,
    volume_slice_spec,
)

logger = config.setup_logger(__name__)

# ==============================================
# 상수 정의
# ==============================================
VOLUME_SEED_STRIDE = 100_000
SIGMA0_SEARCH_RANGE = (1e-4, 1.0)
CALIBRATION_TOLERANCE = 0.01   # dB
CALIBRATION_MAX_ITER = 60
SPLITS = ("train", "test")


@dataclass
class DatasetConfig:
    """데이터셋 생성 설정 (sigma0=None 이면 목표 PSNR 로 보정, 0 이면 잡음 없음)

    noise_seed 를 주면 팬텀 (seed) 은 그대로 두고 잡음 스트림만 바꿉니다.
    """
    train_volumes: int = config.TRAIN_VOLUMES
    test_volumes: int = config.TEST_VOLUMES
    slices_per_volume: int = config.SLICES_PER_VOLUME
    image_size: int = config.IMAGE_SIZE
    sigma0: Optional[float] = None
    stationary: bool = False
    gfactor_peak: float = config.GFACTOR_PEAK
    plane: str = "sagittal"
    seed: int = 0
    noise_seed: Optional[int] = None
    target_psnr: float = config.TARGET_BASELINE_PSNR
    inner_structures: int = 8
    show_progress: bool = config.SHOW_PROGRESS

    def __post_init__(self):
        if self.train_volumes < 1 or self.test_volumes < 1 or self.slices_per_volume < 1:
            raise ValueError("볼륨/슬라이스 수는 1 이상이어야 합니다")
        if self.train_volumes + self.test_volumes > VOLUME_SEED_STRIDE:
            raise ValueError(f"볼륨 수 합계는 {VOLUME_SEED_STRIDE} 이하여야 합니다")
        if self.image_size < 16:
            raise ValueError(f"image_size 는 16 이상이어야 합니다: {self.image_size}")
        if self.sigma0 is not None and self.sigma0 < 0:
            raise ValueError(f"sigma0 는 0 이상이어야 합니다: {self.sigma0}")
        if self.plane not in config.IMAGING_PLANES:
            raise ValueError(f"plane 은 {config.IMAGING_PLANES} 중 하나여야 합니다: {self.plane}")
        if self.seed < 0:
            raise ValueError(f"seed 는 0 이상이어야 합니다: {self.seed}")
        if self.noise_seed is not None and self.noise_seed < 0:
            raise ValueError(f"noise_seed 는 0 이상이어야 합니다: {self.noise_seed}")


# ==============================================
# 데이터셋 타입
# ==============================================

def channels_magnitude(x: np.ndarray) -> np.ndarray:
    """[..., 2, H, W] (실수, 허수) → [..., H, W] 크기"""
    return np.hypot(x[..., 0, :, :], x[..., 1, :, :])


@dataclass
class Dataset:
    """
    inputs  [S, 4, H, W]  (Re₁, Im₁, Re₂, Im₂)
    targets [S, 2, H, W]  8-NEX 복소 평균
    oracle  [S, 2, H, W]  잡음 없는 팬텀
    slice_ids [S, 2]      (볼륨 시드, 슬라이스 인덱스)
    """
    inputs: np.ndarray
    targets: np.ndarray
    oracle: np.ndarray
    slice_ids: np.ndarray
    gfactor: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        n = self.inputs.shape[0]
        if self.inputs.ndim != 4 or self.inputs.shape[1] < 2 or self.inputs.shape[1] % 2:
            raise ShapeError(f"inputs 는 [S, 2K, H, W] 여야 합니다: {self.inputs.shape}")
        spatial = self.inputs.shape[2:]
        for name, arr in (("targets", self.targets), ("oracle", self.oracle)):
            if arr.shape != (n, 2) + spatial:
                raise ShapeError(f"{name} shape {arr.shape} != {(n, 2) + spatial}")
        if self.slice_ids.shape != (n, 2):
            raise ShapeError(f"slice_ids shape {self.slice_ids.shape} != {(n, 2)}")
        if self.gfactor.shape != spatial:
            raise ShapeError(f"gfactor shape {self.gfactor.shape} != {spatial}")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def image_shape(self) -> Tuple[int, int]:
        return tuple(self.inputs.shape[2:])

    @property
    def nex_count(self) -> int:
        return self.inputs.shape[1] // 2

    @property
    def scale(self) -> float:
        return float(self.meta["scale"])

    @property
    def plane(self) -> str:
        return self.meta.get("plane", "sagittal")

    @property
    def volume_seeds(self) -> List[int]:
        return sorted({int(v) for v in self.slice_ids[:, 0]})

    def slice_name(self, i: int) -> str:
        v, s = self.slice_ids[i]
        return f"v{int(v)}_s{int(s)}"

    def nex(self, i: int, k: int) -> ComplexImage:
        return ComplexImage(real=self.inputs[i, 2 * k].astype(np.float64),
                            imag=self.inputs[i, 2 * k + 1].astype(np.float64))

    def nex_pair(self, i: int) -> List[ComplexImage]:
        return [self.nex(i, 0), self.nex(i, 1)]

    def single_input(self) -> np.ndarray:
        """복소 평균 입력 [S, 2, H, W] (single 모드)"""
        if self.nex_count < 2:
            raise DataError("평균할 NEX 가 2개 이상 필요합니다")
        return 0.5 * (self.inputs[:, 0:2] + self.inputs[:, 2:4])

    def network_inputs(self, input_mode: str) -> np.ndarray:
        if input_mode == "dual":
            if self.nex_count != 2:
                raise DataError(f"dual 입력에는 NEX 2장이 필요합니다: {self.nex_count}")
            return self.inputs
        if input_mode == "single":
            return self.single_input()
        raise ValueError(f"알 수 없는 input_mode: {input_mode}")

    def baseline_magnitude(self) -> np.ndarray:
        """2NEX-avg 크기 [S, H, W]"""
        return channels_magnitude(self.single_input())

    def target_magnitude(self) -> np.ndarray:
        return channels_magnitude(self.targets)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(inputs=self.inputs[idx], targets=self.targets[idx], oracle=self.oracle[idx],
                       slice_ids=self.slice_ids[idx], gfactor=self.gfactor, meta=dict(self.meta))

    def holdout_volumes(self, n_volumes: int) -> Tuple["Dataset", Optional["Dataset"]]:
        """
        마지막 n_volumes 개 볼륨의 슬라이스를 검증셋으로 분리합니다.

        Returns:
            (학습용, 검증용). n_volumes = 0 이면 (self, None)
        """
        if n_volumes <= 0:
            return self, None
        seeds = self.volume_seeds
        if n_volumes >= len(seeds):
            raise DataError(f"검증 볼륨 {n_volumes}개를 빼면 학습 볼륨이 남지 않습니다 (전체 {len(seeds)})")
        held = np.isin(self.slice_ids[:, 0], seeds[-n_volumes:])
        fit, val = self.subset(np.flatnonzero(~held)), self.subset(np.flatnonzero(held))
        fit.meta["volume_seeds"] = seeds[:-n_volumes]
        val.meta.update(split="validation", volume_seeds=seeds[-n_volumes:])
        return fit, val

# ==============================================
# 시드
# ==============================================

def volume_seeds(seed: int, plane: str, n_train: int, n_test: int) -> Tuple[List[int], List[int]]:
    """평면별 시드 계열에서 학습/테스트 볼륨 시드를 겹치지 않게 배정"""
    plane_index = config.IMAGING_PLANES.index(plane)
    base = (seed * len(config.IMAGING_PLANES) + plane_index) * VOLUME_SEED_STRIDE
    train = [base + v for v in range(n_train)]
    test = [base + n_train + v for v in range(n_test)]
    return train, test


def check_disjoint(train_seeds: Sequence[int], test_seeds: Sequence[int]):
    overlap = sorted(set(train_seeds) & set(test_seeds))
    if overlap:
        raise DataError(f"학습/테스트 팬텀 시드가 겹칩니다: {overlap[:10]}")


# ==============================================
# 팬텀 / 획득
# ==============================================

@dataclass
class _CleanSlices:
    images: List[ComplexImage]
    ids: List[Tuple[int, int]]


def _clean_slices(seeds: Sequence[int], cfg: DatasetConfig, label: str) -> _CleanSlices:
    h = w = cfg.image_size
    images, ids = [], []
    for vseed in tqdm(seeds, desc=f"phantom:{label}", disable=not cfg.show_progress, leave=False):
        volume = random_volume(vseed, n_inner=cfg.inner_structures)
        for s in range(cfg.slices_per_volume):
            images.append(generate_phantom(volume_slice_spec(volume, s, cfg.slices_per_volume, h, w)))
            ids.append((vseed, s))
    return _CleanSlices(images=images, ids=ids)


def _gfactor(cfg: DatasetConfig) -> np.ndarray:
    n = cfg.image_size
    return stationary_gfactor(n, n) if cfg.stationary else default_gfactor(n, n, cfg.gfactor_peak)


def noise_stream_seed(slice_id: Tuple[int, int], noise_seed: Optional[int] = None) -> Tuple[int, ...]:
    """슬라이스 잡음 시드 (볼륨 시드, 슬라이스[, noise_seed])"""
    return tuple(slice_id) if noise_seed is None else (*slice_id, noise_seed)


def _acquire(clean: _CleanSlices, sigma0: float, gfactor: np.ndarray,
             noise_seed: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """(inputs [S,4,H,W], targets [S,2,H,W]). 입력은 NEX 0–1, 타깃은 독립 NEX 2–9 의 평균"""
    inputs, targets = [], []
    for img, slice_id in zip(clean.images, clean.ids):
        sid = noise_stream_seed(slice_id, noise_seed)
        if sigma0 == 0:
            pair = [img, img]
            target = img
        else:
            pair = acquire_nex(img, sigma0, gfactor, config.INPUT_NEX, seed=sid).slices
            target = acquire_nex(img, sigma0, gfactor, config.TARGET_NEX, seed=sid,
                                 first_index=config.INPUT_NEX).average()
        inputs.append(np.concatenate([p.to_channels(np.float64) for p in pair]))
        targets.append(target.to_channels(np.float64))
    return np.stack(inputs), np.stack(targets)


def intensity_scale(targets: np.ndarray) -> float:
    """8-NEX 타깃 최대 크기를 255 로 옮기는 배율"""
    peak = float(channels_magnitude(targets).max())
    if peak <= 0:
        raise DataError("타깃 영상이 모두 0 입니다")
    return config.PEAK_VALUE / peak


def mean_baseline_psnr(inputs: np.ndarray, targets: np.ndarray, scale: float) -> float:
    """2NEX-avg 크기 vs 8-NEX 타깃 크기의 평균 PSNR (동일 슬라이스 제외)"""
    avg = channels_magnitude(0.5 * (inputs[:, 0:2] + inputs[:, 2:4])) * scale
    ref = channels_magnitude(targets) * scale
    values = [psnr(a, r) for a, r in zip(avg, ref)]
    numeric = [v for v in values if v != IDENTICAL]
    if not numeric:
        return float("inf")
    return float(np.mean(numeric))


# ==============================================
# σ₀ 보정
# ==============================================

def _unit_noise(clean: _CleanSlices, gfactor: np.ndarray,
                noise_seed: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """σ₀ = 1 잡음 성분 (입력, 타깃 평균). 획득 = clean + σ₀ · 잡음"""
    base = np.stack([img.to_channels(np.float64) for img in clean.images])
    unit_inputs, unit_targets = _acquire(clean, 1.0, gfactor, noise_seed)
    return base, unit_inputs - np.concatenate([base, base], axis=1), unit_targets - base


def calibrate_sigma0(clean: _CleanSlices, gfactor: np.ndarray,
                     target_psnr: float = config.TARGET_BASELINE_PSNR,
                     noise_seed: Optional[int] = None) -> Tuple[float, float]:
    """
    평균 2NEX-avg PSNR 이 target_psnr 이 되도록 σ₀ 를 로그 공간 이분 탐색합니다.
    같은 난수 스트림을 재사용하므로 PSNR 은 σ₀ 에 대해 매끄럽게 감소합니다.

    Returns:
        (σ₀, 달성 PSNR)
    """
    base, n_in, n_tg = _unit_noise(clean, gfactor, noise_seed)
    base_in = np.concatenate([base, base], axis=1)

    def measure(sigma0: float) -> float:
        targets = base + sigma0 * n_tg
        return mean_baseline_psnr(base_in + sigma0 * n_in, targets, intensity_scale(targets))

    lo, hi = np.log(SIGMA0_SEARCH_RANGE[0]), np.log(SIGMA0_SEARCH_RANGE[1])
    if not measure(np.exp(hi)) < target_psnr < measure(np.exp(lo)):
        raise DataError(f"σ₀ 탐색 범위 {SIGMA0_SEARCH_RANGE} 에서 목표 PSNR {target_psnr} dB 에 도달할 수 없습니다")

    sigma0, achieved = float(np.exp(0.5 * (lo + hi))), float("nan")
    for _ in range(CALIBRATION_MAX_ITER):
        mid = 0.5 * (lo + hi)
        sigma0 = float(np.exp(mid))
        achieved = measure(sigma0)
        if abs(achieved - target_psnr) < CALIBRATION_TOLERANCE:
            break
        if achieved > target_psnr:
            lo = mid
        else:
            hi = mid
    logger.info(f"🎚️ σ₀ 보정: {sigma0:.6f} → 2NEX-avg PSNR {achieved:.4f} dB")
    return sigma0, achieved


# ==============================================
# 데이터셋 생성
# ==============================================

def build_dataset(cfg: DatasetConfig, train_seeds: Optional[Sequence[int]] = None,
                  test_seeds: Optional[Sequence[int]] = None) -> Tuple[Dataset, Dataset]:
    """
    학습/테스트 데이터셋을 생성합니다.

    Args:
        cfg: 데이터셋 설정
        train_seeds / test_seeds: 볼륨 시드를 직접 지정 (기본: 평면별 시드 계열)

    Returns:
        (학습 Dataset, 테스트 Dataset)

    Raises:
        DataError: 학습/테스트 시드가 겹침
    """
    start = time.time()
    default_train, default_test = volume_seeds(cfg.seed, cfg.plane, cfg.train_volumes, cfg.test_volumes)
    train_seeds = list(train_seeds) if train_seeds is not None else default_train
    test_seeds = list(test_seeds) if test_seeds is not None else default_test
    if not train_seeds or not test_seeds:
        raise DataError("학습/테스트 볼륨 시드가 비어 있습니다")
    check_disjoint(train_seeds, test_seeds)

    logger.info(f"🧪 데이터셋 생성: {cfg.plane}, 학습 {len(train_seeds)} / 테스트 {len(test_seeds)} 볼륨 "
                f"× {cfg.slices_per_volume} 슬라이스, {cfg.image_size}×{cfg.image_size}")

    gfactor = _gfactor(cfg)
    train_clean = _clean_slices(train_seeds, cfg, "train")
    test_clean = _clean_slices(test_seeds, cfg, "test")

    if cfg.sigma0 is None:
        sigma0, _ = calibrate_sigma0(train_clean, gfactor, cfg.target_psnr, cfg.noise_seed)
    else:
        sigma0 = float(cfg.sigma0)

    train_inputs, train_targets = _acquire(train_clean, sigma0, gfactor, cfg.noise_seed)
    test_inputs, test_targets = _acquire(test_clean, sigma0, gfactor, cfg.noise_seed)
    scale = intensity_scale(train_targets)
    baseline = mean_baseline_psnr(train_inputs, train_targets, scale)

    common = {"plane": cfg.plane, "sigma0": sigma0, "scale": scale,
              "stationary": cfg.stationary, "image_size": cfg.image_size,
              "slices_per_volume": cfg.slices_per_volume, "seed": cfg.seed, "noise_seed": cfg.noise_seed,
              "baseline_psnr": baseline}

    def assemble(split, clean, inputs, targets, seeds) -> Dataset:
        oracle = np.stack([img.to_channels(np.float64) for img in clean.images])
        return Dataset(inputs=inputs, targets=targets, oracle=oracle,
                       slice_ids=np.asarray(clean.ids, dtype=np.int64), gfactor=gfactor,
                       meta={**common, "split": split, "volume_seeds": list(seeds)})

    train_set = assemble("train", train_clean, train_inputs, train_targets, train_seeds)
    test_set = assemble("test", test_clean, test_inputs, test_targets, test_seeds)

    logger.info(f"✅ 데이터셋 완료: 학습 {len(train_set)} / 테스트 {len(test_set)} 슬라이스, "
                f"σ₀={sigma0:.6f}, scale={scale:.4f}, 2NEX-avg {baseline:.4f} dB "
                f"({time.time() - start:.1f}초)")
    return train_set, test_set


# ==============================================
# 저장 / 로드
# ==============================================

ARRAY_FIELDS = ("inputs", "targets", "oracle")


def save_dataset(out_dir: str, train_set: Dataset, test_set: Dataset) -> List[str]:
    """
    디렉터리 구조:
        gfactor.nxd
        train/{inputs,targets,oracle}.nxd
        test/{inputs,targets,oracle}.nxd
    """
    paths = [storage.write_container(os.path.join(out_dir, "gfactor" + storage.CONTAINER_SUFFIX),
                                     train_set.gfactor, role="gfactor")]
    for split, ds in (("train", train_set), ("test", test_set)):
        meta = {**ds.meta, "slice_ids": ds.slice_ids.tolist()}
        for name in ARRAY_FIELDS:
            path = os.path.join(out_dir, split, name + storage.CONTAINER_SUFFIX)
            paths.append(storage.write_container(path, getattr(ds, name), role=f"{split}/{name}",
                                                 seed=ds.meta.get("seed"), meta=meta))
    return paths


def load_split(data_dir: str, split: str) -> Dataset:
    if split not in SPLITS:
        raise ValueError(f"split 은 {SPLITS} 중 하나여야 합니다: {split}")
    gfactor = storage.read_container(os.path.join(data_dir, "gfactor" + storage.CONTAINER_SUFFIX)).array
    containers = {name: storage.read_container(os.path.join(data_dir, split, name + storage.CONTAINER_SUFFIX))
                  for name in ARRAY_FIELDS}
    meta = dict(containers["inputs"].meta)
    slice_ids = np.asarray(meta.pop("slice_ids"), dtype=np.int64).reshape(-1, 2)
    return Dataset(inputs=containers["inputs"].array, targets=containers["targets"].array,
                   oracle=containers["oracle"].array, slice_ids=slice_ids, gfactor=gfactor, meta=meta)


def load_dataset(data_dir: str) -> Tuple[Dataset, Dataset]:
    """save_dataset 의 역. 학습/테스트 시드 분리를 다시 확인합니다"""
    if not os.path.isdir(data_dir):
        raise DataError(f"데이터셋 디렉터리가 없습니다: {data_dir}")
    train_set, test_set = load_split(data_dir, "train"), load_split(data_dir, "test")
    check_disjoint(train_set.volume_seeds, test_set.volume_seeds)
    if train_set.image_shape != test_set.image_shape:
        raise ShapeError(f"학습/테스트 영상 크기가 다릅니다: {train_set.image_shape} / {test_set.image_shape}")
    return train_set, test_set
