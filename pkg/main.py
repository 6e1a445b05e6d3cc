#!/usr/bin/env python3
"""
메인 실행 스크립트
시뮬레이션 → 학습 → 디노이즈/평가 → 비교 실험 → 잡음 통계
"""
import os
import sys
from dotenv import load_dotenv
load_dotenv()

import argparse
import time
import traceback
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

import config
import reporter
import storage
from dataset import DatasetConfig, build_dataset, load_dataset, load_split, save_dataset
from errors import ConfigError, DataError, DenoiseError, NumericalError, ShapeError
from network import denoise_batch
from simulators import analyze_noise_pairs, local_variance_map, noise_map, signal_strengthened_map
from trainer import (
    BEST_CHECKPOINT,
    LAST_CHECKPOINT,
    TrainConfig,
    baseline_magnitude,
    baseline_record,
    evaluate_model,
    method_label,
    params_from_checkpoint,
    predict_magnitude,
    prediction_record,
    run_ablation,
    train,
)

# 로거 설정
logger = config.setup_logger(__name__)

COMMANDS = ["simulate", "train", "denoise", "evaluate", "ablate", "noise-stats"]
CONFIG_SECTIONS = ("dataset", "train")

# 설정 키 (CLI 플래그는 같은 이름의 --kebab-case)
DATASET_FLAGS = ("train_volumes", "test_volumes", "slices_per_volume", "image_size", "sigma0",
                 "noise_seed", "stationary", "plane", "seed")
TRAIN_FLAGS = ("epochs", "variant", "input_mode", "loss_form", "batch_size", "lr", "seed",
               "image_size", "val_volumes")


# ==============================================
# 설정 병합
# ==============================================

def load_sections(path: Optional[str]) -> Dict[str, Dict[str, Any]]:
    """JSON 설정 파일 → {"dataset": {...}, "train": {...}}"""
    data = config.load_json_config(path)
    unknown = set(data) - set(CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"알 수 없는 설정 섹션: {sorted(unknown)} (허용: {list(CONFIG_SECTIONS)})")
    for name, values in data.items():
        if not isinstance(values, dict):
            raise ConfigError(f"설정 섹션 '{name}' 은 객체여야 합니다")
    return {name: dict(data.get(name, {})) for name in CONFIG_SECTIONS}


def flag_values(args: argparse.Namespace, keys: Sequence[str]) -> Dict[str, Any]:
    return {key: getattr(args, key, None) for key in keys}


def dataset_config(args: argparse.Namespace) -> DatasetConfig:
    sections = load_sections(args.config)
    overrides = flag_values(args, DATASET_FLAGS)
    overrides["show_progress"] = False if args.no_progress else None
    return config.build_run_config(DatasetConfig, sections["dataset"], overrides)


def train_config(args: argparse.Namespace, image_size: Optional[int] = None) -> TrainConfig:
    """학습 설정 (image_size 는 플래그/파일에 없으면 데이터셋 크기를 따름)"""
    sections = load_sections(args.config)
    file_values = sections["train"]
    overrides = flag_values(args, TRAIN_FLAGS)
    if image_size is not None and overrides.get("image_size") is None and "image_size" not in file_values:
        overrides["image_size"] = image_size
    overrides["show_progress"] = False if args.no_progress else None
    return config.build_run_config(TrainConfig, file_values, overrides)


def out_dir_for(args: argparse.Namespace, command: str) -> str:
    return args.out or os.path.join(config.OUTPUT_ROOT, command)


def require(value, flag: str):
    if not value:
        raise ConfigError(f"{flag} 가 필요합니다")
    return value


def first(values: Optional[Sequence[str]], flag: str) -> str:
    return require(values, flag)[0]


def select_slices(requested: Optional[Sequence[int]], count: int, default: Sequence[int]) -> List[int]:
    """--slices 인덱스 검증 (미지정 시 default)"""
    indices = list(default if requested is None else requested)
    bad = [i for i in indices if not 0 <= i < count]
    if bad:
        raise ConfigError(f"--slices 인덱스가 범위 [0, {count}) 밖입니다: {bad}")
    return indices


# ==============================================
# 명령
# ==============================================

def cmd_simulate(args: argparse.Namespace) -> int:
    """합성 데이터셋 생성 → 컨테이너 + 매니페스트"""
    start = time.time()
    cfg = dataset_config(args)
    out_dir = out_dir_for(args, "simulate")

    train_set, test_set = build_dataset(cfg)
    paths = save_dataset(out_dir, train_set, test_set)
    storage.write_manifest(out_dir, "simulate", config.config_to_dict(cfg), outputs=paths,
                           seeds={"seed": cfg.seed, "train_volumes": train_set.volume_seeds,
                                  "test_volumes": test_set.volume_seeds},
                           wall_time=time.time() - start)

    print(f"\n[데이터셋] {out_dir}")
    print(f"  평면: {cfg.plane}")
    print(f"  학습: {len(train_set.volume_seeds)} 볼륨 / {len(train_set)} 슬라이스")
    print(f"  테스트: {len(test_set.volume_seeds)} 볼륨 / {len(test_set)} 슬라이스")
    print(f"  σ₀: {train_set.meta['sigma0']:.6f}")
    print(f"  배율: {train_set.scale:.4f}")
    print(f"  2NEX-avg PSNR: {train_set.meta['baseline_psnr']:.4f} dB")
    return 0


def _evaluation_frame(records, dataset, loss_form: str):
    return reporter.records_frame(records, dataset.scale, loss_form)


def cmd_train(args: argparse.Namespace) -> int:
    """학습 → 체크포인트, history.csv, 테스트셋 평가"""
    start = time.time()
    data_dir = first(args.dataset, "--dataset")
    train_set, test_set = load_dataset(data_dir)
    cfg = train_config(args, image_size=train_set.image_shape[0])
    out_dir = out_dir_for(args, "train")
    ckpt_dir = os.path.join(out_dir, "checkpoints")

    fit_set, val_set = train_set.holdout_volumes(cfg.val_volumes)
    params, history = train(cfg, fit_set, val_set, checkpoint_dir=ckpt_dir, resume=args.resume)
    outputs = [reporter.write_history(history, out_dir)]

    records = [baseline_record(test_set), evaluate_model(params, test_set)]
    frame = _evaluation_frame(records, test_set, cfg.loss_form)
    outputs += reporter.write_table(frame, out_dir, "evaluation")
    print(reporter.format_console_table(frame, f"학습 결과 ({test_set.plane})"))

    storage.write_manifest(out_dir, "train", config.config_to_dict(cfg), inputs=[data_dir],
                           outputs=outputs + [ckpt_dir], seeds={"seed": cfg.seed},
                           wall_time=time.time() - start)
    return 0


def _load_params(ckpt_path: str):
    """체크포인트 디렉터리 (best/last 하위 포함) → (NetworkParams, 체크포인트 정보)"""
    for candidate in (ckpt_path, os.path.join(ckpt_path, BEST_CHECKPOINT),
                      os.path.join(ckpt_path, LAST_CHECKPOINT)):
        if os.path.exists(os.path.join(candidate, "params" + storage.CONTAINER_SUFFIX)):
            ckpt = storage.load_checkpoint(candidate)
            return params_from_checkpoint(ckpt), ckpt.info
    raise DataError(f"체크포인트가 없습니다: {ckpt_path}")


def _check_image_size(info: Dict[str, Any], image_shape) -> None:
    size = (info.get("config") or {}).get("image_size")
    if size is not None and tuple(image_shape) != (size, size):
        raise ShapeError(f"체크포인트 영상 크기 {size}×{size} 와 데이터 {tuple(image_shape)} 가 다릅니다")


def cmd_denoise(args: argparse.Namespace) -> int:
    """입력 컨테이너 [S, C, H, W] → 디노이즈 크기 컨테이너 [S, H, W] (+ PNG)"""
    start = time.time()
    ckpt_path = first(args.checkpoint, "--checkpoint")
    input_path = require(args.input, "--input")
    out_dir = out_dir_for(args, "denoise")

    params, info = _load_params(ckpt_path)
    container = storage.read_container(input_path)
    x = container.array
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ShapeError(f"입력 컨테이너는 [S, C, H, W] 여야 합니다: {container.array.shape}")
    _check_image_size(info, x.shape[2:])

    mode = params.config.input_mode
    if mode == "single" and x.shape[1] == 4:
        x = 0.5 * (x[:, 0:2] + x[:, 2:4])
    if x.shape[1] != params.config.in_channels:
        raise ShapeError(f"{mode} 모델에는 {params.config.in_channels}채널 입력이 필요합니다: {x.shape[1]}")

    p64 = params.astype(np.float64)
    step = args.batch_size or config.BATCH_SIZE
    magnitudes = np.concatenate([denoise_batch(p64, x[i:i + step].astype(np.float64))[1]
                                 for i in range(0, x.shape[0], step)])

    scale = container.meta.get("scale")
    out_path = os.path.join(out_dir, "denoised" + storage.CONTAINER_SUFFIX)
    outputs = [storage.write_container(out_path, magnitudes, role="denoised/magnitude",
                                       seed=container.seed,
                                       meta={"source": os.path.abspath(input_path), "scale": scale,
                                             "input_mode": mode, "variant": params.config.variant})]
    if args.export_images:
        png_scale = scale if scale else reporter.auto_scale(magnitudes)
        for i, mag in enumerate(magnitudes):
            outputs.append(reporter.export_png(mag, os.path.join(out_dir, "images", f"slice_{i:04d}.png"),
                                               png_scale))

    storage.write_manifest(out_dir, "denoise", {"checkpoint": ckpt_path, "input": input_path},
                           inputs=[input_path, ckpt_path], outputs=outputs,
                           wall_time=time.time() - start)
    logger.info(f"✅ 디노이즈 완료: {magnitudes.shape[0]} 슬라이스 → {out_path}")
    return 0


def _export_comparisons(dataset, pred: np.ndarray, requested, panel_dir: str) -> List[str]:
    """선택 슬라이스의 8-NEX / 2NEX-avg / 디노이즈 / 잔차 비교 패널"""
    indices = select_slices(requested, len(dataset), range(len(dataset)))
    truth = dataset.target_magnitude() * dataset.scale
    average = baseline_magnitude(dataset) * dataset.scale
    paths = []
    for i in indices:
        stack = reporter.comparison_stack(truth[i], average[i], pred[i] * dataset.scale)
        paths += reporter.write_comparison(stack, panel_dir, dataset.slice_name(i), export_images=True,
                                           meta={"slice": dataset.slice_name(i), "scale": dataset.scale})
    return paths


def cmd_evaluate(args: argparse.Namespace) -> int:
    """(체크포인트, 데이터셋) 쌍마다 2NEX-avg / 모델 표 (+ 평면별 표)"""
    start = time.time()
    checkpoints = require(args.checkpoint, "--checkpoint")
    datasets = require(args.dataset, "--dataset")
    if len(checkpoints) != len(datasets):
        raise ConfigError(f"--checkpoint ({len(checkpoints)}) 와 --dataset ({len(datasets)}) 개수가 다릅니다")
    out_dir = out_dir_for(args, "evaluate")

    frames, slice_frames, outputs = [], [], []
    for k, (ckpt_path, data_dir) in enumerate(zip(checkpoints, datasets)):
        params, info = _load_params(ckpt_path)
        test_set = load_split(data_dir, "test")
        _check_image_size(info, test_set.image_shape)
        loss_form = (info.get("config") or {}).get("loss_form", config.LOSS_FORM)
        pred = predict_magnitude(params, test_set)
        label = method_label(params.config.variant, params.config.input_mode)
        records = [baseline_record(test_set), prediction_record(test_set, pred, label)]
        frames.append(_evaluation_frame(records, test_set, loss_form))
        slice_frames.append(reporter.slice_frame(records))
        if args.export_images:
            panel_dir = os.path.join(out_dir, "panels", f"{k}_{test_set.plane}")
            outputs += _export_comparisons(test_set, pred, args.slices, panel_dir)

    frame = pd.concat(frames, ignore_index=True)
    outputs += reporter.write_table(frame, out_dir, "evaluation")
    outputs += reporter.write_table(pd.concat(slice_frames, ignore_index=True), out_dir, "slices")
    print(reporter.format_console_table(frame, "평가 결과"))
    if frame["plane"].nunique() > 1:
        planes = reporter.plane_table(frame)
        path = os.path.join(out_dir, "planes.csv")
        planes.to_csv(path)
        outputs.append(path)
        print(planes.to_string())

    storage.write_manifest(out_dir, "evaluate", {"checkpoints": checkpoints, "datasets": datasets},
                           inputs=list(checkpoints) + list(datasets), outputs=outputs,
                           wall_time=time.time() - start)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    """변형 (Model / Model-Tra / Model-Res) 과 입력 방식 비교"""
    start = time.time()
    data_dir = first(args.dataset, "--dataset")
    train_set, test_set = load_dataset(data_dir)
    cfg = train_config(args, image_size=train_set.image_shape[0])
    seeds = args.seeds or [cfg.seed]
    out_dir = out_dir_for(args, "ablate")

    result = run_ablation(train_set, test_set, seeds, cfg,
                          checkpoint_root=os.path.join(out_dir, "checkpoints"))

    variants = reporter.summary_frame(result.variant_rows(), test_set.scale, cfg.loss_form)
    inputs = reporter.summary_frame(result.input_rows(), test_set.scale, cfg.loss_form)
    seed_table = pd.DataFrame(result.seed_rows())
    outputs = reporter.write_table(variants, out_dir, "ablation_variants")
    outputs += reporter.write_table(inputs, out_dir, "ablation_inputs")
    outputs += reporter.write_table(seed_table, out_dir, "ablation_seeds")
    dominance = pd.DataFrame([{"check": k, "holds": v, "tolerance_db": result.tolerance}
                                       for k, v in result.dominance().items()])
    outputs += reporter.write_table(dominance, out_dir, "ablation_dominance")

    print(reporter.format_console_table(variants, "변형 비교"))
    print(reporter.format_console_table(inputs, "입력 방식 비교"))

    storage.write_manifest(out_dir, "ablate", {**config.config_to_dict(cfg), "seeds": list(seeds)},
                           inputs=[data_dir], outputs=outputs, seeds={"seeds": list(seeds)},
                           wall_time=time.time() - start)
    return 0


def cmd_noise_stats(args: argparse.Namespace) -> int:
    """2-NEX 잡음 통계 (히스토그램, 적합, 국소 분산 맵)"""
    start = time.time()
    data_dir = first(args.dataset, "--dataset")
    dataset = load_split(data_dir, args.split)
    if dataset.nex_count < 2:
        raise DataError("잡음 맵에는 슬라이스당 NEX 가 2장 이상 필요합니다")
    out_dir = out_dir_for(args, "noise-stats")

    pairs = [tuple(dataset.nex_pair(i)) for i in range(len(dataset))]
    sigma0 = dataset.meta.get("sigma0")
    report = analyze_noise_pairs(pairs, dataset.gfactor, sigma0=sigma0)

    panels = {}
    for i in select_slices(args.slices, len(dataset), [0]):
        a, b = pairs[i]
        noise_mag = noise_map(a, b).magnitude()
        name = dataset.slice_name(i)
        panels[f"{name}/signal_strengthened"] = signal_strengthened_map(a, b).magnitude()
        panels[f"{name}/noise"] = noise_mag
        panels[f"{name}/local_variance"] = local_variance_map(noise_mag)
    outputs = reporter.write_noise_report(report, dataset.gfactor, out_dir, panels,
                                          export_images=args.export_images)

    summary = report.summary()
    print(f"\n[잡음 통계] {len(pairs)} 슬라이스, {summary['n_samples']} 샘플")
    print(f"  σ̂ (Rayleigh): {summary['sigma_hat']:.6f}")
    if summary["expected_sigma"] is not None:
        print(f"  √2·σ₀: {summary['expected_sigma']:.6f}")
    print(f"  적합도 χ²: {summary['rayleigh_chi2_stat']:.2f}")
    print(f"  비중심 χ²: σ={summary['chi2_scale']:.6f}, λ={summary['chi2_noncentrality']:.4f}")
    print(f"  r(국소 분산, g²): {summary['variance_gfactor2_r']:.4f}")

    storage.write_manifest(out_dir, "noise-stats", {"dataset": data_dir, "split": args.split},
                           inputs=[data_dir], outputs=outputs, wall_time=time.time() - start)
    return 0


HANDLERS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "denoise": cmd_denoise,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "noise-stats": cmd_noise_stats,
}


# ==============================================
# CLI 인터페이스
# ==============================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='2-NEX 잔차 학습 MRI 디노이징 - 시뮬레이션/학습/평가 도구',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
예제:
  python main.py simulate --out runs/data                       # 데이터셋 생성 (σ₀ 자동 보정)
  python main.py simulate --train-volumes 1 --test-volumes 1 --slices-per-volume 1
  python main.py simulate --config desk_acceptance.json --out runs/desk   # 데스크 규모 기준 데이터셋
  python main.py train --dataset runs/data --epochs 20          # 학습
  python main.py denoise --checkpoint runs/train/checkpoints --input runs/data/test/inputs.nxd
  python main.py evaluate --checkpoint runs/train/checkpoints --dataset runs/data --export-images --slices 0 3
  python main.py ablate --dataset runs/data --seeds 0 1 2       # 변형 비교
  python main.py noise-stats --dataset runs/data --export-images --slices 0 1 2

설정 파일 키와 플래그는 이름이 같습니다 (train_volumes ↔ --train-volumes).
        """
    )
    parser.add_argument('command', choices=COMMANDS, help='실행할 명령')

    parser.add_argument('--config', help='JSON 설정 파일 ({"dataset": {...}, "train": {...}})')
    parser.add_argument('--out', help=f'출력 디렉터리 (기본: {config.OUTPUT_ROOT}/<명령>)')
    parser.add_argument('--dataset', nargs='+', help='데이터셋 디렉터리 (evaluate 는 여러 개 가능)')
    parser.add_argument('--checkpoint', nargs='+', help='체크포인트 디렉터리 (evaluate 는 여러 개 가능)')
    parser.add_argument('--input', help='denoise 입력 컨테이너')
    parser.add_argument('--split', choices=['train', 'test'], default='test', help='noise-stats 분할 (기본: test)')

    parser.add_argument('--seed', type=int, help='난수 시드')
    parser.add_argument('--seeds', type=int, nargs='+', help='ablate 학습 시드 목록')

    parser.add_argument('--train-volumes', type=int, help=f'학습 볼륨 수 (기본: {config.TRAIN_VOLUMES})')
    parser.add_argument('--test-volumes', type=int, help=f'테스트 볼륨 수 (기본: {config.TEST_VOLUMES})')
    parser.add_argument('--slices-per-volume', type=int, help=f'볼륨당 슬라이스 수 (기본: {config.SLICES_PER_VOLUME})')
    parser.add_argument('--image-size', type=int, help=f'영상 크기 (기본: {config.IMAGE_SIZE})')
    parser.add_argument('--sigma0', type=float, help='채널 잡음 표준편차 (생략 시 PSNR 보정)')
    parser.add_argument('--noise-seed', type=int, help='잡음 시드 (팬텀은 --seed 로 고정한 채 잡음만 변경)')
    parser.add_argument('--stationary', action='store_true', default=None, help='g-factor 없이 균일 잡음')
    parser.add_argument('--plane', choices=config.IMAGING_PLANES, help='영상 평면 태그')

    parser.add_argument('--epochs', type=int, help=f'학습 에포크 (기본: {config.DEFAULT_EPOCHS})')
    parser.add_argument('--variant', choices=['full', 'tra', 'res'], help='네트워크 변형')
    parser.add_argument('--input-mode', choices=['dual', 'single'], help='입력 방식')
    parser.add_argument('--loss-form', choices=['product', 'sum'], help='결합 손실 형태')
    parser.add_argument('--batch-size', type=int, help=f'배치 크기 (기본: {config.BATCH_SIZE})')
    parser.add_argument('--lr', type=float, help=f'초기 학습률 (기본: {config.INITIAL_LR})')
    parser.add_argument('--val-volumes', type=int, help='학습셋에서 떼어낼 검증 볼륨 수 (기본: 0, 검증 없음)')
    parser.add_argument('--resume', action='store_true', help='마지막 체크포인트에서 학습 재개')

    parser.add_argument('--export-images', action='store_true', help='8비트 PNG 내보내기')
    parser.add_argument('--slices', type=int, nargs='+',
                        help='패널로 내보낼 슬라이스 인덱스 (evaluate: --export-images 시 기본 전체, noise-stats: 기본 0)')
    parser.add_argument('--no-progress', action='store_true', help='진행 바 끄기')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Returns:
        int: 종료 코드 (0 성공, 2 설정/사용 오류, 3 데이터 오류, 4 수치 오류, 1 예기치 못한 오류)
    """
    args = build_parser().parse_args(argv)
    try:
        return HANDLERS[args.command](args)
    except ConfigError as e:
        logger.error(f"❌ 설정 오류: {e}")
        return e.exit_code
    except (DataError, ShapeError) as e:
        logger.error(f"❌ 데이터 오류: {e}")
        return e.exit_code
    except NumericalError as e:
        logger.error(f"❌ 수치 오류: {e}")
        return e.exit_code
    except DenoiseError as e:
        logger.error(f"❌ {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"❌ 파일 오류: {e}")
        return DataError.exit_code
    except KeyboardInterrupt:
        logger.info("\n⚠️ 사용자에 의해 중단됨")
        return 1
    except Exception as e:
        logger.error(f"\n❌ 실행 중 오류: {e}")
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
