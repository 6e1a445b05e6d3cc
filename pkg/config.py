"""
중앙 설정 파일
모든 학습/시뮬레이션 상수와 런타임 설정을 여기서 관리합니다.
"""
import os
import json
import logging
import dataclasses
from typing import Any, Dict, Optional
from dotenv import load_dotenv

from errors import ConfigError

# ==============================================
# 환경 변수 로드 (가장 먼저 실행)
# ==============================================
load_dotenv()

VERSION = "1.0.0"

# 실행 결과 기본 경로
OUTPUT_ROOT = os.getenv("NEX_OUTPUT_ROOT", "./runs")

# 학습 진행 바 (CI에서는 false 권장)
SHOW_PROGRESS = os.getenv("NEX_SHOW_PROGRESS", "true").lower() == "true"

# ==============================================
# 레이어 수치 상수
# ==============================================
KERNEL_SIZE = 3          # 3×3, stride 1, padding 1 (모든 레이어 공통)
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1
MAGNITUDE_EPS = 1e-12    # r=0 에서의 기울기 특이점 제거용

# ==============================================
# 네트워크 구조
# ==============================================
EXTRACT_WIDTH = 128      # 특징 추출 모듈 커널 수
BRIDGE_WIDTH = 64        # 브리지/조립 모듈 커널 수
EXTRACT_LAYERS = 6
ASSEMBLY_HIDDEN_LAYERS = 3

# ==============================================
# 손실/평가 설정
# ==============================================
# "product": ‖·‖²·(1−SSIM) (기본)
# "sum":     ‖·‖² + λ·(1−SSIM) (비교 실험용)
LOSS_FORM = os.getenv("NEX_LOSS_FORM", "product")
SSIM_LOSS_WEIGHT = float(os.getenv("NEX_SSIM_LOSS_WEIGHT", "1.0"))

PEAK_VALUE = 255.0       # PSNR/SSIM 8비트 기준
SSIM_WINDOW_SIZE = 11
SSIM_WINDOW_SIGMA = 1.5

# ==============================================
# 옵티마이저/스케줄러
# ==============================================
INITIAL_LR = 1e-4
PLATEAU_FACTOR = 0.2
PLATEAU_PATIENCE = 10
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
BATCH_SIZE = 8
DEFAULT_EPOCHS = 150

# ==============================================
# 데이터셋 (데스크 스케일)
# ==============================================
IMAGE_SIZE = 64          # 원 프로토콜 214×214, 데스크 기본 64×64
PROTOCOL_IMAGE_SIZE = 214
TRAIN_VOLUMES = 50
TEST_VOLUMES = 17
SLICES_PER_VOLUME = 8
INPUT_NEX = 2
TARGET_NEX = 8
TARGET_BASELINE_PSNR = 31.0   # σ₀ 보정 목표 (30~32 dB)
BASELINE_PSNR_RANGE = (30.0, 32.0)
DEFAULT_SIGMA0 = 0.02
GFACTOR_PEAK = 0.8
IMAGING_PLANES = ["axial", "coronal", "sagittal"]

# 메서드 이름 (리포트 행)
BASELINE_METHOD = "2NEX-avg"
VARIANT_LABELS = {
    "full": "Model",
    "tra": "Model-Tra",
    "res": "Model-Res",
}
INPUT_MODE_LABELS = {
    "dual": "Dual-input",
    "single": "Single-input",
}
ABLATION_TOLERANCE_DB = 0.05   # 변형 간 PSNR 비교 허용 오차

# ==============================================
# 로깅 설정
# ==============================================
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_DIR = os.getenv("LOG_DIR", "./logs")
LOG_TO_FILE = os.getenv("LOG_TO_FILE", "true").lower() == "true"


def setup_logger(name, enable_file_logging=None):
    """로거 설정 헬퍼 함수

    Args:
        name: 로거 이름
        enable_file_logging: 파일 로깅 활성화 여부 (None이면 LOG_TO_FILE 사용)

    Returns:
        logging.Logger: 설정된 로거
    """
    if enable_file_logging is None:
        enable_file_logging = LOG_TO_FILE

    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, LOG_LEVEL))

    if not logger.handlers:
        # 콘솔 핸들러
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(console_handler)

        # 파일 핸들러
        if enable_file_logging:
            try:
                os.makedirs(LOG_DIR, exist_ok=True)
                log_file = os.path.join(LOG_DIR, f"{name.replace('.', '_')}.log")
                file_handler = logging.FileHandler(log_file, encoding='utf-8')
                file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
                logger.addHandler(file_handler)
            except Exception as e:
                logger.warning(f"파일 로깅 설정 실패: {e}")

    return logger


# ==============================================
# 실행 설정 로드 (기본값 ← JSON 파일 ← CLI 플래그)
# ==============================================

def load_json_config(path: Optional[str]) -> Dict[str, Any]:
    """JSON 설정 파일을 읽어 dict로 반환 (path가 없으면 빈 dict)"""
    if not path:
        return {}
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"설정 파일이 없습니다: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"설정 파일 JSON 파싱 실패 ({path}): {e}")

    if not isinstance(data, dict):
        raise ConfigError(f"설정 파일 최상위는 객체여야 합니다: {path}")
    return data


def build_run_config(config_cls, file_values: Optional[Dict[str, Any]] = None,
                     overrides: Optional[Dict[str, Any]] = None):
    """
    dataclass 설정을 계층적으로 병합합니다.

    Args:
        config_cls: 설정 dataclass 타입
        file_values: JSON 파일 값
        overrides: CLI 플래그 값 (None 값은 무시)

    Returns:
        config_cls 인스턴스

    Raises:
        ConfigError: 알 수 없는 키 또는 잘못된 값
    """
    known = {f.name for f in dataclasses.fields(config_cls)}
    merged: Dict[str, Any] = {}

    for source_name, values in (("file", file_values or {}), ("flag", overrides or {})):
        for key, value in values.items():
            if value is None:
                continue
            if key not in known:
                raise ConfigError(f"알 수 없는 설정 키 ({source_name}): {key}")
            merged[key] = value

    try:
        return config_cls(**merged)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{config_cls.__name__} 설정 오류: {e}")


def config_to_dict(cfg) -> Dict[str, Any]:
    """dataclass 설정을 JSON 직렬화 가능한 dict로 변환"""
    def _plain(value):
        if isinstance(value, tuple):
            return [_plain(v) for v in value]
        if isinstance(value, dict):
            return {k: _plain(v) for k, v in value.items()}
        return value

    return {k: _plain(v) for k, v in dataclasses.asdict(cfg).items()}


# ==============================================
# 설정 검증
# ==============================================
def validate_config():
    """환경변수 기반 설정 검증"""
    if LOSS_FORM not in ("product", "sum"):
        raise ConfigError(f"❌ NEX_LOSS_FORM은 product 또는 sum 이어야 합니다: {LOSS_FORM}")
    if SSIM_LOSS_WEIGHT < 0:
        raise ConfigError(f"❌ NEX_SSIM_LOSS_WEIGHT는 0 이상이어야 합니다: {SSIM_LOSS_WEIGHT}")
    return True


if __name__ == "__main__":
    try:
        validate_config()
        print("✅ 설정 검증 완료")
        print(f"   - 손실 형태: {LOSS_FORM}")
        print(f"   - 출력 경로: {OUTPUT_ROOT}")
    except Exception as e:
        print(f"❌ 설정 오류: {e}")
