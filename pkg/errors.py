"""
에러 정의
CLI 종료 코드와 1:1로 매핑되는 예외 계층
"""


class DenoiseError(Exception):
    """모든 도메인 예외의 기반 클래스"""
    exit_code = 1


class ConfigError(DenoiseError):
    """잘못된 설정/사용법"""
    exit_code = 2


class ShapeError(DenoiseError, ValueError):
    """텐서 shape 계약 위반"""
    exit_code = 3


class DataError(DenoiseError, ValueError):
    """데이터 오류 (퇴화된 샘플, 시드 중복, 손상된 컨테이너 등)"""
    exit_code = 3


class NumericalError(DenoiseError, RuntimeError):
    """NaN/Inf 손실 또는 기울기"""
    exit_code = 4
