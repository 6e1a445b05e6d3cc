"""
공통 유틸 함수
이름 기반 난수 스트림 분기와 설정 해시
"""
import hashlib
import json
from typing import Any, Dict, Sequence, Union

import numpy as np

SeedLike = Union[int, Sequence[int]]


def name_to_int(name: str) -> int:
    """문자열을 32비트 정수로 변환 (MD5 앞 8자리)"""
    return int(hashlib.md5(name.encode('utf-8')).hexdigest()[:8], 16)


def seed_entropy(seed: SeedLike, *keys: Union[int, str]) -> list:
    """
    시드와 하위 키들을 SeedSequence 엔트로피 리스트로 변환합니다.

    Args:
        seed: 정수 또는 정수 시퀀스
        keys: 하위 스트림 이름 (문자열은 해시, 정수는 그대로)
    """
    base = [int(seed)] if np.isscalar(seed) else [int(s) for s in seed]
    for key in keys:
        base.append(name_to_int(key) if isinstance(key, str) else int(key))
    if any(v < 0 for v in base):
        raise ValueError(f"시드는 음수일 수 없습니다: {base}")
    return base


def substream(seed: SeedLike, *keys: Union[int, str]) -> np.random.Generator:
    """
    (seed, keys...)로 결정되는 독립 난수 생성기

    같은 키 조합은 항상 같은 스트림을 반환하므로
    병렬 생성과 직렬 생성의 결과가 동일합니다.
    """
    return np.random.default_rng(np.random.SeedSequence(seed_entropy(seed, *keys)))


def config_hash(config_dict: Dict[str, Any]) -> str:
    """설정 dict의 정규화된 JSON 기반 해시"""
    canonical = json.dumps(config_dict, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.md5(canonical.encode('utf-8')).hexdigest()
