"""
저장소 모듈
텐서 컨테이너 (NXD1), 실행 매니페스트, 파라미터/체크포인트 입출력을 중앙에서 관리합니다.

컨테이너 레이아웃:
    b"NXD1" | uint32 LE 헤더 길이 | UTF-8 JSON 헤더 | little-endian row-major 페이로드
"""
import json
import os
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

import config
from errors import DataError

logger = config.setup_logger(__name__)

# ==============================================
# 상수 정의
# ==============================================
MAGIC = b"NXD1"
CONTAINER_SUFFIX = ".nxd"
MANIFEST_NAME = "manifest.json"
CHECKPOINT_META = "checkpoint.json"

DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
DTYPE_TAGS = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


# ==============================================
# 컨테이너
# ==============================================

@dataclass
class TensorContainer:
    """배열 하나와 그 출처 메타데이터"""
    array: np.ndarray
    role: str
    seed: Any = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def header(self) -> dict:
        tag = DTYPE_TAGS.get(self.array.dtype)
        if tag is None:
            raise DataError(f"지원하지 않는 dtype: {self.array.dtype} (f32/f64 만 가능)")
        return {"shape": list(self.array.shape), "dtype": tag, "role": self.role,
                "seed": self.seed, "meta": self.meta}


def encode_container(container: TensorContainer) -> bytes:
    header = json.dumps(container.header(), sort_keys=True, ensure_ascii=False).encode("utf-8")
    dtype = DTYPES[DTYPE_TAGS[container.array.dtype]]
    payload = np.ascontiguousarray(container.array, dtype=dtype).tobytes(order="C")
    return MAGIC + struct.pack("<I", len(header)) + header + payload


def decode_container(raw: bytes, source: str = "<bytes>") -> TensorContainer:
    """바이트 → TensorContainer (매직, 헤더, 페이로드 길이 검증)"""
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise DataError(f"NXD1 컨테이너가 아닙니다: {source}")
    (header_len,) = struct.unpack("<I", raw[4:8])
    if 8 + header_len > len(raw):
        raise DataError(f"헤더가 잘렸습니다: {source}")
    try:
        header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"헤더 JSON 손상: {source} ({e})") from e

    for key in ("shape", "dtype", "role"):
        if key not in header:
            raise DataError(f"헤더에 '{key}' 가 없습니다: {source}")
    if header["dtype"] not in DTYPES:
        raise DataError(f"알 수 없는 원소 타입 '{header['dtype']}': {source}")

    dtype = DTYPES[header["dtype"]]
    shape = tuple(int(s) for s in header["shape"])
    payload = raw[8 + header_len:]
    expected = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
    if len(payload) != expected:
        raise DataError(f"페이로드 길이 {len(payload)} != {expected} 바이트: {source}")

    array = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    return TensorContainer(array=array, role=header["role"], seed=header.get("seed"),
                           meta=header.get("meta") or {})


def write_container(path: str, array: np.ndarray, role: str, seed: Any = None,
                    meta: Optional[Dict[str, Any]] = None) -> str:
    """배열을 컨테이너 파일로 저장하고 경로를 반환"""
    raw = encode_container(TensorContainer(array=array, role=role, seed=seed, meta=meta or {}))
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(raw)
    logger.debug(f"💾 컨테이너 저장: {path} {tuple(array.shape)} ({role})")
    return path


def read_container(path: str) -> TensorContainer:
    if not os.path.exists(path):
        raise DataError(f"컨테이너 파일이 없습니다: {path}")
    with open(path, "rb") as f:
        return decode_container(f.read(), source=path)


# ==============================================
# 배열 묶음 (레이어 매니페스트 + 블록)
# ==============================================

def write_bundle(path: str, arrays: Dict[str, np.ndarray], role: str,
                 meta: Optional[Dict[str, Any]] = None) -> str:
    """
    이름 있는 배열 여러 개를 컨테이너 하나에 저장합니다.

    헤더 meta["blocks"] 에 순서 있는 (이름, shape, offset) 목록을 기록하고
    페이로드는 모든 블록을 평탄화해 이어 붙인 1D 배열입니다. 블록 dtype 은 같아야 합니다.
    """
    dtypes = {a.dtype for a in arrays.values()}
    if len(dtypes) > 1:
        raise DataError(f"한 묶음의 블록 dtype 은 같아야 합니다: {sorted(map(str, dtypes))}")
    dtype = dtypes.pop() if dtypes else np.dtype(np.float32)

    blocks, offset = [], 0
    for name, a in arrays.items():
        blocks.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += int(a.size)
    flat = (np.concatenate([a.ravel() for a in arrays.values()]) if arrays
            else np.zeros(0, dtype=dtype))
    full_meta = dict(meta or {})
    full_meta["blocks"] = blocks
    return write_container(path, flat.astype(dtype, copy=False), role, meta=full_meta)


def read_bundle(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """write_bundle 의 역. (이름 → 배열, meta) 반환"""
    container = read_container(path)
    blocks = container.meta.get("blocks")
    if blocks is None:
        raise DataError(f"블록 매니페스트가 없는 컨테이너입니다: {path}")
    flat = container.array
    arrays: Dict[str, np.ndarray] = {}
    for block in blocks:
        shape = tuple(block["shape"])
        size = int(np.prod(shape, dtype=np.int64))
        start = int(block["offset"])
        if start + size > flat.size:
            raise DataError(f"블록 '{block['name']}' 이 페이로드 범위를 벗어납니다: {path}")
        arrays[block["name"]] = flat[start:start + size].reshape(shape).copy()
    return arrays, container.meta


# ==============================================
# 매니페스트
# ==============================================

def write_json(path: str, payload: Any) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True, default=str)
    return path


def read_json(path: str) -> Any:
    if not os.path.exists(path):
        raise DataError(f"파일이 없습니다: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_manifest(out_dir: str, command: str, run_config: Dict[str, Any],
                   inputs: Optional[List[str]] = None, outputs: Optional[List[str]] = None,
                   seeds: Optional[Dict[str, Any]] = None, wall_time: float = 0.0) -> str:
    """
    출력 디렉터리의 유일한 실행 매니페스트를 기록합니다 (재실행 시 덮어씀).

    started_at 은 기록용이며 재현성 비교 대상이 아닙니다.
    """
    manifest = {
        "command": command,
        "config": run_config,
        "inputs": sorted(inputs or []),
        "outputs": sorted(os.path.relpath(p, out_dir) for p in (outputs or [])),
        "version": config.VERSION,
        "seeds": seeds or {},
        "wall_time": round(float(wall_time), 3),
        "started_at": datetime.now(timezone.utc).isoformat(),
    }
    path = write_json(os.path.join(out_dir, MANIFEST_NAME), manifest)
    logger.info(f"📝 매니페스트 기록: {path}")
    return path


def read_manifest(out_dir: str) -> Dict[str, Any]:
    return read_json(os.path.join(out_dir, MANIFEST_NAME))


# ==============================================
# 네트워크 파라미터 / 체크포인트
# ==============================================

def save_params(path: str, state: Dict[str, np.ndarray], network_config: Dict[str, Any],
                meta: Optional[Dict[str, Any]] = None) -> str:
    """파라미터 + BN running 통계를 레이어 순서대로 저장 (bit-exact)"""
    full_meta = dict(meta or {})
    full_meta["network"] = network_config
    return write_bundle(path, state, role="params", meta=full_meta)


def load_params(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    arrays, meta = read_bundle(path)
    if "network" not in meta:
        raise DataError(f"네트워크 설정이 없는 파라미터 파일입니다: {path}")
    return arrays, meta


@dataclass
class Checkpoint:
    """체크포인트 디렉터리 하나의 내용"""
    params: Dict[str, np.ndarray]
    network: Dict[str, Any]
    info: Dict[str, Any]
    adam: Dict[str, np.ndarray] = field(default_factory=dict)


def save_checkpoint(ckpt_dir: str, params_state: Dict[str, np.ndarray],
                    network_config: Dict[str, Any], info: Dict[str, Any],
                    adam_arrays: Optional[Dict[str, np.ndarray]] = None) -> str:
    """
    체크포인트 디렉터리 기록
        params.nxd     파라미터 묶음
        adam.nxd       Adam 모멘트 (있을 때)
        checkpoint.json 에포크, 설정 해시, 스케줄러/기록 상태
    """
    os.makedirs(ckpt_dir, exist_ok=True)
    save_params(os.path.join(ckpt_dir, "params" + CONTAINER_SUFFIX), params_state, network_config)
    adam_path = os.path.join(ckpt_dir, "adam" + CONTAINER_SUFFIX)
    if adam_arrays:
        write_bundle(adam_path, adam_arrays, role="adam")
    elif os.path.exists(adam_path):
        os.remove(adam_path)
    write_json(os.path.join(ckpt_dir, CHECKPOINT_META), info)
    return ckpt_dir


def load_checkpoint(ckpt_dir: str) -> Checkpoint:
    meta_path = os.path.join(ckpt_dir, CHECKPOINT_META)
    params_path = os.path.join(ckpt_dir, "params" + CONTAINER_SUFFIX)
    if not os.path.isdir(ckpt_dir) or not os.path.exists(params_path):
        raise DataError(f"체크포인트가 없습니다: {ckpt_dir}")
    params, meta = load_params(params_path)
    info = read_json(meta_path) if os.path.exists(meta_path) else {}
    adam_path = os.path.join(ckpt_dir, "adam" + CONTAINER_SUFFIX)
    adam = read_bundle(adam_path)[0] if os.path.exists(adam_path) else {}
    return Checkpoint(params=params, network=meta["network"], info=info, adam=adam)
