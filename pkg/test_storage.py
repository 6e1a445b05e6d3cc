"""
storage 단위 테스트

NXD1 컨테이너 bit-exact 저장, 손상 파일 처리, 배열 묶음, 체크포인트, 매니페스트
"""
import json
import struct

import numpy as np
import pytest

import storage
from errors import DataError


class TestContainer:
    """텐서 컨테이너 테스트"""

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_bit_exact(self, tmp_path, dtype):
        """저장 후 읽은 배열은 비트 단위로 동일"""
        array = np.random.default_rng(0).standard_normal((3, 4, 5)).astype(dtype)
        array[0, 0, 0] = np.finfo(dtype).tiny
        path = storage.write_container(str(tmp_path / "a.nxd"), array, role="test", seed=7, meta={"k": "v"})
        loaded = storage.read_container(path)
        assert loaded.array.dtype == dtype
        assert loaded.array.tobytes() == array.tobytes()
        assert loaded.role == "test" and loaded.seed == 7 and loaded.meta == {"k": "v"}

    def test_layout(self):
        """매직 + uint32 LE 헤더 길이 + JSON 헤더 + 페이로드"""
        raw = storage.encode_container(storage.TensorContainer(np.arange(3, dtype=np.float32), role="r"))
        assert raw[:4] == b"NXD1"
        (header_len,) = struct.unpack("<I", raw[4:8])
        header = json.loads(raw[8:8 + header_len])
        assert header["shape"] == [3] and header["dtype"] == "f32"
        assert len(raw) == 8 + header_len + 12

    def test_bad_magic(self):
        with pytest.raises(DataError):
            storage.decode_container(b"XXXX\x00\x00\x00\x00")

    def test_truncated_payload(self):
        """페이로드가 잘리면 DataError"""
        raw = storage.encode_container(storage.TensorContainer(np.zeros(4), role="r"))
        with pytest.raises(DataError):
            storage.decode_container(raw[:-3])

    def test_truncated_header(self):
        raw = storage.encode_container(storage.TensorContainer(np.zeros(4), role="r"))
        with pytest.raises(DataError):
            storage.decode_container(raw[:10])

    def test_corrupt_header_json(self):
        header = b"{not json"
        raw = b"NXD1" + struct.pack("<I", len(header)) + header
        with pytest.raises(DataError):
            storage.decode_container(raw)

    def test_unknown_dtype(self):
        """알 수 없는 원소 타입 태그"""
        header = json.dumps({"shape": [1], "dtype": "i8", "role": "r"}).encode()
        raw = b"NXD1" + struct.pack("<I", len(header)) + header + b"\x00" * 8
        with pytest.raises(DataError):
            storage.decode_container(raw)

    def test_unsupported_array_dtype(self, tmp_path):
        with pytest.raises(DataError):
            storage.write_container(str(tmp_path / "i.nxd"), np.zeros(3, dtype=np.int32), role="r")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            storage.read_container(str(tmp_path / "missing.nxd"))


class TestBundle:
    """배열 묶음 테스트"""

    def test_roundtrip_preserves_order(self, tmp_path):
        """이름 순서와 shape 을 그대로 복원"""
        arrays = {"L2.conv.kernels": np.ones((2, 3, 3, 3), dtype=np.float32),
                  "L1.conv.bias": np.arange(4, dtype=np.float32)}
        path = storage.write_bundle(str(tmp_path / "b.nxd"), arrays, role="params", meta={"x": 1})
        loaded, meta = storage.read_bundle(path)
        assert list(loaded) == list(arrays)
        for name in arrays:
            np.testing.assert_array_equal(loaded[name], arrays[name])
        assert meta["x"] == 1 and len(meta["blocks"]) == 2

    def test_mixed_dtypes_rejected(self, tmp_path):
        with pytest.raises(DataError):
            storage.write_bundle(str(tmp_path / "m.nxd"),
                                 {"a": np.zeros(2, dtype=np.float32), "b": np.zeros(2)}, role="r")

    def test_plain_container_is_not_bundle(self, tmp_path):
        """블록 목록이 없는 컨테이너는 묶음으로 읽을 수 없음"""
        path = storage.write_container(str(tmp_path / "p.nxd"), np.zeros(2), role="r")
        with pytest.raises(DataError):
            storage.read_bundle(path)

    def test_params_require_network(self, tmp_path):
        path = storage.write_bundle(str(tmp_path / "p.nxd"), {"a": np.zeros(2)}, role="params")
        with pytest.raises(DataError):
            storage.load_params(path)


class TestCheckpointFiles:
    """체크포인트 / 매니페스트 테스트"""

    def test_checkpoint_roundtrip(self, tmp_path):
        params = {"L1.conv.kernels": np.full((1, 1, 3, 3), 0.5, dtype=np.float32)}
        adam = {"m/L1.conv.kernels": np.zeros((1, 1, 3, 3)), "v/L1.conv.kernels": np.ones((1, 1, 3, 3))}
        storage.save_checkpoint(str(tmp_path / "ck"), params, {"variant": "full"}, {"epoch": 3}, adam)
        ckpt = storage.load_checkpoint(str(tmp_path / "ck"))
        np.testing.assert_array_equal(ckpt.params["L1.conv.kernels"], params["L1.conv.kernels"])
        np.testing.assert_array_equal(ckpt.adam["v/L1.conv.kernels"], 1.0)
        assert ckpt.network == {"variant": "full"}
        assert ckpt.info == {"epoch": 3}

    def test_stale_adam_removed(self, tmp_path):
        """Adam 상태 없이 다시 저장하면 이전 adam.nxd 제거"""
        params = {"a": np.zeros(1, dtype=np.float32)}
        storage.save_checkpoint(str(tmp_path), params, {}, {}, {"m/a": np.zeros(1)})
        storage.save_checkpoint(str(tmp_path), params, {}, {}, None)
        assert storage.load_checkpoint(str(tmp_path)).adam == {}

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(DataError):
            storage.load_checkpoint(str(tmp_path / "none"))

    def test_manifest(self, tmp_path):
        """매니페스트는 출력 경로를 상대 경로로 기록"""
        out = tmp_path / "run"
        out.mkdir()
        output = str(out / "report.csv")
        storage.write_manifest(str(out), "evaluate", {"seed": 1}, inputs=["b", "a"],
                               outputs=[output], seeds={"train": 1}, wall_time=1.23456)
        manifest = storage.read_manifest(str(out))
        assert manifest["command"] == "evaluate"
        assert manifest["inputs"] == ["a", "b"]
        assert manifest["outputs"] == ["report.csv"]
        assert manifest["wall_time"] == 1.235
        assert "version" in manifest and "started_at" in manifest
