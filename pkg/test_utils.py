"""
utils 단위 테스트

이름 기반 난수 스트림과 설정 해시
"""
import numpy as np
import pytest

from utils import config_hash, name_to_int, seed_entropy, substream


class TestSubstream:
    """난수 스트림 분기 테스트"""

    def test_same_keys_same_stream(self):
        """같은 (seed, keys) → 같은 난수열"""
        a = substream(3, "nex", 1).standard_normal(5)
        b = substream(3, "nex", 1).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_different_keys_differ(self):
        a = substream(3, "nex", 0).standard_normal(5)
        b = substream(3, "nex", 1).standard_normal(5)
        c = substream(3, "phantom", 0).standard_normal(5)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_order_independent(self):
        """다른 스트림을 먼저 뽑아도 결과가 같음"""
        substream(9, "other").standard_normal(100)
        late = substream(9, "target").standard_normal(3)
        np.testing.assert_array_equal(late, substream(9, "target").standard_normal(3))

    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            seed_entropy(-1, "x")

    def test_entropy_layout(self):
        """문자열 키는 해시, 정수 키는 그대로"""
        assert seed_entropy(5, "nex", 2) == [5, name_to_int("nex"), 2]
        assert seed_entropy([1, 2]) == [1, 2]


class TestHashing:
    """해시 함수 테스트"""

    def test_name_to_int_range(self):
        value = name_to_int("sagittal")
        assert 0 <= value < 2 ** 32
        assert value == name_to_int("sagittal")
        assert value != name_to_int("axial")

    def test_config_hash_ignores_key_order(self):
        assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})

    def test_config_hash_changes_with_value(self):
        assert config_hash({"lr": 1e-4}) != config_hash({"lr": 1e-3})
