"""
dataset 단위 테스트

시드 분리, σ₀ 보정, 잡음 없는 데이터셋, 디스크 저장/로드
"""
import numpy as np
import pytest

from dataset import (
    Dataset,
    DatasetConfig,
    build_dataset,
    channels_magnitude,
    check_disjoint,
    intensity_scale,
    load_dataset,
    save_dataset,
    volume_seeds,
)
from errors import DataError, ShapeError


def tiny_config(**overrides):
    values = dict(train_volumes=2, test_volumes=1, slices_per_volume=2, image_size=24,
                  sigma0=0.02, seed=1, show_progress=False)
    values.update(overrides)
    return DatasetConfig(**values)


class TestSeeds:
    """볼륨 시드 배정 테스트"""

    def test_train_test_disjoint(self):
        train, test = volume_seeds(0, "sagittal", 50, 17)
        assert len(train) == 50 and len(test) == 17
        assert not set(train) & set(test)

    def test_planes_use_separate_families(self):
        """평면마다 다른 시드 계열"""
        seeds = [set(sum(volume_seeds(0, plane, 5, 2), [])) for plane in ("axial", "coronal", "sagittal")]
        assert not seeds[0] & seeds[1] and not seeds[1] & seeds[2] and not seeds[0] & seeds[2]

    def test_overlap_rejected(self):
        with pytest.raises(DataError):
            check_disjoint([1, 2, 3], [3, 4])

    def test_build_rejects_overlap(self):
        """학습/테스트 시드가 겹치면 생성 전에 거부"""
        with pytest.raises(DataError):
            build_dataset(tiny_config(), train_seeds=[1, 2], test_seeds=[2, 3])


class TestBuild:
    """데이터셋 생성 테스트"""

    def test_shapes_and_meta(self):
        """입력 4채널, 타깃/오라클 2채널, 슬라이스 ID 와 메타데이터"""
        train, test = build_dataset(tiny_config())
        assert train.inputs.shape == (4, 4, 24, 24)
        assert train.targets.shape == (4, 2, 24, 24)
        assert test.oracle.shape == (2, 2, 24, 24)
        assert train.nex_count == 2
        assert train.meta["split"] == "train" and test.meta["split"] == "test"
        assert train.scale == test.scale
        assert train.slice_name(1) == f"v{train.volume_seeds[0]}_s1"
        assert not set(train.volume_seeds) & set(test.volume_seeds)

    def test_deterministic(self):
        """같은 설정 → 같은 배열"""
        a, _ = build_dataset(tiny_config())
        b, _ = build_dataset(tiny_config())
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.targets, b.targets)

    def test_target_has_less_noise_than_input(self):
        """8-NEX 타깃은 단일 NEX 보다 오라클에 가까움"""
        train, _ = build_dataset(tiny_config())
        single_err = np.mean((train.inputs[:, 0:2] - train.oracle) ** 2)
        target_err = np.mean((train.targets - train.oracle) ** 2)
        assert target_err < single_err / 4

    def test_scale_maps_target_peak_to_255(self):
        train, _ = build_dataset(tiny_config())
        assert np.max(channels_magnitude(train.targets)) * train.scale == pytest.approx(255.0)
        assert intensity_scale(train.targets) == pytest.approx(train.scale)

    def test_calibration_hits_target(self):
        """σ₀ 보정 후 2NEX-avg 평균 PSNR ≈ 31 dB (30~32 범위)"""
        train, _ = build_dataset(tiny_config(sigma0=None, image_size=32))
        assert 30.0 <= train.meta["baseline_psnr"] <= 32.0
        assert train.meta["baseline_psnr"] == pytest.approx(31.0, abs=0.05)
        assert train.meta["sigma0"] > 0

    def test_noiseless(self):
        """σ₀ = 0 이면 입력 두 장과 타깃이 모두 오라클과 같음"""
        train, _ = build_dataset(tiny_config(sigma0=0.0))
        np.testing.assert_array_equal(train.inputs[:, 0:2], train.oracle)
        np.testing.assert_array_equal(train.inputs[:, 2:4], train.oracle)
        np.testing.assert_array_equal(train.targets, train.oracle)

    def test_stationary_gfactor(self):
        train, _ = build_dataset(tiny_config(stationary=True))
        np.testing.assert_array_equal(train.gfactor, 1.0)

    def test_network_inputs(self):
        """dual 은 원본, single 은 복소 평균 2채널"""
        train, _ = build_dataset(tiny_config())
        assert train.network_inputs("dual") is train.inputs
        single = train.network_inputs("single")
        np.testing.assert_allclose(single, 0.5 * (train.inputs[:, :2] + train.inputs[:, 2:]))
        np.testing.assert_allclose(train.baseline_magnitude(), channels_magnitude(single))
        with pytest.raises(ValueError):
            train.network_inputs("triple")

    def test_subset(self):
        train, _ = build_dataset(tiny_config())
        sub = train.subset([3, 0])
        assert len(sub) == 2
        np.testing.assert_array_equal(sub.inputs[0], train.inputs[3])
        np.testing.assert_array_equal(sub.slice_ids[1], train.slice_ids[0])

    def test_noise_seed_keeps_phantoms(self):
        """noise_seed 만 바꾸면 오라클은 같고 잡음만 달라짐"""
        base, _ = build_dataset(tiny_config())
        a, _ = build_dataset(tiny_config(noise_seed=3))
        b, _ = build_dataset(tiny_config(noise_seed=3))
        c, _ = build_dataset(tiny_config(noise_seed=4))
        np.testing.assert_array_equal(a.oracle, base.oracle)
        np.testing.assert_array_equal(c.oracle, base.oracle)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        assert not np.array_equal(a.inputs, c.inputs)
        assert not np.array_equal(a.inputs, base.inputs)
        assert a.meta["noise_seed"] == 3 and base.meta["noise_seed"] is None

    def test_holdout_volumes(self):
        """마지막 볼륨을 검증셋으로 분리 (볼륨 단위)"""
        train, _ = build_dataset(tiny_config(train_volumes=3))
        fit, val = train.holdout_volumes(1)
        assert len(fit) == 4 and len(val) == 2
        assert fit.volume_seeds == train.volume_seeds[:2]
        assert val.volume_seeds == train.volume_seeds[2:]
        assert val.meta["split"] == "validation" and val.scale == train.scale
        same, none = train.holdout_volumes(0)
        assert same is train and none is None
        with pytest.raises(DataError):
            train.holdout_volumes(3)

    @pytest.mark.parametrize("kwargs", [
        {"train_volumes": 0}, {"image_size": 8}, {"sigma0": -1.0}, {"plane": "oblique"}, {"seed": -1}, {"noise_seed": -2},
    ])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            tiny_config(**kwargs)

    def test_shape_checks(self):
        """배열 shape 이 서로 맞지 않으면 ShapeError"""
        with pytest.raises(ShapeError):
            Dataset(inputs=np.zeros((2, 4, 8, 8)), targets=np.zeros((2, 2, 8, 8)),
                    oracle=np.zeros((2, 2, 8, 8)), slice_ids=np.zeros((2, 2)), gfactor=np.ones((4, 4)))
        with pytest.raises(ShapeError):
            Dataset(inputs=np.zeros((2, 3, 8, 8)), targets=np.zeros((2, 2, 8, 8)),
                    oracle=np.zeros((2, 2, 8, 8)), slice_ids=np.zeros((2, 2)), gfactor=np.ones((8, 8)))


class TestPersistence:
    """저장/로드 테스트"""

    def test_roundtrip(self, tmp_path):
        """저장 후 로드하면 배열과 메타데이터가 그대로"""
        train, test = build_dataset(tiny_config())
        paths = save_dataset(str(tmp_path), train, test)
        assert len(paths) == 7
        loaded_train, loaded_test = load_dataset(str(tmp_path))
        for name in ("inputs", "targets", "oracle", "slice_ids"):
            np.testing.assert_array_equal(getattr(loaded_train, name), getattr(train, name))
            np.testing.assert_array_equal(getattr(loaded_test, name), getattr(test, name))
        np.testing.assert_array_equal(loaded_train.gfactor, train.gfactor)
        assert loaded_train.scale == train.scale
        assert loaded_test.meta["split"] == "test"
        assert loaded_train.volume_seeds == train.volume_seeds

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(str(tmp_path / "nowhere"))

    def test_missing_container(self, tmp_path):
        """일부 파일이 없으면 DataError"""
        train, test = build_dataset(tiny_config())
        save_dataset(str(tmp_path), train, test)
        (tmp_path / "test" / "targets.nxd").unlink()
        with pytest.raises(DataError):
            load_dataset(str(tmp_path))
