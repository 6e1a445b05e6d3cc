"""
optimizer 단위 테스트

Adam 한 스텝 손계산 비교와 plateau 스케줄러의 감소 시점
"""
import numpy as np
import pytest

from errors import NumericalError, ShapeError
from optimizer import AdamState, PlateauScheduler, adam_step, plateau_schedule


class TestAdam:
    """Adam 테스트"""

    def test_single_step_hand_value(self):
        """g = 1, lr = 1e-4 첫 스텝: Δθ = −1e-4 / (1 + 1e-8)"""
        params = {"w": np.array([0.5])}
        new, state = adam_step(params, {"w": np.array([1.0])}, AdamState(), lr=1e-4)
        delta = new["w"][0] - 0.5
        assert delta == pytest.approx(-1e-4 / (1 + 1e-8), abs=1e-12)
        assert delta == pytest.approx(-9.99999e-5, abs=1e-9)
        assert state.step == 1

    def test_bias_correction_makes_step_sign_sized(self):
        """첫 스텝 크기는 기울기 크기와 무관하게 ≈ lr"""
        params = {"a": np.zeros(3)}
        grads = {"a": np.array([1e-3, -5.0, 200.0])}
        new, _ = adam_step(params, grads, AdamState(), lr=1e-3)
        np.testing.assert_allclose(new["a"], -1e-3 * np.sign(grads["a"]), rtol=1e-4)

    def test_zero_gradient_keeps_params(self):
        """g = 0 이면 파라미터 불변"""
        params = {"w": np.array([1.0, -2.0], dtype=np.float32)}
        new, _ = adam_step(params, {"w": np.zeros(2, dtype=np.float32)}, AdamState(), lr=1e-4)
        np.testing.assert_array_equal(new["w"], params["w"])
        assert new["w"].dtype == np.float32

    def test_does_not_mutate_inputs(self):
        """입력 파라미터와 상태는 변경하지 않음"""
        params = {"w": np.array([1.0])}
        state = AdamState()
        adam_step(params, {"w": np.array([2.0])}, state, lr=1e-2)
        assert params["w"][0] == 1.0
        assert state.step == 0 and not state.m

    def test_second_step_uses_moments(self):
        """두 번째 스텝은 누적 모멘트 사용"""
        params = {"w": np.array([0.0])}
        p1, s1 = adam_step(params, {"w": np.array([1.0])}, AdamState(), lr=1e-4)
        p2, s2 = adam_step(p1, {"w": np.array([1.0])}, s1, lr=1e-4)
        m = 0.9 * 0.1 + 0.1
        v = 0.999 * 0.001 + 0.001
        expected = 1e-4 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
        assert p2["w"][0] - p1["w"][0] == pytest.approx(-expected, abs=1e-15)
        assert s2.step == 2

    def test_non_finite_gradient(self):
        """NaN 기울기는 경로를 포함한 NumericalError"""
        with pytest.raises(NumericalError, match="L3.conv.kernels"):
            adam_step({"L3.conv.kernels": np.zeros(2)},
                      {"L3.conv.kernels": np.array([np.nan, 0.0])}, AdamState(), lr=1e-4)

    def test_unknown_path(self):
        with pytest.raises(ShapeError):
            adam_step({"a": np.zeros(1)}, {"b": np.zeros(1)}, AdamState(), lr=1e-4)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step({"a": np.zeros(2)}, {"a": np.zeros(3)}, AdamState(), lr=1e-4)

    def test_non_positive_lr(self):
        with pytest.raises(ValueError):
            adam_step({"a": np.zeros(1)}, {"a": np.zeros(1)}, AdamState(), lr=0.0)

    def test_state_arrays_roundtrip(self):
        """체크포인트용 평탄화 후 복원"""
        _, state = adam_step({"x": np.ones(2)}, {"x": np.ones(2)}, AdamState(), lr=1e-3)
        restored = AdamState.from_arrays(state.arrays(), step=state.step)
        np.testing.assert_array_equal(restored.m["x"], state.m["x"])
        np.testing.assert_array_equal(restored.v["x"], state.v["x"])
        assert restored.step == 1


class TestPlateauScheduler:
    """학습률 스케줄러 테스트"""

    def test_eleven_flat_epochs(self):
        """상수 손실 11 에포크 → 11 에포크째에 2e-5"""
        lrs = plateau_schedule([1.0] * 11)
        assert lrs[:10] == [1e-4] * 10
        assert lrs[10] == pytest.approx(2e-5)

    def test_twenty_five_flat_epochs(self):
        """두 번 감소: 11, 21 에포크 (1e-4 → 2e-5 → 4e-6)"""
        scheduler = PlateauScheduler()
        lrs = [scheduler.step(1.0) for _ in range(25)]
        assert scheduler.drops == [11, 21]
        assert lrs[19] == pytest.approx(2e-5)
        assert lrs[20] == pytest.approx(4e-6)
        assert lrs[24] == pytest.approx(4e-6)

    def test_decreasing_loss_never_drops(self):
        """매 에포크 엄격히 감소하면 lr 유지"""
        assert plateau_schedule([1.0 / (i + 1) for i in range(30)]) == [1e-4] * 30

    def test_improvement_resets_counter(self):
        """9 에포크 정체 후 개선되면 카운터 초기화"""
        losses = [1.0] * 10 + [0.5] + [0.5] * 9
        assert plateau_schedule(losses) == [1e-4] * 20

    def test_equal_value_is_not_improvement(self):
        """같은 값은 개선이 아님 (엄격한 비교)"""
        scheduler = PlateauScheduler(patience=2)
        scheduler.step(1.0)
        scheduler.step(1.0)
        assert scheduler.step(1.0) == pytest.approx(2e-5)

    def test_state_roundtrip(self):
        """state_dict → from_state 후 같은 동작"""
        a = PlateauScheduler()
        for _ in range(7):
            a.step(2.0)
        b = PlateauScheduler.from_state(a.state_dict())
        assert [a.step(2.0) for _ in range(5)] == [b.step(2.0) for _ in range(5)]

    @pytest.mark.parametrize("kwargs", [{"factor": 1.0}, {"factor": 0.0}, {"patience": 0}, {"lr": -1.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            PlateauScheduler(**kwargs)
