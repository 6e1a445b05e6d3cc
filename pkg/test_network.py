"""
network 단위 테스트

구조 점검, 초기 항등 성질, 스킵 연결 항등식, 전체 네트워크 기울기 검사
"""
import numpy as np
import pytest

from errors import ShapeError
from layers.gradcheck import max_relative_error, numerical_gradient, sample_indices
from network import (
    NetworkConfig,
    backward,
    build_network,
    denoise_batch,
    denoise_slice,
    forward,
    network_input,
)
from simulators.acquisition import ComplexImage

SMALL = dict(extract_width=4, bridge_width=3)


def randomize_residual_layers(params, seed=0):
    """0 초기화된 c/g 레이어를 무작위로 채워 모든 경로에 기울기가 흐르게 함"""
    rng = np.random.default_rng(seed)
    updates = {}
    for layer in params:
        if layer.label in ("c", "g"):
            dtype = layer.conv.kernels.dtype
            updates[f"{layer.name}.conv.kernels"] = (0.3 * rng.standard_normal(layer.conv.kernels.shape)).astype(dtype)
            updates[f"{layer.name}.conv.bias"] = (0.1 * rng.standard_normal(layer.conv.bias.shape)).astype(dtype)
    return params.with_arrays(updates)


class TestStructure:
    """레이어 구조 점검"""

    def test_full_has_fourteen_convs(self):
        """full 변형은 합성곱 14개, 모두 3×3 / stride 1 / padding 1"""
        rows = build_network(NetworkConfig(), seed=0).audit()
        assert len(rows) == 14
        assert [r["name"] for r in rows] == [f"L{i}" for i in range(1, 15)]
        assert all(r["kernel"] == "3x3" and r["stride"] == 1 and r["padding"] == 1 for r in rows)

    def test_channel_plan(self):
        """추출 128, 브리지/조립 64, 잔차 출력 2채널"""
        rows = {r["name"]: r for r in build_network(NetworkConfig(), seed=0).audit()}
        assert rows["L1"]["in_channels"] == 4 and rows["L1"]["out_channels"] == 128
        assert rows["L6"]["label"] == "b" and rows["L6"]["out_channels"] == 128
        assert rows["L7"]["label"] == "f" and rows["L7"]["out_channels"] == 64
        assert rows["L7"]["bn"] and not rows["L7"]["relu"]
        assert rows["L8"]["label"] == "c" and rows["L8"]["out_channels"] == 2
        assert not rows["L8"]["bn"] and not rows["L8"]["relu"]
        assert rows["L9"]["label"] == "e" and rows["L9"]["in_channels"] == 2
        assert rows["L10"]["in_channels"] == 128
        assert rows["L14"]["label"] == "g" and rows["L14"]["out_channels"] == 2
        assert not rows["L14"]["bn"] and not rows["L14"]["relu"]
        for i in (1, 2, 3, 4, 5, 6, 9, 10, 11, 12, 13):
            assert rows[f"L{i}"]["bn"] and rows[f"L{i}"]["relu"]

    def test_single_input_channels(self):
        """single 모드는 첫 레이어 입력 2채널"""
        params = build_network(NetworkConfig(input_mode="single"), seed=0)
        assert params.layer("L1").conv.in_channels == 2

    def test_tra_variant(self):
        """tra 변형은 L8/L9 없음, 조립 입력 64채널"""
        params = build_network(NetworkConfig(variant="tra"), seed=0)
        assert params.conv_count == 12
        assert not params.has_layer("L8") and not params.has_layer("L9")
        assert params.layer("L10").conv.in_channels == 64

    def test_res_variant(self):
        """res 변형은 L7 없음, 조립 입력 64채널"""
        params = build_network(NetworkConfig(variant="res"), seed=0)
        assert params.conv_count == 13
        assert not params.has_layer("L7")
        assert params.layer("L10").conv.in_channels == 64

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            NetworkConfig(variant="both")
        with pytest.raises(ValueError):
            NetworkConfig(input_mode="triple")

    def test_init_deterministic(self):
        """같은 시드 → 같은 가중치, 다른 시드 → 다른 가중치"""
        a = build_network(NetworkConfig(**SMALL), seed=3).state()
        b = build_network(NetworkConfig(**SMALL), seed=3).state()
        c = build_network(NetworkConfig(**SMALL), seed=4).state()
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert not np.array_equal(a["L1.conv.kernels"], c["L1.conv.kernels"])

    def test_residual_layers_zero_initialized(self):
        """c, g 를 만드는 합성곱은 0 으로 시작"""
        params = build_network(NetworkConfig(), seed=0)
        for name in ("L8", "L14"):
            assert not np.any(params.layer(name).conv.kernels)
            assert not np.any(params.layer(name).conv.bias)


class TestForward:
    """순전파 항등식"""

    @pytest.mark.parametrize("variant", ["full", "tra", "res"])
    def test_init_output_equals_input_average(self, variant):
        """초기화 직후 h = a′ (2NEX 복소 평균)"""
        params = build_network(NetworkConfig(variant=variant, **SMALL), seed=1)
        x = np.random.default_rng(0).standard_normal((2, 4, 8, 8)).astype(np.float32)
        trace = forward(params, x, mode="eval")
        np.testing.assert_array_equal(trace.h, trace.a_prime)
        np.testing.assert_array_equal(trace.a_prime, 0.5 * (x[:, :2] + x[:, 2:]))

    def test_single_mode_identity(self):
        """single 모드에서 a′ 은 입력 자체"""
        params = build_network(NetworkConfig(input_mode="single", **SMALL), seed=1)
        x = np.random.default_rng(1).standard_normal((1, 2, 6, 6))
        np.testing.assert_array_equal(forward(params, x).h, x)

    def test_skip_identities(self):
        """d = c + a′, h = g + d"""
        params = randomize_residual_layers(build_network(NetworkConfig(**SMALL), seed=2, dtype=np.float64))
        x = np.random.default_rng(2).standard_normal((2, 4, 6, 6))
        trace = forward(params, x, mode="train")
        np.testing.assert_allclose(trace.d, trace.c + trace.a_prime, rtol=0, atol=1e-14)
        np.testing.assert_allclose(trace.h, trace.g + trace.d, rtol=0, atol=1e-14)
        assert trace.f.shape[1] == 3 and trace.e.shape[1] == 3

    def test_tra_d_is_input_average(self):
        """tra 변형에서는 d := a′"""
        params = randomize_residual_layers(build_network(NetworkConfig(variant="tra", **SMALL), seed=2))
        x = np.random.default_rng(3).standard_normal((1, 4, 6, 6))
        trace = forward(params, x, mode="eval")
        assert trace.c is None and trace.e is None
        np.testing.assert_array_equal(trace.d, trace.a_prime)

    def test_eval_is_batch_independent(self):
        """eval 모드 결과는 배치 구성과 무관"""
        params = randomize_residual_layers(build_network(NetworkConfig(**SMALL), seed=5, dtype=np.float64))
        x = np.random.default_rng(4).standard_normal((3, 4, 6, 6))
        batched = forward(params, x, mode="eval").h
        alone = forward(params, x[1:2], mode="eval").h
        np.testing.assert_allclose(batched[1:2], alone, rtol=0, atol=1e-12)

    def test_train_forward_reports_running_stats(self):
        """train 순전파는 파라미터를 바꾸지 않고 갱신된 BN 통계를 돌려줌"""
        params = build_network(NetworkConfig(**SMALL), seed=0, dtype=np.float64)
        x = np.random.default_rng(5).standard_normal((2, 4, 6, 6)) + 3.0
        trace = forward(params, x, mode="train")
        assert set(trace.bn_updates) == {l.name for l in params if l.bn is not None}
        np.testing.assert_array_equal(params.layer("L1").bn.running_mean, 0)
        updated = params.with_running_stats(trace.bn_updates)
        assert np.any(updated.layer("L1").bn.running_mean != 0)
        np.testing.assert_array_equal(updated.layer("L1").bn.gamma, params.layer("L1").bn.gamma)

    def test_channel_mismatch(self):
        """입력 채널 수가 모드와 다르면 ShapeError"""
        params = build_network(NetworkConfig(**SMALL), seed=0)
        with pytest.raises(ShapeError):
            forward(params, np.zeros((1, 2, 4, 4), dtype=np.float32))


class TestBackward:
    """역전파 기울기 검사 (float64)"""

    @pytest.mark.parametrize("variant,input_mode", [
        ("full", "dual"), ("tra", "dual"), ("res", "dual"), ("full", "single"),
    ])
    def test_full_gradient_reduced_width(self, variant, input_mode):
        """축소 폭 네트워크의 모든 파라미터와 입력 기울기"""
        cfg = NetworkConfig(variant=variant, input_mode=input_mode, **SMALL)
        params = randomize_residual_layers(build_network(cfg, seed=7, dtype=np.float64), seed=1)
        rng = np.random.default_rng(11)
        x = rng.standard_normal((2, cfg.in_channels, 4, 4))
        r = rng.standard_normal((2, 2, 4, 4))

        def loss():
            return float(np.sum(forward(params, x, mode="train").h * r))

        grads = backward(params, forward(params, x, mode="train"), r)
        assert max_relative_error(grads.input, numerical_gradient(loss, x)) < 1e-4

        for path, array in params.trainable().items():
            analytic = grads.params[path]
            numeric = numerical_gradient(loss, array)
            assert max_relative_error(analytic, numeric, floor=1e-6) < 1e-4, path

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_across_seeds(self, seed):
        """14 레이어 네트워크 (축소 폭) 입력 전체와 파라미터 샘플 원소 기울기"""
        cfg = NetworkConfig(**SMALL)
        params = randomize_residual_layers(build_network(cfg, seed=seed, dtype=np.float64), seed=100 + seed)
        rng = np.random.default_rng(200 + seed)
        x = rng.standard_normal((2, cfg.in_channels, 4, 4))
        r = rng.standard_normal((2, 2, 4, 4))

        def loss():
            return float(np.sum(forward(params, x, mode="train").h * r))

        grads = backward(params, forward(params, x, mode="train"), r)
        assert max_relative_error(grads.input, numerical_gradient(loss, x)) < 1e-4
        for path, array in params.trainable().items():
            idx = sample_indices(array.shape, 4, rng)
            numeric = numerical_gradient(loss, array, indices=idx)
            analytic = np.array([grads.params[path][i] for i in idx])
            assert max_relative_error(analytic, np.array([numeric[i] for i in idx]), floor=1e-6) < 1e-4, path

    def test_full_width_sampled(self):
        """실제 폭 (128/64) 네트워크의 샘플 원소 기울기"""
        params = randomize_residual_layers(build_network(NetworkConfig(), seed=3, dtype=np.float64), seed=2)
        rng = np.random.default_rng(12)
        x = rng.standard_normal((1, 4, 6, 6))
        r = rng.standard_normal((1, 2, 6, 6))

        def loss():
            return float(np.sum(forward(params, x, mode="train").h * r))

        grads = backward(params, forward(params, x, mode="train"), r)
        analytic, numeric = [], []
        for path, array in params.trainable().items():
            idx = sample_indices(array.shape, 3, rng)
            num = numerical_gradient(loss, array, indices=idx)
            analytic.extend(grads.params[path][i] for i in idx)
            numeric.extend(num[i] for i in idx)
        assert max_relative_error(np.array(analytic), np.array(numeric)) < 1e-4

    def test_every_parameter_receives_gradient(self):
        """모든 학습 파라미터가 0 이 아닌 기울기를 받음"""
        params = randomize_residual_layers(build_network(NetworkConfig(**SMALL), seed=4, dtype=np.float64))
        rng = np.random.default_rng(13)
        x = rng.standard_normal((2, 4, 5, 5))
        grads = backward(params, forward(params, x, mode="train"), rng.standard_normal((2, 2, 5, 5)))
        assert set(grads.params) == set(params.trainable())
        for path, g in grads.params.items():
            assert np.any(g != 0), path

    def test_bias_before_bn_not_trainable(self):
        """BN 이 뒤따르는 합성곱 bias 는 학습 대상이 아니고 0 으로 남음"""
        params = build_network(NetworkConfig(**SMALL), seed=4, dtype=np.float64)
        trainable = params.trainable()
        for layer in params:
            path = f"{layer.name}.conv.bias"
            assert (path in trainable) == (layer.bn is None), path
            if layer.bn is not None:
                assert not np.any(layer.conv.bias)
        assert "L7.conv.bias" not in trainable
        assert "L8.conv.bias" in trainable and "L14.conv.bias" in trainable

    def test_zero_grad_h_gives_zero_grads(self):
        """grad_h = 0 이면 모든 기울기가 0"""
        params = randomize_residual_layers(build_network(NetworkConfig(**SMALL), seed=4, dtype=np.float64))
        x = np.random.default_rng(14).standard_normal((2, 4, 5, 5))
        trace = forward(params, x, mode="train")
        grads = backward(params, trace, np.zeros_like(trace.h))
        assert all(not np.any(g) for g in grads.params.values())
        assert not np.any(grads.input)

    def test_init_input_gradient_is_half(self):
        """초기화 직후 dual 입력 기울기는 각 NEX 에 grad_h / 2"""
        params = build_network(NetworkConfig(**SMALL), seed=0, dtype=np.float64)
        rng = np.random.default_rng(15)
        x = rng.standard_normal((1, 4, 5, 5))
        grad_h = rng.standard_normal((1, 2, 5, 5))
        grads = backward(params, forward(params, x, mode="train"), grad_h)
        np.testing.assert_allclose(grads.input, 0.5 * np.concatenate([grad_h, grad_h], axis=1),
                                   rtol=0, atol=1e-14)

    def test_eval_trace_rejected(self):
        params = build_network(NetworkConfig(**SMALL), seed=0)
        trace = forward(params, np.zeros((1, 4, 4, 4), dtype=np.float32), mode="eval")
        with pytest.raises(ValueError):
            backward(params, trace, np.zeros_like(trace.h))

    def test_grad_shape_checked(self):
        params = build_network(NetworkConfig(**SMALL), seed=0)
        trace = forward(params, np.ones((2, 4, 4, 4), dtype=np.float32), mode="train")
        with pytest.raises(ShapeError):
            backward(params, trace, np.zeros((2, 2, 3, 3), dtype=np.float32))


class TestDenoise:
    """슬라이스 디노이징"""

    def test_network_input_modes(self):
        """dual 은 4채널, single 은 복소 평균 2채널"""
        rng = np.random.default_rng(0)
        a = ComplexImage.from_complex(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))
        b = ComplexImage.from_complex(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))
        assert network_input([a, b], "dual").shape == (1, 4, 4, 4)
        single = network_input([a, b], "single", dtype=np.float64)
        np.testing.assert_allclose(single[0, 0], 0.5 * (a.real + b.real))
        np.testing.assert_allclose(single[0, 1], 0.5 * (a.imag + b.imag))
        with pytest.raises(ShapeError):
            network_input([a], "dual")

    def test_untrained_slice_is_average(self):
        """초기화된 네트워크의 디노이즈 결과는 2NEX 평균"""
        rng = np.random.default_rng(1)
        pair = [ComplexImage.from_complex(rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6)))
                for _ in range(2)]
        params = build_network(NetworkConfig(**SMALL), seed=0, dtype=np.float64)
        out, mag = denoise_slice(params, pair)
        avg = 0.5 * (pair[0].to_complex() + pair[1].to_complex())
        np.testing.assert_allclose(out.to_complex(), avg, rtol=0, atol=1e-15)
        np.testing.assert_allclose(mag, np.abs(avg), rtol=0, atol=1e-5)

    def test_denoise_batch_shapes(self):
        params = build_network(NetworkConfig(**SMALL), seed=0)
        h, mag = denoise_batch(params, np.ones((3, 4, 5, 5), dtype=np.float32))
        assert h.shape == (3, 2, 5, 5) and mag.shape == (3, 5, 5)
