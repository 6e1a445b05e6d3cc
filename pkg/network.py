"""
2단계 잔차 학습 디노이징 CNN
특징 추출 모듈 → 브리지 모듈 (전달 블록 ∥ 잔차 블록) → 조립 모듈

중간 텐서 라벨:
    a′ 입력 평균, b 추출 특징, c 1단계 잔차, d = c + a′ (중간 출력),
    e 잔차 블록 특징, f 전달 블록 특징, g 2단계 잔차, h = g + d (최종 출력)

변형:
    full: 전달 블록 + 잔차 블록 (14개 합성곱)
    tra:  전달 블록만 (d := a′)
    res:  잔차 블록만
"""
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

import config
from errors import ShapeError
from layers import (
    BatchNormCache,
    BatchNormParams,
    ConvParams,
    batchnorm_backward,
    batchnorm_forward,
    channel_concat,
    channel_concat_backward,
    channel_mean_pair,
    channel_mean_pair_backward,
    check_tensor,
    conv2d_backward,
    conv2d_forward,
    elementwise_add,
    magnitude,
    relu,
    relu_backward,
)
from simulators.acquisition import ComplexImage, complex_images_to_tensor
from utils import substream

logger = config.setup_logger(__name__)

INPUT_MODES = ("dual", "single")
VARIANTS = ("full", "tra", "res")
INPUT_CHANNELS = {"dual": 4, "single": 2}
RESIDUAL_CHANNELS = 2


# ==============================================
# 설정 / 파라미터 타입
# ==============================================

@dataclass(frozen=True)
class NetworkConfig:
    """네트워크 구조 상수"""
    input_mode: str = "dual"
    variant: str = "full"
    extract_width: int = config.EXTRACT_WIDTH
    bridge_width: int = config.BRIDGE_WIDTH
    extract_layers: int = config.EXTRACT_LAYERS
    assembly_hidden: int = config.ASSEMBLY_HIDDEN_LAYERS

    def __post_init__(self):
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode 는 {INPUT_MODES} 중 하나여야 합니다: {self.input_mode}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant 는 {VARIANTS} 중 하나여야 합니다: {self.variant}")
        if min(self.extract_width, self.bridge_width, self.extract_layers) < 1:
            raise ValueError("채널 폭과 레이어 수는 1 이상이어야 합니다")
        if self.assembly_hidden < 0:
            raise ValueError("assembly_hidden 은 0 이상이어야 합니다")

    @property
    def in_channels(self) -> int:
        return INPUT_CHANNELS[self.input_mode]

    @property
    def has_transport(self) -> bool:
        return self.variant in ("full", "tra")

    @property
    def has_residual(self) -> bool:
        return self.variant in ("full", "res")


@dataclass
class Layer:
    """합성곱 + (선택) BN + (선택) ReLU"""
    name: str
    module: str                 # extract | bridge_tra | bridge_res | assembly
    conv: ConvParams
    bn: Optional[BatchNormParams] = None
    relu: bool = False
    label: Optional[str] = None  # 이 레이어가 만드는 중간 텐서 라벨 (b, c, e, f, g)

    @property
    def trains_bias(self) -> bool:
        """BN 앞 합성곱 bias 는 0 으로 고정 (학습하지 않음)"""
        return self.bn is None

    def astype(self, dtype) -> "Layer":
        return replace(self, conv=self.conv.astype(dtype),
                       bn=self.bn.astype(dtype) if self.bn is not None else None)


@dataclass
class NetworkParams:
    """순서가 있는 레이어 목록"""
    config: NetworkConfig
    layers: List[Layer]

    def __iter__(self) -> Iterator[Layer]:
        return iter(self.layers)

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(f"레이어 없음: {name}")

    def has_layer(self, name: str) -> bool:
        return any(layer.name == name for layer in self.layers)

    @property
    def conv_count(self) -> int:
        return len(self.layers)

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(self.config, [layer.astype(dtype) for layer in self.layers])

    def copy(self) -> "NetworkParams":
        return self.astype(self.layers[0].conv.kernels.dtype)

    # ------------------------------------------
    # 학습 가능한 파라미터 (경로 → 배열)
    # ------------------------------------------
    def trainable(self) -> Dict[str, np.ndarray]:
        arrays: Dict[str, np.ndarray] = {}
        for layer in self.layers:
            arrays[f"{layer.name}.conv.kernels"] = layer.conv.kernels
            if layer.trains_bias:
                arrays[f"{layer.name}.conv.bias"] = layer.conv.bias
            if layer.bn is not None:
                arrays[f"{layer.name}.bn.gamma"] = layer.bn.gamma
                arrays[f"{layer.name}.bn.beta"] = layer.bn.beta
        return arrays

    def buffers(self) -> Dict[str, np.ndarray]:
        """BN running 통계"""
        arrays: Dict[str, np.ndarray] = {}
        for layer in self.layers:
            if layer.bn is not None:
                arrays[f"{layer.name}.bn.running_mean"] = layer.bn.running_mean
                arrays[f"{layer.name}.bn.running_var"] = layer.bn.running_var
        return arrays

    def state(self) -> Dict[str, np.ndarray]:
        return {**self.trainable(), **self.buffers()}

    def with_arrays(self, arrays: Dict[str, np.ndarray]) -> "NetworkParams":
        """경로 → 배열 dict 로 일부 또는 전체 배열을 교체한 새 파라미터"""
        layers = []
        for layer in self.layers:
            conv = ConvParams(
                kernels=arrays.get(f"{layer.name}.conv.kernels", layer.conv.kernels),
                bias=arrays.get(f"{layer.name}.conv.bias", layer.conv.bias),
            )
            bn = layer.bn
            if bn is not None:
                bn = replace(
                    bn,
                    gamma=arrays.get(f"{layer.name}.bn.gamma", bn.gamma),
                    beta=arrays.get(f"{layer.name}.bn.beta", bn.beta),
                    running_mean=arrays.get(f"{layer.name}.bn.running_mean", bn.running_mean),
                    running_var=arrays.get(f"{layer.name}.bn.running_var", bn.running_var),
                )
            layers.append(replace(layer, conv=conv, bn=bn))
        return NetworkParams(self.config, layers)

    def with_running_stats(self, updates: Dict[str, BatchNormParams]) -> "NetworkParams":
        """train 순전파가 돌려준 BN running 통계만 반영 (gamma/beta 는 유지)"""
        layers = []
        for layer in self.layers:
            update = updates.get(layer.name)
            if update is not None and layer.bn is not None:
                layer = replace(layer, bn=replace(layer.bn, running_mean=update.running_mean,
                                                  running_var=update.running_var))
            layers.append(layer)
        return NetworkParams(self.config, layers)

    def audit(self) -> List[dict]:
        """레이어 구조 점검표"""
        rows = []
        for layer in self.layers:
            k = layer.conv.kernels
            rows.append({
                "name": layer.name,
                "module": layer.module,
                "label": layer.label,
                "in_channels": int(k.shape[1]),
                "out_channels": int(k.shape[0]),
                "kernel": f"{k.shape[2]}x{k.shape[3]}",
                "stride": 1,
                "padding": 1,
                "bn": layer.bn is not None,
                "relu": layer.relu,
            })
        return rows


# ==============================================
# 네트워크 생성
# ==============================================

def _layer_plan(cfg: NetworkConfig) -> List[dict]:
    """레이어 배치 (이름, 모듈, 입출력 채널, BN/ReLU, 라벨)"""
    ew, bw = cfg.extract_width, cfg.bridge_width
    plan = []
    n_extract = cfg.extract_layers
    for i in range(n_extract):
        plan.append(dict(name=f"L{i + 1}", module="extract",
                         cin=cfg.in_channels if i == 0 else ew, cout=ew, bn=True, relu=True,
                         label="b" if i == n_extract - 1 else None))

    idx = n_extract + 1
    names = {}
    for key in ("transport", "residual", "residual_feat"):
        names[key] = f"L{idx}"
        idx += 1

    if cfg.has_transport:
        plan.append(dict(name=names["transport"], module="bridge_tra",
                         cin=ew, cout=bw, bn=True, relu=False, label="f"))
    if cfg.has_residual:
        plan.append(dict(name=names["residual"], module="bridge_res",
                         cin=ew, cout=RESIDUAL_CHANNELS, bn=False, relu=False, label="c"))
        plan.append(dict(name=names["residual_feat"], module="bridge_res",
                         cin=RESIDUAL_CHANNELS, cout=bw, bn=True, relu=True, label="e"))

    assembly_in = bw * (int(cfg.has_transport) + int(cfg.has_residual))
    plan.append(dict(name=f"L{idx}", module="assembly",
                     cin=assembly_in, cout=bw, bn=True, relu=True, label=None))
    idx += 1
    for _ in range(cfg.assembly_hidden):
        plan.append(dict(name=f"L{idx}", module="assembly",
                         cin=bw, cout=bw, bn=True, relu=True, label=None))
        idx += 1
    plan.append(dict(name=f"L{idx}", module="assembly",
                     cin=bw, cout=RESIDUAL_CHANNELS, bn=False, relu=False, label="g"))
    return plan


def build_network(config_: NetworkConfig, seed: int, dtype=np.float32) -> NetworkParams:
    """
    He 초기화 (N(0, 2/(Cin·9))), BN gamma=1 / beta=0,
    잔차를 만드는 합성곱(c, g)은 0으로 초기화 → 초기 출력 = 2NEX 평균

    Args:
        config_: 네트워크 설정
        seed: 가중치 초기화 시드
    """
    rng = substream(seed, "init")
    k = config.KERNEL_SIZE
    layers = []
    for spec in _layer_plan(config_):
        shape = (spec["cout"], spec["cin"], k, k)
        if spec["label"] in ("c", "g"):
            kernels = np.zeros(shape, dtype=dtype)
        else:
            std = np.sqrt(2.0 / (spec["cin"] * k * k))
            kernels = (rng.standard_normal(shape) * std).astype(dtype)
        conv = ConvParams(kernels=kernels, bias=np.zeros(spec["cout"], dtype=dtype))
        bn = BatchNormParams.fresh(spec["cout"], dtype) if spec["bn"] else None
        layers.append(Layer(name=spec["name"], module=spec["module"], conv=conv,
                            bn=bn, relu=spec["relu"], label=spec["label"]))

    params = NetworkParams(config_, layers)
    logger.debug(f"네트워크 생성: {config_.variant}/{config_.input_mode}, 합성곱 {params.conv_count}개")
    return params


# ==============================================
# 순전파
# ==============================================

@dataclass
class LayerCache:
    conv_input: np.ndarray
    bn_cache: Optional[BatchNormCache] = None
    relu_input: Optional[np.ndarray] = None


@dataclass
class ForwardTrace:
    """중간 텐서 (a′ … h) 와 레이어별 역전파 캐시"""
    mode: str
    a_prime: np.ndarray
    b: np.ndarray
    d: np.ndarray
    g: np.ndarray
    h: np.ndarray
    c: Optional[np.ndarray] = None
    e: Optional[np.ndarray] = None
    f: Optional[np.ndarray] = None
    caches: Dict[str, LayerCache] = field(default_factory=dict)
    bn_updates: Dict[str, BatchNormParams] = field(default_factory=dict)


def _layer_forward(layer: Layer, x: np.ndarray, mode: str) -> Tuple[np.ndarray, LayerCache]:
    cache = LayerCache(conv_input=x)
    out = conv2d_forward(x, layer.conv)
    if layer.bn is not None:
        out, cache.bn_cache = batchnorm_forward(out, layer.bn, mode)
    if layer.relu:
        cache.relu_input = out
        out = relu(out)
    return out, cache


def _layer_backward(layer: Layer, cache: LayerCache,
                    grad_out: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    grads: Dict[str, np.ndarray] = {}
    if layer.relu:
        grad_out = relu_backward(grad_out, cache.relu_input)
    if layer.bn is not None:
        grad_out, grads[f"{layer.name}.bn.gamma"], grads[f"{layer.name}.bn.beta"] = \
            batchnorm_backward(grad_out, cache.bn_cache)
    grad_x, conv_grads = conv2d_backward(grad_out, cache.conv_input, layer.conv)
    grads[f"{layer.name}.conv.kernels"] = conv_grads.kernels
    if layer.trains_bias:
        grads[f"{layer.name}.conv.bias"] = conv_grads.bias
    return grad_x, grads


def _modules(params: NetworkParams) -> Dict[str, List[Layer]]:
    groups: Dict[str, List[Layer]] = {"extract": [], "bridge_tra": [], "bridge_res": [], "assembly": []}
    for layer in params:
        groups[layer.module].append(layer)
    return groups


def forward(params: NetworkParams, x: np.ndarray, mode: str = "eval") -> ForwardTrace:
    """
    네트워크 순전파

    Args:
        params: 네트워크 파라미터
        x: dual [N, 4, H, W] (Re₁, Im₁, Re₂, Im₂) 또는 single [N, 2, H, W]
        mode: "train" 또는 "eval"

    Returns:
        ForwardTrace (h 가 2채널 복소 디노이즈 결과)
    """
    cfg = params.config
    _, c_in, _, _ = check_tensor(x, "input")
    if c_in != cfg.in_channels:
        raise ShapeError(f"{cfg.input_mode} 입력은 {cfg.in_channels}채널이어야 합니다 (받은 값: {c_in})")

    groups = _modules(params)
    caches: Dict[str, LayerCache] = {}
    bn_updates: Dict[str, BatchNormParams] = {}

    def run(layer: Layer, inp: np.ndarray) -> np.ndarray:
        out, cache = _layer_forward(layer, inp, mode)
        caches[layer.name] = cache
        if cache.bn_cache is not None and cache.bn_cache.updated_params is not None:
            bn_updates[layer.name] = cache.bn_cache.updated_params
        return out

    a_prime = channel_mean_pair(x) if cfg.input_mode == "dual" else x

    b = x
    for layer in groups["extract"]:
        b = run(layer, b)

    f = run(groups["bridge_tra"][0], b) if cfg.has_transport else None

    c = e = None
    if cfg.has_residual:
        res_conv, res_feat = groups["bridge_res"]
        c = run(res_conv, b)
        d = elementwise_add(c, a_prime)
        e = run(res_feat, d)
    else:
        d = a_prime

    if e is not None and f is not None:
        z = channel_concat(e, f)
    else:
        z = e if e is not None else f

    g = z
    for layer in groups["assembly"]:
        g = run(layer, g)
    h = elementwise_add(g, d)

    return ForwardTrace(mode=mode, a_prime=a_prime, b=b, c=c, d=d, e=e, f=f, g=g, h=h,
                        caches=caches, bn_updates=bn_updates)


# ==============================================
# 역전파
# ==============================================

@dataclass
class NetworkGrads:
    """경로 → 기울기 (trainable() 과 같은 키) + 입력 기울기"""
    params: Dict[str, np.ndarray]
    input: np.ndarray


def backward(params: NetworkParams, trace: ForwardTrace, grad_h: np.ndarray) -> NetworkGrads:
    """
    두 스킵 연결 경로를 모두 누적하는 역전파

    d 는 h 의 합과 e 레이어 입력 양쪽에서, a′ 은 d 로부터 기울기를 받고,
    dual 모드에서 a′ 기울기는 평균 연산을 통해 두 NEX 에 ½ 씩 돌아갑니다.
    """
    if trace.mode != "train":
        raise ValueError("역전파는 train 모드 순전파 trace 에서만 가능합니다")
    if grad_h.shape != trace.h.shape:
        raise ShapeError(f"grad_h shape {grad_h.shape} != h {trace.h.shape}")

    cfg = params.config
    groups = _modules(params)
    grads: Dict[str, np.ndarray] = {}

    def back(layer: Layer, grad: np.ndarray) -> np.ndarray:
        grad_in, layer_grads = _layer_backward(layer, trace.caches[layer.name], grad)
        grads.update(layer_grads)
        return grad_in

    # h = g + d
    grad_d = grad_h
    grad_z = grad_h
    for layer in reversed(groups["assembly"]):
        grad_z = back(layer, grad_z)

    if cfg.has_transport and cfg.has_residual:
        grad_e, grad_f = channel_concat_backward(grad_z, trace.e.shape[1])
    elif cfg.has_transport:
        grad_e, grad_f = None, grad_z
    else:
        grad_e, grad_f = grad_z, None

    grad_b = np.zeros_like(trace.b)
    if cfg.has_residual:
        res_conv, res_feat = groups["bridge_res"]
        grad_d = grad_d + back(res_feat, grad_e)
        # d = c + a′
        grad_b = grad_b + back(res_conv, grad_d)
    if cfg.has_transport:
        grad_b = grad_b + back(groups["bridge_tra"][0], grad_f)
    grad_a_prime = grad_d

    grad_x = grad_b
    for layer in reversed(groups["extract"]):
        grad_x = back(layer, grad_x)

    if cfg.input_mode == "dual":
        grad_x = grad_x + channel_mean_pair_backward(grad_a_prime)
    else:
        grad_x = grad_x + grad_a_prime

    return NetworkGrads(params=grads, input=grad_x)


# ==============================================
# 슬라이스 디노이징
# ==============================================

def network_input(nex: Sequence[ComplexImage], input_mode: str, dtype=np.float32) -> np.ndarray:
    """
    복소 영상 목록 → 네트워크 입력 [1, C, H, W]

    dual: 두 NEX 를 그대로 결합, single: 복소 평균 한 장
    """
    items = list(nex)
    if input_mode == "dual":
        if len(items) != 2:
            raise ShapeError(f"dual 입력에는 NEX 2장이 필요합니다: {len(items)}")
        return complex_images_to_tensor(items, dtype)[None]
    if input_mode == "single":
        if len(items) == 1:
            return complex_images_to_tensor(items, dtype)[None]
        avg = ComplexImage.from_complex(np.mean([img.to_complex() for img in items], axis=0))
        return complex_images_to_tensor([avg], dtype)[None]
    raise ValueError(f"알 수 없는 input_mode: {input_mode}")


def denoise_batch(params: NetworkParams, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """eval 모드 순전파 → (h [N, 2, H, W], 크기 [N, H, W])"""
    h = forward(params, x, mode="eval").h
    return h, magnitude(h)[:, 0]


def denoise_slice(params: NetworkParams,
                  nex_pair_or_avg: Sequence[ComplexImage]) -> Tuple[ComplexImage, np.ndarray]:
    """
    2D 슬라이스 하나를 디노이즈합니다.

    Returns:
        (복소 결과, 크기 영상)
    """
    x = network_input(nex_pair_or_avg, params.config.input_mode,
                      dtype=params.layers[0].conv.kernels.dtype)
    h, mag = denoise_batch(params, x)
    return ComplexImage(real=h[0, 0].astype(np.float64), imag=h[0, 1].astype(np.float64)), mag[0]
