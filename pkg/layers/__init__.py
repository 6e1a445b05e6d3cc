"""
레이어 패키지
네트워크가 사용하는 각 연산의 순전파/역전파 규칙
"""
from .conv import (
    ConvParams,
    ConvGrads,
    check_tensor,
    conv2d_forward,
    conv2d_backward,
)
from .batchnorm import (
    BatchNormParams,
    BatchNormCache,
    batchnorm_forward,
    batchnorm_backward,
)
from .elementwise import (
    relu,
    relu_backward,
    channel_concat,
    channel_concat_backward,
    elementwise_add,
    channel_mean_pair,
    channel_mean_pair_backward,
    magnitude,
    magnitude_backward,
)

__all__ = [
    'ConvParams',
    'ConvGrads',
    'check_tensor',
    'conv2d_forward',
    'conv2d_backward',
    'BatchNormParams',
    'BatchNormCache',
    'batchnorm_forward',
    'batchnorm_backward',
    'relu',
    'relu_backward',
    'channel_concat',
    'channel_concat_backward',
    'elementwise_add',
    'channel_mean_pair',
    'channel_mean_pair_backward',
    'magnitude',
    'magnitude_backward',
]
