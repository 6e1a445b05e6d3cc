"""
시뮬레이터 패키지
합성 팬텀, 다중 NEX 획득, 2-NEX 잡음 통계
"""
from .acquisition import (
    ComplexImage,
    NexSet,
    acquire_nex,
    default_gfactor,
    stationary_gfactor,
    nex_psnr_gain,
    complex_images_to_tensor,
)
from .phantom import (
    Ellipse,
    PhantomSpec,
    PhantomVolume,
    generate_phantom,
    random_phantom_spec,
    random_volume,
    volume_slice_spec,
)
from .noise_stats import (
    NoiseStats,
    Chi2Fit,
    signal_strengthened_map,
    noise_map,
    rayleigh_moments,
    fit_rayleigh,
    rayleigh_pdf,
    rayleigh_goodness_of_fit,
    local_variance_map,
    pearson_r,
    histogram,
    chi2_overlay,
    NoiseReport,
    analyze_noise_pairs,
)

__all__ = [
    'ComplexImage',
    'NexSet',
    'acquire_nex',
    'default_gfactor',
    'stationary_gfactor',
    'nex_psnr_gain',
    'complex_images_to_tensor',
    'Ellipse',
    'PhantomSpec',
    'PhantomVolume',
    'generate_phantom',
    'random_phantom_spec',
    'random_volume',
    'volume_slice_spec',
    'NoiseStats',
    'Chi2Fit',
    'signal_strengthened_map',
    'noise_map',
    'rayleigh_moments',
    'fit_rayleigh',
    'rayleigh_pdf',
    'rayleigh_goodness_of_fit',
    'local_variance_map',
    'pearson_r',
    'histogram',
    'chi2_overlay',
    'NoiseReport',
    'analyze_noise_pairs',
]
