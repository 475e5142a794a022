"""Tuning-free trajectory control on a deterministic toy video diffusion stack."""

from .attention import (
    GuidanceConfig,
    TokenSet,
    build_cross_masks,
    build_spatial_self_mask,
    build_temporal_self_mask,
    gaussian_weight,
    guided_cross_attention,
    guided_self_attention,
    redistribute_isolated_attention,
    should_edit,
)
from .diffusion import (
    AttentionRecorder,
    DiffusionSchedule,
    GuidanceContext,
    MaskContext,
    NoiseConfig,
    SamplerConfig,
    ToyDenoiser,
    build_schedule,
    cfg_combine,
    ddim_step,
    denoiser_forward,
    fuse_windows,
    generate,
    q_sample,
    window_layout,
)
from .errors import ValidationError
from .kernels import BACKEND
from .metrics import MetricReport, centroid_distance, evaluate, iou, mean_iou
from .noise import (
    LowPassFilter,
    SeedSet,
    build_initial_noise,
    build_lpf,
    inject_trajectory,
    noise_flow,
    partial_repeat_sample,
    resample_high_freq,
    reschedule_noise,
    sample_gaussian,
)
from .trajectory import (
    BBox,
    CellRect,
    FrameMaskStack,
    TrajectorySpec,
    interpolate_boxes,
    local_coords,
    mask_extent,
    rasterize_masks,
    rescale_mask,
)

__version__ = "0.1.0"
