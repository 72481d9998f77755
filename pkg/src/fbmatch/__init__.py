"""Foreground-background embedding matching kernels for video object segmentation."""

__version__ = "0.1.0"

from .core import (
    FrameSequence,
    ObjectMask,
    PixelPartition,
    Tensor3,
    downsample_embedding,
    downsample_mask,
    load_mask,
    load_tensor,
    partition_pixels,
    save_mask,
    save_tensor,
)
from .distance import MatchParams, pixel_distance
from .errors import *  # noqa: F401,F403
from .instance import GateParams, GuidanceVector, gate_forward, instance_pool
from .matching import (
    AtrousSpec,
    MatchOutput,
    WindowSet,
    count_atrous_candidates,
    global_match,
    match_object,
    multi_local_match,
    oracle_match,
)
from .metrics import ScorePair, boundary_f, bootstrapped_ce, jaccard
from .pipeline import (
    DEFAULT_SCALES,
    AssembledFeatures,
    ScaleFrames,
    ScaleSpec,
    assemble_features,
    nn_propagate,
    run_multiscale,
    run_scale,
)
from .sampling import CropConfig, balanced_random_crop, sample_clip
