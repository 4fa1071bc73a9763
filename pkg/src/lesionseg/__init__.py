"""Fully convolutional multi-contrast lesion segmentation, from scratch.

Per-orientation 2-D models built from parallel-pathway modules are trained
on lesion-centered patches against Gaussian-blurred membership targets,
applied slice-wise to whole volumes, fused across orientations, thresholded
and cleaned by connected-component filtering, then scored with overlap and
surface metrics. Everything numeric (convolution, pooling, backprop, Adam)
is implemented here on plain numpy arrays.
"""

from .metrics import (
    MetricsReport,
    UndefinedMetricError,
    cohort_summary,
    dice,
    evaluate,
    ppv,
    surface_distance,
    volume_difference,
)
from .mvol import MVolFormatError, MVolTruncationError, read_mvol, write_mvol
from .network import (
    DEFAULT_MODULE_CONFIGS,
    InceptionConfig,
    Network,
    build_network,
    count_params,
    load_network,
    network_backward,
    network_forward,
    save_network,
)
from .optim import AdamHyper, AdamState, adam_step, init_weights, mse_loss
from .phantom import PhantomSpec, PlacementError, generate_phantom
from .pipeline import (
    NoLesionError,
    PatchBatch,
    TrainConfig,
    binarize,
    blur_labels,
    filter_small_components,
    fuse_memberships,
    infer_orientation,
    label_components_18,
    sample_patch_batch,
    segment,
    train_orientation_model,
)
from .tensor_ops import ContractError, ConvKernel
from .volume import (
    LabelMask,
    MultiContrast,
    ORIENTATIONS,
    Volume,
    normalize_volume,
    reorient,
)

__version__ = "0.1.0"
