"""Training and inference pipeline over volumes.

Train side: manual masks are Gaussian-blurred into soft membership targets,
patches centered on lesion voxels are sampled from z-scored contrast
volumes, and one model per orientation is fit with mini-batch Adam on MSE.

Test side: each orientation model is run on whole 2-D slices (the network
is fully convolutional, so no tiling), the three membership volumes are
averaged, thresholded at 0.5, and small 18-connected components below the
90th-percentile volume are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .network import (
    DEFAULT_MODULE_CONFIGS,
    Network,
    build_network,
    network_backward,
    network_forward,
)
from .optim import AdamHyper, AdamState, adam_step, mse_loss
from .tensor_ops import ContractError
from .volume import (
    LabelMask,
    MultiContrast,
    Volume,
    check_same_grid,
    normalize_volume,
    reorient,
    reorient_contrasts,
)


class NoLesionError(ContractError):
    """Patch sampling needs at least one non-zero mask voxel."""


@dataclass
class PatchBatch:
    """Paired input and membership-target patches with their center voxels."""

    inputs: np.ndarray  # (batch, 3, p, p) float32
    targets: np.ndarray  # (batch, 1, p, p) float32, values in [0, 1]
    centers: np.ndarray  # (batch, 3) int voxel coordinates


@dataclass
class TrainConfig:
    patch_size: int = 45
    batch_size: int = 64
    epochs: int = 10
    validation_fraction: float = 0.2
    blur_sigma_mm: float = 1.0
    seed: int = 0
    adam: AdamHyper = field(default_factory=AdamHyper)
    # Pool size knob so desk-scale runs stay desk-scale; 17 atlases at the
    # default roughly matches a 450k-patch pool.
    patches_per_atlas: int = 26500

    def __post_init__(self):
        if self.patch_size % 2 == 0 or self.patch_size < 1:
            raise ContractError(f"patch_size must be odd, got {self.patch_size}")
        if not 0 <= self.validation_fraction < 1:
            raise ContractError(
                f"validation_fraction must be in [0,1), got {self.validation_fraction}"
            )


def _gauss_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian, truncated at 3 sigma (radius floor(3*sigma))."""
    radius = int(np.floor(3.0 * sigma))
    if sigma <= 0 or radius < 1:
        return np.ones(1)
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return k / k.sum()


def blur_labels(mask: LabelMask, sigma_mm: float) -> Volume:
    """Separable 3-D Gaussian blur of the mask into a [0,1] membership.

    Per-axis sigma is sigma_mm divided by that axis' spacing; boundaries
    replicate the edge voxel so a solid mask blurs to a solid membership.
    """
    if sigma_mm < 0:
        raise ContractError(f"sigma_mm must be >= 0, got {sigma_mm}")
    out = mask.data.astype(np.float64)
    for axis in range(3):
        k = _gauss_kernel1d(sigma_mm / mask.spacing[axis])
        if k.size == 1:
            continue
        r = k.size // 2
        pad = [(0, 0)] * 3
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="edge")
        acc = np.zeros_like(out)
        for tap in range(k.size):
            sl = [slice(None)] * 3
            sl[axis] = slice(tap, tap + out.shape[axis])
            acc += k[tap] * padded[tuple(sl)]
        out = acc
    return Volume(
        np.clip(out, 0.0, 1.0).astype(np.float32), mask.spacing, mask.orientation
    )


def sample_patch_batch(
    mc: MultiContrast,
    mask: LabelMask,
    membership: Volume,
    cfg: TrainConfig,
    rng: np.random.Generator,
    n_patches: int | None = None,
) -> PatchBatch:
    """Draw lesion-centered in-plane patches, uniformly with replacement.

    Patches live in the first two (in-plane) axes at the center's slice
    index; contrasts are z-scored per volume and zero-padded by
    (patch_size-1)/2 so centers at the volume edge are valid. Targets are
    cut from the membership volume.
    """
    check_same_grid(mc.mprage, mask)
    check_same_grid(mc.mprage, membership)
    coords = np.argwhere(mask.data != 0)
    if coords.shape[0] == 0:
        raise NoLesionError("no lesion voxels to center patches on")
    n = cfg.batch_size if n_patches is None else n_patches
    picks = coords[rng.integers(0, coords.shape[0], size=n)]

    p = cfg.patch_size
    r = (p - 1) // 2
    pad = ((r, r), (r, r), (0, 0))
    channels = [
        np.pad(normalize_volume(v).data, pad) for v in mc.volumes
    ]
    target_vol = np.pad(membership.data, pad)

    inputs = np.empty((n, 3, p, p), dtype=np.float32)
    targets = np.empty((n, 1, p, p), dtype=np.float32)
    for b, (i, j, k) in enumerate(picks):
        for c, vol in enumerate(channels):
            inputs[b, c] = vol[i : i + p, j : j + p, k]
        targets[b, 0] = target_vol[i : i + p, j : j + p, k]
    return PatchBatch(inputs, targets, picks)


def _seed_for(base_seed: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=base_seed, spawn_key=tuple(keys))


_ORIENT_CODE = {"axial": 0, "coronal": 1, "sagittal": 2}


def _forward_loss(net, inputs, targets):
    pred, caches = network_forward(net, inputs)
    loss, grad = mse_loss(pred, targets)
    return loss, grad, caches


def train_orientation_model(
    atlases: list[tuple[MultiContrast, LabelMask]],
    orientation: str,
    cfg: TrainConfig,
    module_configs=DEFAULT_MODULE_CONFIGS,
) -> tuple[Network, list[dict]]:
    """Fit one model on patches resliced into the given orientation.

    The patch pool (patches_per_atlas from each atlas) is split once into
    train/validation; each epoch shuffles the training patches and applies
    one Adam step per mini-batch. Returns the model and one record per
    epoch with mean train and validation loss. Fully deterministic given
    cfg.seed.
    """
    if not atlases:
        raise ContractError("need at least one atlas")
    ocode = _ORIENT_CODE[orientation]

    pools = []
    for a_idx, (mc, mask) in enumerate(atlases):
        membership = blur_labels(mask, cfg.blur_sigma_mm)
        mc_o = reorient_contrasts(mc, orientation)
        mask_o = reorient(mask, orientation)
        mem_o = reorient(membership, orientation)
        rng = np.random.default_rng(_seed_for(cfg.seed, ocode, 0, a_idx))
        pools.append(
            sample_patch_batch(
                mc_o, mask_o, mem_o, cfg, rng, n_patches=cfg.patches_per_atlas
            )
        )
    inputs = np.concatenate([p.inputs for p in pools])
    targets = np.concatenate([p.targets for p in pools])

    n_total = inputs.shape[0]
    n_val = int(round(cfg.validation_fraction * n_total))
    order = np.random.default_rng(_seed_for(cfg.seed, ocode, 1)).permutation(n_total)
    val_idx, train_idx = order[:n_val], order[n_val:]

    net = build_network(module_configs, seed=cfg.seed, input_channels=3)
    kernels = net.kernels()
    states = [
        (AdamState.zeros_like(k.weights), AdamState.zeros_like(k.bias))
        for k in kernels
    ]

    history = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(_seed_for(cfg.seed, ocode, 2, epoch))
        perm = train_idx[rng.permutation(train_idx.size)]
        train_loss = 0.0
        for start in range(0, perm.size, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, grad, caches = _forward_loss(net, inputs[idx], targets[idx])
            grads = network_backward(net, caches, grad)
            for ki, (k, (gw, gb)) in enumerate(zip(kernels, grads)):
                sw, sb = states[ki]
                k.weights, sw = adam_step(k.weights, gw, sw, cfg.adam)
                k.bias, sb = adam_step(k.bias, gb, sb, cfg.adam)
                states[ki] = (sw, sb)
            train_loss += loss * idx.size
        train_loss /= max(perm.size, 1)

        val_loss = 0.0
        for start in range(0, val_idx.size, cfg.batch_size):
            idx = val_idx[start : start + cfg.batch_size]
            pred, _ = network_forward(net, inputs[idx])
            loss, _ = mse_loss(pred, targets[idx])
            val_loss += loss * idx.size
        val_loss /= max(val_idx.size, 1)
        history.append(
            {"epoch": epoch + 1, "train_loss": train_loss, "val_loss": val_loss}
        )
    return net, history


def infer_orientation(net: Network, mc: MultiContrast, orientation: str) -> Volume:
    """Slice-wise whole-slice membership inference in one orientation.

    Contrasts are z-scored exactly as in training, resliced, pushed through
    the network one full slice at a time, and the membership is returned on
    the subject's native grid.
    """
    native = mc.mprage.orientation
    mc_o = reorient_contrasts(mc, orientation)
    channels = [normalize_volume(v).data for v in mc_o.volumes]
    a, b, n_slices = channels[0].shape
    mem = np.empty((a, b, n_slices), dtype=np.float32)
    x = np.empty((1, 3, a, b), dtype=np.float32)
    for s in range(n_slices):
        for c in range(3):
            x[0, c] = channels[c][:, :, s]
        out, _ = network_forward(net, x)
        mem[:, :, s] = out[0, 0]
    vol = Volume(mem, mc_o.mprage.spacing, orientation)
    return reorient(vol, native)


def fuse_memberships(a: Volume, b: Volume, c: Volume) -> Volume:
    """Voxelwise arithmetic mean of three membership volumes."""
    check_same_grid(a, b)
    check_same_grid(a, c)
    fused = (
        a.data.astype(np.float64) + b.data.astype(np.float64) + c.data
    ) / 3.0
    return replace(a, data=fused.astype(np.float32))


def binarize(membership: Volume, threshold: float = 0.5) -> LabelMask:
    """Threshold a membership volume; the boundary value is foreground."""
    if not 0 < threshold < 1:
        raise ContractError(f"threshold must be in (0,1), got {threshold}")
    data = (membership.data >= threshold).astype(np.uint8)
    return LabelMask(data, membership.spacing, membership.orientation)


_STRUCT_18 = ndimage.generate_binary_structure(3, 2)  # faces + edges


def label_components_18(mask: LabelMask) -> tuple[np.ndarray, list[int]]:
    """Label 18-connected components (shared face or edge, not corner).

    Returns the label volume (0 background, components numbered 1..K in
    order of first appearance in C-scan order) and the per-component voxel
    counts.
    """
    labels, n = ndimage.label(mask.data, structure=_STRUCT_18)
    labels = labels.astype(np.int32)
    if n == 0:
        return labels, []
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    # scipy already numbers components by first appearance, but relabel
    # explicitly so the contract does not depend on scipy internals.
    vals, first_idx = np.unique(labels.ravel(), return_index=True)
    nz = vals != 0
    order = vals[nz][np.argsort(first_idx[nz])]
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[order] = np.arange(1, n + 1)
    volumes = [int(counts[old]) for old in order]
    return remap[labels], volumes


def nearest_rank_percentile(values: list[int], percentile: float) -> int:
    """Smallest value with at least `percentile`% of the list at or below it."""
    if not values:
        raise ContractError("percentile of an empty list is undefined")
    ordered = sorted(values)
    rank = int(np.ceil(percentile / 100.0 * len(ordered)))
    return ordered[max(rank, 1) - 1]


def filter_small_components(mask: LabelMask, percentile: float = 90) -> LabelMask:
    """Drop components strictly smaller than the nearest-rank percentile
    of all component volumes. A single component always survives."""
    labels, volumes = label_components_18(mask)
    if not volumes:
        return replace(mask, data=mask.data.copy())
    threshold = nearest_rank_percentile(volumes, percentile)
    keep = np.array([False] + [v >= threshold for v in volumes])
    return replace(mask, data=keep[labels].astype(np.uint8))


def segment(
    models: tuple[Network, Network, Network],
    mc: MultiContrast,
    threshold: float = 0.5,
    percentile: float = 90,
) -> tuple[LabelMask, Volume]:
    """Full pipeline: infer per orientation, fuse, threshold, filter.

    models must be ordered (axial, coronal, sagittal). Returns the final
    mask and the fused membership volume, both on the subject grid.
    """
    if len(models) != 3:
        raise ContractError(f"expected 3 orientation models, got {len(models)}")
    memberships = [
        infer_orientation(net, mc, orient)
        for net, orient in zip(models, ("axial", "coronal", "sagittal"))
    ]
    fused = fuse_memberships(*memberships)
    mask = binarize(fused, threshold)
    return filter_small_components(mask, percentile), fused
