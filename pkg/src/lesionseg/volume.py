"""Volumetric grids: scalar volumes, binary masks, co-registered contrast
triples, and pure axis-permutation reorientation.

A Volume stores data as a float32 array indexed (x, y, z) on the canonical
grid, together with per-axis spacing in mm and an orientation tag naming
which permutation state the axes are in. Reorientation never resamples; it
assumes near-isotropic registered grids and just permutes axes so the first
two become the in-plane axes and the third the slice axis:

    axial    -> (x, y, z)   slices along z
    coronal  -> (x, z, y)   slices along y
    sagittal -> (y, z, x)   slices along x

so a voxel at canonical (i, j, k) lands at (i, k, j) in a coronal volume and
at (j, k, i) in a sagittal one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .tensor_ops import ContractError

ORIENTATIONS = ("axial", "coronal", "sagittal")

# reoriented axis i holds canonical axis _PERM[orientation][i]
_PERM = {"axial": (0, 1, 2), "coronal": (0, 2, 1), "sagittal": (1, 2, 0)}


class GridMismatchError(ContractError):
    """Volumes expected to share a grid disagree on dims/spacing/orientation."""


@dataclass
class Volume:
    """3-D scalar grid with spacing (mm) and orientation metadata."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    orientation: str = "axial"

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ContractError(f"volume data must be 3-D, got {self.data.shape}")
        if any(s <= 0 for s in self.spacing):
            raise ContractError(f"spacing must be positive, got {self.spacing}")
        if self.orientation not in ORIENTATIONS:
            raise ContractError(f"unknown orientation {self.orientation!r}")
        if self.data.dtype != np.float32:
            self.data = self.data.astype(np.float32)
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class LabelMask:
    """Binary mask on the same kind of grid as Volume; values exactly {0,1}."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    orientation: str = "axial"

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ContractError(f"mask data must be 3-D, got {self.data.shape}")
        if any(s <= 0 for s in self.spacing):
            raise ContractError(f"spacing must be positive, got {self.spacing}")
        if self.orientation not in ORIENTATIONS:
            raise ContractError(f"unknown orientation {self.orientation!r}")
        if self.data.dtype != np.uint8:
            data = self.data
            if not np.isin(data, (0, 1)).all():
                raise ContractError("mask values must be exactly 0 or 1")
            self.data = data.astype(np.uint8)
        elif self.data.max(initial=0) > 1:
            raise ContractError("mask values must be exactly 0 or 1")
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def voxel_count(self) -> int:
        return int(self.data.sum())


@dataclass
class MultiContrast:
    """Co-registered MPRAGE, T2-w and FLAIR volumes sharing one grid."""

    mprage: Volume
    t2: Volume
    flair: Volume

    def __post_init__(self):
        check_same_grid(self.mprage, self.t2)
        check_same_grid(self.mprage, self.flair)

    @property
    def volumes(self) -> tuple[Volume, Volume, Volume]:
        return (self.mprage, self.t2, self.flair)


def check_same_grid(a, b) -> None:
    if a.dims != b.dims or a.spacing != b.spacing or a.orientation != b.orientation:
        raise GridMismatchError(
            f"grid mismatch: {a.dims}/{a.spacing}/{a.orientation} vs "
            f"{b.dims}/{b.spacing}/{b.orientation}"
        )


def _inverse_perm(perm):
    inv = [0, 0, 0]
    for i, p in enumerate(perm):
        inv[p] = i
    return tuple(inv)


def reorient(v, target: str):
    """Permute a Volume or LabelMask into the target orientation.

    Reorienting to the current orientation returns an identical copy, and
    any A->B->A round trip is bit-exact because only axes move.
    """
    if target not in ORIENTATIONS:
        raise ContractError(f"unknown orientation {target!r}")
    if target == v.orientation:
        return replace(v, data=v.data.copy())
    to_canonical = _inverse_perm(_PERM[v.orientation])
    perm = tuple(to_canonical[i] for i in _PERM[target])
    data = np.ascontiguousarray(v.data.transpose(perm))
    spacing = tuple(v.spacing[p] for p in perm)
    return replace(v, data=data, spacing=spacing, orientation=target)


def reorient_contrasts(mc: MultiContrast, target: str) -> MultiContrast:
    return MultiContrast(
        reorient(mc.mprage, target),
        reorient(mc.t2, target),
        reorient(mc.flair, target),
    )


def normalize_volume(v: Volume) -> Volume:
    """Z-score the non-zero (brain) voxels; exact zeros stay zero.

    Skull-stripped inputs and the zero padding added around patches then
    share one background value. Applied identically at train and test time.
    """
    data = v.data
    nz = data != 0
    if not nz.any():
        return replace(v, data=data.copy())
    vals = data[nz].astype(np.float64)
    mean = vals.mean()
    std = vals.std()
    if std < 1e-12:
        out = np.zeros_like(data)
    else:
        out = np.where(nz, (data - np.float32(mean)) / np.float32(std), np.float32(0))
    return replace(v, data=out.astype(np.float32))
