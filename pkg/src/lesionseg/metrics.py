"""Overlap and surface agreement metrics between an automated mask A and a
manual mask M.

dice     = 2|A n M| / (|A| + |M|)
ppv      = |A n M| / |A|
vd       = abs(|A| - |M|) / |M|
sd       = mean of the two directed Hausdorff distances between boundary
           voxel sets, in mm (spacing-weighted Euclidean)

Boundary voxels are foreground voxels with at least one background
6-neighbor; anything outside the volume counts as background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .tensor_ops import ContractError
from .volume import LabelMask, check_same_grid


class UndefinedMetricError(ContractError):
    """The metric is undefined for these inputs (e.g. an empty mask)."""


@dataclass
class MetricsReport:
    """The four metrics for one segmentation pair; None marks an undefined
    entry (its precondition failed, e.g. dividing by an empty mask)."""

    dice: float | None
    ppv: float | None
    volume_difference: float | None
    surface_distance: float | None

    def as_dict(self) -> dict:
        return {
            "dice": self.dice,
            "ppv": self.ppv,
            "volume_difference": self.volume_difference,
            "surface_distance": self.surface_distance,
        }


def _counts(a: LabelMask, m: LabelMask) -> tuple[int, int, int]:
    check_same_grid(a, m)
    na = int(a.data.sum())
    nm = int(m.data.sum())
    inter = int(np.logical_and(a.data, m.data).sum())
    return na, nm, inter


def dice(a: LabelMask, m: LabelMask) -> float:
    na, nm, inter = _counts(a, m)
    if na + nm == 0:
        raise UndefinedMetricError("dice undefined: both masks empty")
    return 2.0 * inter / (na + nm)


def ppv(a: LabelMask, m: LabelMask) -> float:
    na, _, inter = _counts(a, m)
    if na == 0:
        raise UndefinedMetricError("ppv undefined: automated mask empty")
    return inter / na


def volume_difference(a: LabelMask, m: LabelMask) -> float:
    na, nm, _ = _counts(a, m)
    if nm == 0:
        raise UndefinedMetricError("volume difference undefined: manual mask empty")
    return abs(na - nm) / nm


def boundary_voxels(mask: LabelMask) -> np.ndarray:
    """Coordinates (k, 3) of foreground voxels with a background 6-neighbor."""
    data = mask.data
    padded = np.pad(data, 1)
    interior = np.ones_like(data, dtype=bool)
    for axis in range(3):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1] != 0
    return np.argwhere((data != 0) & ~interior)


def surface_distance(a: LabelMask, m: LabelMask) -> float:
    """Mean of the two directed Hausdorff distances between boundaries, mm."""
    check_same_grid(a, m)
    if a.data.sum() == 0 or m.data.sum() == 0:
        raise UndefinedMetricError("surface distance undefined: empty mask")
    spacing = np.asarray(a.spacing)
    pa = boundary_voxels(a) * spacing
    pm = boundary_voxels(m) * spacing
    h_am = cKDTree(pm).query(pa)[0].max()
    h_ma = cKDTree(pa).query(pm)[0].max()
    return float((h_am + h_ma) / 2.0)


def evaluate(a: LabelMask, m: LabelMask) -> MetricsReport:
    """All four metrics; undefined entries become None instead of raising."""
    values = []
    for fn in (dice, ppv, volume_difference, surface_distance):
        try:
            values.append(fn(a, m))
        except UndefinedMetricError:
            values.append(None)
    return MetricsReport(*values)


def cohort_summary(reports: list[MetricsReport]) -> dict:
    """Median of each metric over a cohort, ignoring undefined entries."""
    summary = {}
    for key in ("dice", "ppv", "volume_difference", "surface_distance"):
        vals = [r.as_dict()[key] for r in reports if r.as_dict()[key] is not None]
        summary[key] = float(np.median(vals)) if vals else None
    return summary
