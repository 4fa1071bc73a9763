"""Synthetic multi-contrast volumes with known lesion masks.

A phantom is an ellipsoidal "brain" of constant per-contrast tissue
intensity holding a few non-overlapping spherical lesions with per-contrast
offsets (bright on FLAIR, dark on MPRAGE), plus Gaussian noise inside the
brain. Outside the brain everything is exactly zero, like skull-stripped
data. Spheres keep the truth volume analytic, which is what the geometric
assertions in the tests need; realism is not the goal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_ops import ContractError
from .volume import LabelMask, MultiContrast, Volume


class PlacementError(RuntimeError):
    """Could not place the requested lesions without overlap."""


@dataclass
class PhantomSpec:
    dims: tuple[int, int, int] = (48, 48, 24)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    n_lesions: int = 3
    lesion_radius_range: tuple[float, float] = (2.5, 5.0)
    # arbitrary MR-like units per contrast (mprage, t2, flair)
    tissue_means: tuple[float, float, float] = (1000.0, 600.0, 500.0)
    lesion_offsets: tuple[float, float, float] = (-300.0, 200.0, 400.0)
    noise_sigma: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.n_lesions < 1:
            raise ContractError(f"n_lesions must be >= 1, got {self.n_lesions}")
        if self.noise_sigma < 0:
            raise ContractError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        lo, hi = self.lesion_radius_range
        if not 0 < lo <= hi:
            raise ContractError(f"bad radius range {self.lesion_radius_range}")
        if min(self.dims) < 2 * hi + 2:
            raise ContractError(
                f"dims {self.dims} too small for lesions of radius {hi}"
            )


_MAX_TRIES = 2000


def generate_phantom(spec: PhantomSpec) -> tuple[MultiContrast, LabelMask]:
    """Deterministically build (contrast volumes, truth mask) from the spec."""
    rng = np.random.default_rng(spec.seed)
    dims = spec.dims
    center = np.array([(d - 1) / 2.0 for d in dims])
    semi = np.array([max(d * 0.42, 1.0) for d in dims])

    grid = np.indices(dims).astype(np.float64)
    norm2 = sum(((grid[i] - center[i]) / semi[i]) ** 2 for i in range(3))
    brain = norm2 <= 1.0

    lesions: list[tuple[np.ndarray, float]] = []
    lo, hi = spec.lesion_radius_range
    for _ in range(spec.n_lesions):
        for _attempt in range(_MAX_TRIES):
            radius = rng.uniform(lo, hi)
            pos = np.array([rng.uniform(0, d - 1) for d in dims])
            # sufficient for the whole sphere (plus a safety voxel) to sit
            # inside the ellipsoid: inflate the center offset by the radius
            # on every axis before the ellipsoid test
            if np.sum(((np.abs(pos - center) + radius + 1.0) / semi) ** 2) > 1.0:
                continue
            if any(
                np.linalg.norm(pos - q) <= radius + r + 1.0 for q, r in lesions
            ):
                continue
            lesions.append((pos, radius))
            break
        else:
            raise PlacementError(
                f"could not place lesion {len(lesions) + 1} of {spec.n_lesions}"
            )

    mask = np.zeros(dims, dtype=np.uint8)
    for pos, radius in lesions:
        d2 = sum((grid[i] - pos[i]) ** 2 for i in range(3))
        mask[d2 <= radius * radius] = 1

    volumes = []
    for mean, offset in zip(spec.tissue_means, spec.lesion_offsets):
        data = np.zeros(dims, dtype=np.float64)
        data[brain] = mean
        data[mask == 1] += offset
        if spec.noise_sigma > 0:
            noise = rng.normal(0.0, spec.noise_sigma, size=dims)
            data[brain] += noise[brain]
        volumes.append(Volume(data.astype(np.float32), spec.spacing, "axial"))

    mc = MultiContrast(*volumes)
    return mc, LabelMask(mask, spec.spacing, "axial")
