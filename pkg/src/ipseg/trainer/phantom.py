"""Synthetic calcification phantoms with exact ground truth."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import SpecInvalid
from ..volio import MaskVolume, Volume3D


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (64, 64, 32)
    num_lesions: int = 4
    lesion_radius_range: tuple = (2.0, 5.0)
    lesion_intensity_range: tuple = (200.0, 400.0)
    tissue_range: tuple = (0.0, 100.0)
    noise_sigma: float = 5.0
    num_classes: int = 3
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) != 3 or min(dims) < 1:
            raise SpecInvalid(f"dims must be three positive ints, got {self.dims}")
        if self.num_lesions < 0:
            raise SpecInvalid("num_lesions must be >= 0")
        rlo, rhi = self.lesion_radius_range
        if not 0 < rlo <= rhi:
            raise SpecInvalid(f"bad radius range {self.lesion_radius_range}")
        if self.num_lesions and 2 * int(np.ceil(rhi)) + 1 > min(dims):
            raise SpecInvalid(f"radius {rhi} does not fit inside dims {dims}")
        ilo, ihi = self.lesion_intensity_range
        tlo, thi = self.tissue_range
        if not (ilo <= ihi and tlo <= thi):
            raise SpecInvalid("intensity ranges must be ordered (low <= high)")
        if ilo <= thi:
            raise SpecInvalid("lesion intensities must lie above the tissue range")
        if self.noise_sigma < 0 or self.num_classes < 2:
            raise SpecInvalid("noise_sigma >= 0 and num_classes >= 2 required")

    def to_dict(self):
        return asdict(self)

    def with_seed(self, seed):
        return PhantomSpec(**{**asdict(self), "seed": int(seed)})


def _tissue(rng, dims, lo, hi, sigma):
    grids = np.meshgrid(*[np.linspace(-1.0, 1.0, n) for n in dims], indexing="ij")
    semi = rng.uniform(0.6, 0.95, size=3)
    shift = rng.uniform(-0.1, 0.1, size=3)
    r2 = sum(((g - s) / a) ** 2 for g, s, a in zip(grids, shift, semi))
    body = np.clip(1.0 - r2, 0.0, 1.0)
    level = rng.uniform(0.5, 1.0)
    tissue = lo + (hi - lo) * level * np.sqrt(body)
    if sigma > 0:
        tissue = tissue + rng.normal(0.0, sigma, size=dims)
    return np.clip(tissue, lo, hi)


def class_band(spec: PhantomSpec, cls: int):
    """Intensity sub-range used for lesions of class ``cls`` (1-based)."""
    lo, hi = spec.lesion_intensity_range
    width = (hi - lo) / (spec.num_classes - 1)
    return lo + (cls - 1) * width, lo + cls * width


def synth_phantom(spec: PhantomSpec):
    """Volume and mask for ``spec``; identical seeds give identical arrays.

    Lesion ``i`` is an axis-aligned ellipsoid of class ``1 + i % (K-1)``
    filled with one intensity drawn from that class's band of the lesion
    range, so higher classes are brighter. Later lesions overwrite earlier
    ones in both the volume and the mask.
    """
    rng = np.random.default_rng(spec.seed)
    dims = spec.dims
    lo, hi = spec.tissue_range
    data = _tissue(rng, dims, lo, hi, spec.noise_sigma)
    labels = np.zeros(dims, dtype=np.uint8)
    rlo, rhi = spec.lesion_radius_range
    axes = np.ogrid[tuple(slice(0, n) for n in dims)]
    for i in range(spec.num_lesions):
        cls = 1 + i % (spec.num_classes - 1)
        radii = rng.uniform(rlo, rhi, size=3)
        margin = np.ceil(radii).astype(int)
        center = [int(rng.integers(m, n - m)) for m, n in zip(margin, dims)]
        inside = sum(((ax - c) / r) ** 2 for ax, c, r in zip(axes, center, radii)) <= 1.0
        blo, bhi = class_band(spec, cls)
        data[inside] = rng.uniform(blo, bhi)
        labels[inside] = cls
    return Volume3D(data.astype(np.float32)), MaskVolume(labels, spec.num_classes)


def phantom_suite(count: int, base: PhantomSpec = PhantomSpec(), seed: int = 0):
    """``count`` specs that differ only in their seed."""
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [base.with_seed(int(s)) for s in seeds]
