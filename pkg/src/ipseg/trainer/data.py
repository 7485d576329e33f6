"""Dataset assembly from phantom specs or a NIfTI directory."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DimsMismatch, EmptyDataset, PairMissing, SpecInvalid
from ..volio import read_mask_nifti, read_nifti
from .phantom import PhantomSpec, synth_phantom


@dataclass
class Dataset:
    pairs: list
    splits: list
    names: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.splits) != len(self.pairs):
            raise SpecInvalid("one split tag per pair required")
        if not self.names:
            self.names = [f"case{i:03d}" for i in range(len(self.pairs))]
        for (vol, mask), name in zip(self.pairs, self.names):
            if vol.dims != mask.dims:
                raise DimsMismatch(f"{name}: volume {vol.dims} vs mask {mask.dims}")

    def __len__(self):
        return len(self.pairs)

    def subset(self, split):
        return [p for p, s in zip(self.pairs, self.splits) if s == split]

    @property
    def train(self):
        return self.subset("train")

    @property
    def test(self):
        return self.subset("test")

    def counts(self):
        return {"train": self.splits.count("train"), "test": self.splits.count("test")}

    @property
    def num_classes(self):
        return max(m.num_classes for _, m in self.pairs)


def _split(n, ratio, seed):
    if not 0 <= ratio <= 1:
        raise SpecInvalid(f"split_ratio must lie in [0, 1], got {ratio}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * ratio))
    tags = ["test"] * n
    for i in order[:n_train]:
        tags[int(i)] = "train"
    return tags


def _stem(path: Path):
    name = path.name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return None


def scan_pairs(directory):
    """``{stem: (image_path, mask_path)}`` for ``X.nii[.gz]`` + ``X_mask.nii[.gz]`` files."""
    directory = Path(directory)
    images, masks = {}, {}
    for path in sorted(directory.iterdir()):
        stem = _stem(path)
        if stem is None:
            continue
        if stem.endswith("_mask"):
            masks[stem[: -len("_mask")]] = path
        else:
            images[stem] = path
    for stem in sorted(set(images) ^ set(masks)):
        missing = "mask" if stem in images else "image"
        raise PairMissing(f"{stem}: {missing} file not found in {directory}")
    return {s: (images[s], masks[s]) for s in sorted(images)}


def make_dataset(source, split_ratio=0.8, seed=0, num_classes=None) -> Dataset:
    """Build a seeded train/test split.

    ``source`` is a list of :class:`PhantomSpec` or a directory of NIfTI
    image/mask pairs.
    """
    if isinstance(source, (str, Path)):
        found = scan_pairs(source)
        if not found:
            raise EmptyDataset(f"no NIfTI pairs in {source}")
        pairs, names = [], []
        for stem, (img, msk) in found.items():
            vol = read_nifti(img)
            mask = read_mask_nifti(msk, num_classes)
            if vol.dims != mask.dims:
                raise DimsMismatch(f"{stem}: image {vol.dims} vs mask {mask.dims}")
            pairs.append((vol, mask))
            names.append(stem)
        k = max(m.num_classes for _, m in pairs)
        for i, (vol, mask) in enumerate(pairs):
            if mask.num_classes != k:
                pairs[i] = (vol, type(mask)(mask.labels, k))
        prov = {"kind": "nifti", "directory": str(source)}
    else:
        specs = list(source)
        if not specs:
            raise EmptyDataset("no phantom specs given")
        if isinstance(specs[0], PhantomSpec):
            pairs = [synth_phantom(s) for s in specs]
            names = [f"phantom{i:03d}" for i in range(len(specs))]
            prov = {"kind": "synthetic", "specs": [s.to_dict() for s in specs]}
        else:
            pairs = [tuple(p) for p in specs]
            names = [f"case{i:03d}" for i in range(len(pairs))]
            prov = {"kind": "memory"}
    return Dataset(pairs, _split(len(pairs), split_ratio, seed), names, prov)
