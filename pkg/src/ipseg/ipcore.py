"""Intensity projection kernels and their multi-channel composition.

Every kernel collapses one axis of a volume: the output has the input's
dims with that axis removed. Rays are read in increasing index order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, IoFailure
from .volio import MaskVolume, Volume3D, check_axis, nifti_bytes

DEFAULT_THRESHOLD = 130.0
CVP_MODES = ("eq1-literal", "prose-lmip")
CHANNEL_NAMES = ("cvp", "avgip", "mip")


@dataclass(frozen=True)
class CvpConfig:
    threshold: float = DEFAULT_THRESHOLD
    mode: str = "eq1-literal"

    def __post_init__(self):
        if not np.isfinite(self.threshold):
            raise DataError(f"CVP threshold must be finite, got {self.threshold}")
        if self.mode not in CVP_MODES:
            raise DataError(f"unknown CVP mode {self.mode!r}; expected one of {CVP_MODES}")


@dataclass
class IPImage:
    """Projections stacked channel-first, shape ``(C, h, w)``."""

    channels: np.ndarray
    channel_names: tuple = CHANNEL_NAMES

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float32)
        if self.channels.ndim != 3 or self.channels.shape[0] < 1:
            raise DataError(f"IPImage needs shape (C, h, w), got {self.channels.shape}")
        if len(self.channel_names) != self.channels.shape[0]:
            raise DataError("channel_names length does not match channel count")
        self.channel_names = tuple(self.channel_names)

    @property
    def dims(self):
        return tuple(self.channels.shape[1:])

    def __getitem__(self, name):
        return self.channels[self.channel_names.index(name)]


@dataclass
class Mask2D:
    labels: np.ndarray
    num_classes: int = 2

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.size and self.labels.max() >= self.num_classes:
            raise DataError("label exceeds num_classes")

    @property
    def dims(self):
        return tuple(self.labels.shape)


def _volume_data(vol):
    data = vol.data if isinstance(vol, Volume3D) else np.asarray(vol, dtype=np.float32)
    if data.ndim != 3:
        raise DataError(f"expected a 3D volume, got shape {data.shape}")
    return data


def mip(vol, axis=0) -> np.ndarray:
    """Maximum along each ray."""
    return _volume_data(vol).max(axis=check_axis(axis))


def min_ip(vol, axis=0) -> np.ndarray:
    """Minimum along each ray."""
    return _volume_data(vol).min(axis=check_axis(axis))


def avg_ip(vol, axis=0) -> np.ndarray:
    """Mean along each ray, accumulated in float64 and rounded to float32."""
    data = _volume_data(vol)
    axis = check_axis(axis)
    total = data.sum(axis=axis, dtype=np.float64)
    return (total / data.shape[axis]).astype(np.float32)


def _lmip(data, axis, threshold):
    rays = np.moveaxis(data, axis, -1)
    n = rays.shape[-1]
    peak = np.ones(rays.shape, dtype=bool)
    if n > 1:
        peak[..., 1:] &= rays[..., 1:] >= rays[..., :-1]
        peak[..., :-1] &= rays[..., :-1] >= rays[..., 1:]
    peak &= rays > threshold
    first = peak.argmax(axis=-1)
    value = np.take_along_axis(rays, first[..., None], axis=-1)[..., 0]
    return np.where(peak.any(axis=-1), value, np.float32(0)).astype(np.float32)


def cvp(vol, axis=0, cfg: CvpConfig | None = None) -> np.ndarray:
    """Thresholded projection.

    ``eq1-literal`` keeps the ray maximum when it does not exceed the
    threshold and writes 0 otherwise. ``prose-lmip`` returns the first local
    maximum strictly above the threshold, or 0 when the ray has none.
    """
    cfg = cfg or CvpConfig()
    data = _volume_data(vol)
    axis = check_axis(axis)
    if cfg.mode == "eq1-literal":
        m = data.max(axis=axis)
        return np.where(m <= np.float32(cfg.threshold), m, np.float32(0)).astype(np.float32)
    return _lmip(data, axis, np.float32(cfg.threshold))


def compose_ip(vol, axis=0, cfg: CvpConfig | None = None) -> IPImage:
    """Stack ``[cvp, avg_ip, mip]`` into a three-channel image."""
    return IPImage(np.stack([cvp(vol, axis, cfg), avg_ip(vol, axis), mip(vol, axis)]), CHANNEL_NAMES)


def project_mask(mask: MaskVolume, axis=0) -> Mask2D:
    """Largest class index along each ray; background only where the ray is empty."""
    axis = check_axis(axis)
    return Mask2D(mask.labels.max(axis=axis), mask.num_classes)


# ---------------------------------------------------------------------------
# export


def write_ip_bin(ip: IPImage, path) -> tuple:
    """Write raw little-endian float32 channels plus a JSON sidecar.

    Returns the ``(bin_path, json_path)`` pair.
    """
    path = Path(path)
    sidecar = path.with_suffix(".json")
    h, w = ip.dims
    meta = {"h": h, "w": w, "channels": int(ip.channels.shape[0]),
            "channel_names": list(ip.channel_names)}
    try:
        path.write_bytes(np.ascontiguousarray(ip.channels, dtype="<f4").tobytes())
        sidecar.write_text(json.dumps(meta, indent=2))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return path, sidecar


def read_ip_bin(path) -> IPImage:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    shape = (meta["channels"], meta["h"], meta["w"])
    if raw.size != shape[0] * shape[1] * shape[2]:
        raise DataError(f"{path}: expected {shape} floats, found {raw.size}")
    return IPImage(raw.reshape(shape).astype(np.float32), tuple(meta["channel_names"]))


def write_channel_nifti(image: np.ndarray, path, spacing=(1.0, 1.0, 1.0)) -> None:
    """Save one projected image as a single-slice ``(h, w, 1)`` NIfTI volume."""
    data = np.asarray(image, dtype=np.float32)[:, :, None]
    try:
        Path(path).write_bytes(nifti_bytes(data, spacing))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
