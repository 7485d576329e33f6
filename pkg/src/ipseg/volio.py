"""Volume containers, single-file NIfTI-1 I/O and axis handling.

Voxel arrays are stored with shape ``(nx, ny, nz)`` in Fortran order, the
same x-fastest layout NIfTI uses on disk.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import (
    AmbiguousOrientation,
    AxisOutOfRange,
    BadMagic,
    DataError,
    DimUnsupported,
    IoFailure,
    NonFiniteData,
    Truncated,
    UnsupportedDatatype,
)

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"

# NIfTI datatype code -> numpy dtype (byte order applied at read time)
DATATYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    512: np.dtype(np.uint16),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}

AXIS_NAMES = {"sagittal": 0, "coronal": 1, "axial": 2}

AxisSpec = Union[int, str]


@dataclass
class Volume3D:
    """A 3D intensity field with voxel spacing and an optional affine."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = None
    intensity_slope: float = 1.0
    intensity_intercept: float = 0.0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise DimUnsupported(f"volume must be 3D, got shape {data.shape}")
        if min(data.shape) < 1:
            raise DimUnsupported(f"empty volume dims {data.shape}")
        self.data = np.asfortranarray(data, dtype=np.float32)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteData("volume contains NaN or Inf")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise DataError(f"spacing must be three positive values, got {self.spacing}")
        if self.affine is not None:
            self.affine = np.asarray(self.affine, dtype=np.float64).reshape(4, 4)

    @property
    def dims(self):
        return tuple(int(n) for n in self.data.shape)

    @property
    def world_affine(self):
        return np.eye(4) if self.affine is None else self.affine


@dataclass
class MaskVolume:
    """Per-voxel class indices paired with a :class:`Volume3D`."""

    labels: np.ndarray
    num_classes: int = 2

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise DimUnsupported(f"mask must be 3D, got shape {labels.shape}")
        if self.num_classes < 2:
            raise DataError("num_classes must be >= 2")
        if labels.size and labels.max() >= self.num_classes:
            raise DataError(f"label {int(labels.max())} >= num_classes {self.num_classes}")
        if labels.size and labels.min() < 0:
            raise DataError("negative label")
        self.labels = np.asfortranarray(labels, dtype=np.uint8)

    @property
    def dims(self):
        return tuple(int(n) for n in self.labels.shape)


# ---------------------------------------------------------------------------
# NIfTI-1


@dataclass
class NiftiHeader:
    endian: str
    dim: tuple
    pixdim: tuple
    datatype: int
    bitpix: int
    vox_offset: float
    scl_slope: float
    scl_inter: float
    qform_code: int
    sform_code: int
    quatern: tuple
    qoffset: tuple
    srow: np.ndarray
    descrip: str = ""
    extra: dict = field(default_factory=dict)

    def summary(self):
        nd = self.dim[0]
        return {
            "endian": "little" if self.endian == "<" else "big",
            "dims": list(self.dim[1 : nd + 1]),
            "pixdim": [round(float(p), 6) for p in self.pixdim[1 : nd + 1]],
            "datatype": self.datatype,
            "dtype": str(DATATYPES[self.datatype]) if self.datatype in DATATYPES else "unsupported",
            "bitpix": self.bitpix,
            "vox_offset": self.vox_offset,
            "scl_slope": self.scl_slope,
            "scl_inter": self.scl_inter,
            "qform_code": self.qform_code,
            "sform_code": self.sform_code,
            "descrip": self.descrip,
        }


def _read_bytes(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise Truncated(f"{path}: bad gzip stream ({exc})") from exc
    return raw


def parse_header(raw: bytes) -> NiftiHeader:
    if len(raw) < HEADER_SIZE:
        raise Truncated(f"header needs {HEADER_SIZE} bytes, got {len(raw)}")
    for endian in "<>":
        if struct.unpack_from(endian + "i", raw, 0)[0] == HEADER_SIZE:
            break
    else:
        raise BadMagic("sizeof_hdr is not 348 in either byte order")
    magic = raw[344:348]
    if magic != MAGIC_SINGLE:
        raise BadMagic(f"magic {magic!r} is not single-file NIfTI-1")
    e = endian
    return NiftiHeader(
        endian=e,
        dim=struct.unpack_from(e + "8h", raw, 40),
        pixdim=struct.unpack_from(e + "8f", raw, 76),
        datatype=struct.unpack_from(e + "h", raw, 70)[0],
        bitpix=struct.unpack_from(e + "h", raw, 72)[0],
        vox_offset=struct.unpack_from(e + "f", raw, 108)[0],
        scl_slope=struct.unpack_from(e + "f", raw, 112)[0],
        scl_inter=struct.unpack_from(e + "f", raw, 116)[0],
        qform_code=struct.unpack_from(e + "h", raw, 252)[0],
        sform_code=struct.unpack_from(e + "h", raw, 254)[0],
        quatern=struct.unpack_from(e + "3f", raw, 256),
        qoffset=struct.unpack_from(e + "3f", raw, 268),
        srow=np.array(struct.unpack_from(e + "12f", raw, 280), dtype=np.float64).reshape(3, 4),
        descrip=raw[148:228].split(b"\x00", 1)[0].decode("latin-1"),
    )


def read_header(path) -> NiftiHeader:
    return parse_header(_read_bytes(path))


def _qform_affine(hdr):
    b, c, d = (float(q) for q in hdr.quatern)
    a = np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
    rot = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ])
    qfac = -1.0 if hdr.pixdim[0] < 0 else 1.0
    scale = np.array([hdr.pixdim[1], hdr.pixdim[2], hdr.pixdim[3] * qfac])
    aff = np.eye(4)
    aff[:3, :3] = rot * scale
    aff[:3, 3] = hdr.qoffset
    return aff


def _squeeze_dims(dim):
    nd = int(dim[0])
    if not 1 <= nd <= 7:
        raise DimUnsupported(f"dim[0]={nd} out of range")
    shape = [int(n) for n in dim[1 : nd + 1]]
    while len(shape) > 3 and shape[-1] == 1:
        shape.pop()
    if len(shape) != 3:
        raise DimUnsupported(f"expected a 3D image, got dims {shape}")
    if min(shape) < 1:
        raise DimUnsupported(f"non-positive dims {shape}")
    return tuple(shape)


def read_nifti(path) -> Volume3D:
    """Load a single-file NIfTI-1 image (``.nii`` or ``.nii.gz``) as float32."""
    raw = _read_bytes(path)
    hdr = parse_header(raw)
    if hdr.datatype not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {hdr.datatype}")
    dims = _squeeze_dims(hdr.dim)
    dtype = DATATYPES[hdr.datatype].newbyteorder(hdr.endian)
    offset = int(hdr.vox_offset)
    count = dims[0] * dims[1] * dims[2]
    need = offset + count * dtype.itemsize
    if len(raw) < need:
        raise Truncated(f"voxel data needs {need} bytes, file has {len(raw)}")
    vox = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    vox = vox.reshape(dims, order="F")
    slope = float(hdr.scl_slope)
    inter = float(hdr.scl_inter)
    if slope == 0.0 or not np.isfinite(slope):
        slope, inter = 1.0, 0.0
    if not np.isfinite(inter):
        inter = 0.0
    if slope != 1.0 or inter != 0.0:
        data = (vox.astype(np.float64) * slope + inter).astype(np.float32)
    else:
        data = vox.astype(np.float32)
    if hdr.sform_code > 0:
        affine = np.vstack([hdr.srow, [0.0, 0.0, 0.0, 1.0]])
    elif hdr.qform_code > 0:
        affine = _qform_affine(hdr)
    else:
        affine = None
    spacing = tuple(abs(float(p)) if p else 1.0 for p in hdr.pixdim[1:4])
    return Volume3D(data, spacing, affine, slope, inter)


def nifti_bytes(data: np.ndarray, spacing=(1.0, 1.0, 1.0), affine=None,
                datatype: int = 16, endian: str = "<", descrip: str = "ipseg") -> bytes:
    """Serialize a 3D array as a single-file NIfTI-1 image."""
    dtype = DATATYPES[datatype].newbyteorder(endian)
    data = np.asarray(data)
    hdr = bytearray(VOX_OFFSET)
    e = endian
    struct.pack_into(e + "i", hdr, 0, HEADER_SIZE)
    struct.pack_into(e + "b", hdr, 38, ord("r"))
    struct.pack_into(e + "8h", hdr, 40, 3, *data.shape, 1, 1, 1, 1)
    struct.pack_into(e + "h", hdr, 70, datatype)
    struct.pack_into(e + "h", hdr, 72, dtype.itemsize * 8)
    struct.pack_into(e + "8f", hdr, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into(e + "f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into(e + "f", hdr, 112, 1.0)
    struct.pack_into(e + "f", hdr, 116, 0.0)
    struct.pack_into(e + "B", hdr, 123, 2)  # xyzt_units: mm
    hdr[148 : 148 + min(len(descrip), 79)] = descrip.encode("latin-1")[:79]
    if affine is not None:
        struct.pack_into(e + "h", hdr, 254, 2)
        struct.pack_into(e + "12f", hdr, 280, *np.asarray(affine, dtype=np.float64)[:3].ravel())
    hdr[344:348] = MAGIC_SINGLE
    body = np.asarray(data, dtype=dtype).tobytes(order="F")
    return bytes(hdr) + body


def write_nifti(vol: Volume3D, path) -> None:
    """Write ``vol`` as little-endian float32 NIfTI-1 (always uncompressed)."""
    payload = nifti_bytes(vol.data, vol.spacing, vol.affine)
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_mask_nifti(mask: MaskVolume, path, spacing=(1.0, 1.0, 1.0), affine=None) -> None:
    payload = nifti_bytes(mask.labels, spacing, affine, datatype=2)
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_mask_nifti(path, num_classes=None) -> MaskVolume:
    vol = read_nifti(path)
    labels = np.rint(vol.data)
    if labels.min() < 0 or labels.max() > 255:
        raise DataError(f"{path}: mask labels outside uint8 range")
    labels = labels.astype(np.uint8)
    k = int(labels.max()) + 1 if num_classes is None else num_classes
    return MaskVolume(labels, max(k, 2))


# ---------------------------------------------------------------------------
# axes and slices


def resolve_axis(vol: Volume3D | None, spec: AxisSpec) -> int:
    """Map an axis index or anatomical name onto an array axis of ``vol``.

    Named axes follow the affine: each voxel axis is assigned the world axis
    its column points along most strongly (x sagittal, y coronal, z axial).
    """
    if isinstance(spec, (int, np.integer)) and not isinstance(spec, bool):
        if spec not in (0, 1, 2):
            raise AxisOutOfRange(f"axis {spec} not in {{0, 1, 2}}")
        return int(spec)
    name = str(spec).strip().lower()
    if name.isdigit():
        return resolve_axis(vol, int(name))
    if name not in AXIS_NAMES:
        raise AxisOutOfRange(f"unknown axis name {spec!r}")
    affine = np.eye(4) if vol is None else vol.world_affine
    dominant = [int(np.argmax(np.abs(affine[:3, col]))) for col in range(3)]
    if len(set(dominant)) != 3:
        raise AmbiguousOrientation(f"voxel axes map to world axes {dominant}")
    return dominant.index(AXIS_NAMES[name])


def check_axis(axis) -> int:
    if isinstance(axis, bool) or not isinstance(axis, (int, np.integer)) or axis not in (0, 1, 2):
        raise AxisOutOfRange(f"axis {axis!r} not in {{0, 1, 2}}")
    return int(axis)


def extract_slices(vol: Volume3D | np.ndarray, axis: int) -> list:
    """Cross-sections of ``vol`` along ``axis`` in index order."""
    axis = check_axis(axis)
    data = vol.data if isinstance(vol, Volume3D) else np.asarray(vol)
    return [np.ascontiguousarray(np.take(data, i, axis=axis)) for i in range(data.shape[axis])]


def stack_slices(slices: Sequence[np.ndarray], axis: int) -> np.ndarray:
    return np.stack(list(slices), axis=check_axis(axis))
