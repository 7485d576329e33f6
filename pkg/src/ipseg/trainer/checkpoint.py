"""Binary checkpoint format.

Layout (little-endian)::

    b"IPUN" | version u32 | config_len u32 | config JSON |
    blob_count u32 | blobs... | crc32 u32

Each blob is ``name_len u16 | name | ndim u8 | dims u32*ndim | float32 data``.
The CRC covers everything after the version field.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import BadMagic, Corrupt, IoFailure, VersionUnsupported
from ..netbuild import NetConfig

MAGIC = b"IPUN"
VERSION = 1


@dataclass
class Checkpoint:
    pipeline: str
    net_config: NetConfig
    hyperparams: dict
    params: dict
    buffers: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)  # kind, steps
    optimizer_state: dict = field(default_factory=dict)
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def config_block(self):
        return {
            "pipeline": self.pipeline,
            "net_config": self.net_config.to_dict(),
            "hyperparams": self.hyperparams,
            "optimizer": self.optimizer,
            "epoch": self.epoch,
            "rng_state": self.rng_state,
            "history": self.history,
            "extra": self.extra,
            "buffers": sorted(self.buffers),
            "optimizer_state": sorted(self.optimizer_state),
        }


def to_bytes(ckpt: Checkpoint) -> bytes:
    config = json.dumps(ckpt.config_block(), sort_keys=True).encode("utf-8")
    blobs = {}
    blobs.update(ckpt.params)
    blobs.update({f"buffer:{k}": v for k, v in ckpt.buffers.items()})
    blobs.update({f"optim:{k}": v for k, v in ckpt.optimizer_state.items()})
    body = bytearray()
    body += struct.pack("<I", len(config)) + config
    body += struct.pack("<I", len(blobs))
    for name, arr in blobs.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        body += struct.pack("<H", len(raw)) + raw
        body += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    return MAGIC + struct.pack("<I", VERSION) + bytes(body) + struct.pack("<I", crc)


def from_bytes(raw: bytes) -> Checkpoint:
    if raw[:4] != MAGIC:
        raise BadMagic(f"checkpoint magic {raw[:4]!r}")
    if len(raw) < 16:
        raise Corrupt("checkpoint too short")
    version = struct.unpack_from("<I", raw, 4)[0]
    if version != VERSION:
        raise VersionUnsupported(f"checkpoint version {version}, supported {VERSION}")
    body = raw[8:-4]
    if zlib.crc32(body) & 0xFFFFFFFF != struct.unpack_from("<I", raw, len(raw) - 4)[0]:
        raise Corrupt("CRC32 mismatch")
    try:
        pos = 0
        (clen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        config = json.loads(body[pos : pos + clen].decode("utf-8"))
        pos += clen
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        blobs = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            n = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * n > len(body):
                raise Corrupt(f"blob {name} runs past end of file")
            blobs[name] = np.frombuffer(body, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * n
        if pos != len(body):
            raise Corrupt(f"{len(body) - pos} trailing bytes")
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, ValueError) as exc:
        if isinstance(exc, Corrupt):
            raise
        raise Corrupt(str(exc)) from exc
    params = {k: v for k, v in blobs.items() if not k.startswith(("buffer:", "optim:"))}
    buffers = {k[len("buffer:"):]: v for k, v in blobs.items() if k.startswith("buffer:")}
    optim = {k[len("optim:"):]: v for k, v in blobs.items() if k.startswith("optim:")}
    return Checkpoint(
        pipeline=config["pipeline"],
        net_config=NetConfig.from_dict(config["net_config"]),
        hyperparams=config["hyperparams"],
        params=params,
        buffers=buffers,
        optimizer=config["optimizer"],
        optimizer_state=optim,
        epoch=config["epoch"],
        rng_state=config["rng_state"],
        history=[list(h) for h in config["history"]],
        extra=config.get("extra", {}),
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    try:
        Path(path).write_bytes(to_bytes(ckpt))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return from_bytes(raw)
