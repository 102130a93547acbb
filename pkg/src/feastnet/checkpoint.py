"""Versioned checkpoint files: magic, JSON header, little-endian float64 blob.

Layout::

    b"FEASTCKP" | uint32 version | uint64 header length | header JSON | blob

The header lists every tensor's name, shape and byte offset into the blob,
plus the model spec, epoch counter, RNG state and free-form metadata.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field

import numpy as np

from .models import ModelSpec, flatten_params, unflatten_params

MAGIC = b"FEASTCKP"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: dict
    epoch: int = 0
    rng_state: dict = None
    meta: dict = field(default_factory=dict)


def encode_params(params: dict) -> tuple[list, bytes]:
    """Tensor table and concatenated little-endian float64 bytes."""
    table, chunks, offset = [], [], 0
    for name, arr in flatten_params(params).items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "dtype": "<f8",
                      "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    return table, b"".join(chunks)


def decode_params(spec: ModelSpec, table: list, blob: bytes) -> dict:
    flat = {}
    for t in table:
        lo, n = t["offset"], t["nbytes"]
        if lo < 0 or lo + n > len(blob) or n != 8 * int(np.prod(t["shape"], dtype=np.int64)):
            raise CorruptCheckpointError(f"tensor {t['name']} lies outside the blob")
        flat[t["name"]] = np.frombuffer(blob, dtype="<f8", count=n // 8, offset=lo).reshape(t["shape"]).astype(np.float64)
    return unflatten_params(spec, flat)


def dumps(ckpt: Checkpoint) -> bytes:
    table, blob = encode_params(ckpt.params)
    header = {
        "spec": ckpt.spec.to_dict(),
        "epoch": int(ckpt.epoch),
        "rng_state": ckpt.rng_state,
        "meta": ckpt.meta,
        "tensors": table,
        "blob_nbytes": len(blob),
        "blob_crc32": zlib.crc32(blob),
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + blob


def loads(data: bytes) -> Checkpoint:
    if len(data) < _PREFIX.size:
        raise CorruptCheckpointError("file too short for a checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CorruptCheckpointError("not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {VERSION}")
    start = _PREFIX.size
    if len(data) < start + hlen:
        raise CorruptCheckpointError("truncated header")
    try:
        header = json.loads(data[start:start + hlen])
    except ValueError as exc:
        raise CorruptCheckpointError("unreadable header") from exc
    blob = data[start + hlen:]
    if len(blob) != header["blob_nbytes"]:
        raise CorruptCheckpointError(
            f"blob has {len(blob)} bytes, header declares {header['blob_nbytes']}")
    if zlib.crc32(blob) != header["blob_crc32"]:
        raise CorruptCheckpointError("blob checksum mismatch")
    spec = ModelSpec(**header["spec"])
    params = decode_params(spec, header["tensors"], blob)
    return Checkpoint(spec, params, header["epoch"], header["rng_state"], header["meta"])


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write atomically: temp file in the same directory, then rename."""
    data = dumps(ckpt)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return loads(fh.read())
