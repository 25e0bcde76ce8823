"""Binary array format and image output.

Array files: magic "HMTK", version u16, rank u8, dims as u64 list, then
little-endian float64 data.  This lossless path is shared by audio tracks,
AU trajectories, landmarks, raw frames, and checkpoint payloads.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np
from PIL import Image

MAGIC = b"HMTK"
VERSION = 1

CKPT_MAGIC = b"HMTKCKPT"
CKPT_VERSION = 1


class FormatError(ValueError):
    pass


def pack_array(arr):
    arr = np.asarray(arr, dtype=np.float64)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    buf.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        buf.write(struct.pack("<Q", d))
    buf.write(arr.astype("<f8").tobytes(order="C"))
    return buf.getvalue()


def unpack_array(data, offset=0):
    if data[offset:offset + 4] != MAGIC:
        raise FormatError("bad array magic")
    offset += 4
    (version,) = struct.unpack_from("<H", data, offset)
    offset += 2
    if version != VERSION:
        raise FormatError(f"unsupported array format version {version}")
    (rank,) = struct.unpack_from("<B", data, offset)
    offset += 1
    dims = []
    for _ in range(rank):
        (d,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        dims.append(d)
    count = int(np.prod(dims)) if dims else 1
    arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(dims)
    offset += count * 8
    return np.ascontiguousarray(arr, dtype=np.float64), offset


def write_array(path, arr):
    with open(path, "wb") as f:
        f.write(pack_array(arr))


def read_array(path):
    with open(path, "rb") as f:
        data = f.read()
    arr, _ = unpack_array(data)
    return arr


# -- checkpoint container -----------------------------------------------------

def write_checkpoint(path, header: dict, arrays: dict):
    """Container: magic, version, JSON header, then named arrays in order.

    The header's "array_names" records order, so save->load->save is
    byte-identical.
    """
    names = list(arrays.keys())
    header = dict(header)
    header["array_names"] = names
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<H", CKPT_VERSION))
        f.write(struct.pack("<Q", len(hjson)))
        f.write(hjson)
        for name in names:
            f.write(pack_array(arrays[name]))


def read_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic")
    (version,) = struct.unpack_from("<H", data, 8)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", data, 10)
    header = json.loads(data[18:18 + hlen].decode())
    offset = 18 + hlen
    arrays = {}
    for name in header["array_names"]:
        arr, offset = unpack_array(data, offset)
        arrays[name] = arr
    return header, arrays


# -- images -------------------------------------------------------------------

def write_png(path, img):
    """Write an HxWx3 float image (clamped to [0, 1]) as 8-bit PNG."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def read_png(path):
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0
