"""EQVT tensor container.

Layout (little-endian): ``b"EQVT"``, uint16 version, uint8 dtype code
(0 = float32), uint8 ndim, ndim x uint32 dims, row-major payload, then a
uint32 byte length followed by UTF-8 JSON metadata.
"""

import json
import struct

import numpy as np

from .noise_warp import NoiseVolume

__all__ = ["EQVT_MAGIC", "EQVT_VERSION", "ContainerError", "encode", "decode",
           "save_volume", "load_volume", "save_tensor", "load_tensor"]

EQVT_MAGIC = b"EQVT"
EQVT_VERSION = 1
_DTYPES = {0: np.dtype("<f4")}


class ContainerError(ValueError):
    pass


def encode(array, meta=None) -> bytes:
    a = np.asarray(array)
    if a.ndim > 255:
        raise ContainerError("too many dimensions")
    if not np.isfinite(a).all():
        raise ContainerError("array contains non-finite values")
    head = EQVT_MAGIC + struct.pack("<HBB", EQVT_VERSION, 0, a.ndim)
    head += struct.pack(f"<{a.ndim}I", *a.shape)
    text = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(a, dtype="<f4").tobytes()
    return head + payload + struct.pack("<I", len(text)) + text


def decode(buf):
    """Return ``(array, meta)``; the array is float64."""
    buf = bytes(buf)
    if len(buf) < 8 or buf[:4] != EQVT_MAGIC:
        raise ContainerError("bad magic")
    version, code, ndim = struct.unpack_from("<HBB", buf, 4)
    if version != EQVT_VERSION:
        raise ContainerError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise ContainerError(f"unknown dtype code {code}")
    off = 8 + 4 * ndim
    if len(buf) < off:
        raise ContainerError("truncated header")
    shape = struct.unpack_from(f"<{ndim}I", buf, 8)
    nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPES[code].itemsize
    if len(buf) < off + nbytes + 4:
        raise ContainerError("truncated payload")
    data = np.frombuffer(buf, dtype=_DTYPES[code], count=nbytes // 4, offset=off)
    (mlen,) = struct.unpack_from("<I", buf, off + nbytes)
    text = buf[off + nbytes + 4:]
    if len(text) != mlen:
        raise ContainerError("metadata length mismatch")
    try:
        meta = json.loads(text.decode("utf-8")) if mlen else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"bad metadata: {e}") from None
    return data.reshape(shape).astype(np.float64), meta


def save_tensor(path, array, meta=None):
    with open(path, "wb") as fh:
        fh.write(encode(array, meta))


def load_tensor(path):
    with open(path, "rb") as fh:
        return decode(fh.read())


def save_volume(path, volume: NoiseVolume):
    save_tensor(path, volume.frames, volume.meta)


def load_volume(path) -> NoiseVolume:
    frames, meta = load_tensor(path)
    return NoiseVolume(frames, meta)
