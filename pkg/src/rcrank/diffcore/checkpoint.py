"""Binary weight file: magic, version, JSON header, then raw little-endian arrays.

Layout::

    b"RCRK" | u32 version | u64 header_len | header JSON (utf-8) | data blobs

The header lists ``tensors`` as ``[name, dtype, shape, offset, nbytes]`` plus a
free-form ``meta`` object. Writing is deterministic (sorted keys, no
timestamps), so identical weights give identical bytes.
"""

import json
import struct

import numpy as np

from ..errors import ParseError

MAGIC = b"RCRK"
VERSION = 1
_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


def _code(dtype):
    dt = np.dtype(dtype)
    for code, d in _DTYPES.items():
        if d.kind == dt.kind and d.itemsize == dt.itemsize:
            return code
    raise TypeError(f"unsupported dtype {dtype}")


def dumps(tensors, meta=None):
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        code = _code(arr.dtype)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append([name, code, list(arr.shape), offset, len(raw)])
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(blobs)


def loads(buf):
    if buf[:4] != MAGIC:
        raise ParseError(0, "not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", buf[4:16])
    if version != VERSION:
        raise ParseError(0, f"unsupported checkpoint version {version}")
    header = json.loads(buf[16 : 16 + hlen].decode())
    base = 16 + hlen
    tensors = {}
    for name, code, shape, off, nbytes in header["tensors"]:
        raw = buf[base + off : base + off + nbytes]
        tensors[name] = np.frombuffer(raw, dtype=_DTYPES[code]).reshape(shape).copy()
    return tensors, header["meta"]


def save(path, tensors, meta=None):
    with open(path, "wb") as fh:
        fh.write(dumps(tensors, meta))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
