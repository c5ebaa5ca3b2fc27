"""Blob-with-JSON-header file format shared by checkpoints and other artifacts.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
then raw array blocks in the order listed by header["blocks"]. Float arrays
are stored as little-endian float32, integer arrays as little-endian int64.
"""

import json
import struct

import numpy as np

from .errors import ArgumentError

MAGIC = b"UKBLOB1\n"

_DTYPES = {"f4": np.dtype("<f4"), "i8": np.dtype("<i8"), "i1": np.dtype("<i1")}


def _code_for(arr):
    if arr.dtype.kind == "f":
        return "f4"
    if arr.dtype.kind in "iu":
        return "i8"
    raise ArgumentError(f"unsupported array dtype {arr.dtype}")


def write_blob(path, header, arrays):
    """Write `arrays` (list of ndarrays) after a JSON `header`.

    The header gains a "blocks" entry describing shape and dtype of each
    block, so files are self-describing.
    """
    blocks = []
    payload = []
    for arr in arrays:
        code = _code_for(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        blocks.append({"shape": list(arr.shape), "dtype": code})
        payload.append(data.tobytes())
    head = dict(header)
    head["blocks"] = blocks
    raw = json.dumps(head, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for chunk in payload:
            fh.write(chunk)


def read_blob(path):
    """Read a blob file; returns (header, list of ndarrays)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ArgumentError(f"{path}: not a blob file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = []
        for block in header["blocks"]:
            dtype = _DTYPES[block["dtype"]]
            count = int(np.prod(block["shape"], dtype=np.int64)) if block["shape"] else 1
            buf = fh.read(count * dtype.itemsize)
            arr = np.frombuffer(buf, dtype=dtype).reshape(block["shape"])
            arrays.append(arr.copy())
    return header, arrays
