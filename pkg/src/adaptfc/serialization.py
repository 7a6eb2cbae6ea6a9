"""Versioned binary blobs for parameter tensors.

Layout::

    b"AFCB" | u32 format_version | u32 header_len | header (UTF-8 JSON) | payload

The header carries ``kind``, ``hyperparams`` and one ``{name, dtype, shape}``
entry per tensor; the payload is the concatenation of the tensors'
little-endian bytes in header order. JSON keys are sorted so identical
content always produces identical bytes.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"AFCB"
FORMAT_VERSION = 1
_DTYPES = {"float64": "<f8", "float32": "<f4", "int64": "<i8"}


def pack(kind, hyperparams, tensors):
    """Serialize ``tensors`` (ordered name -> array mapping) to bytes."""
    entries = []
    chunks = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype} for tensor {name!r}")
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())
    header = json.dumps(
        {"kind": kind, "hyperparams": hyperparams, "tensors": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def unpack(blob):
    """Inverse of :func:`pack`; returns ``(kind, hyperparams, tensors)``."""
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint blob (bad magic)")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    offset = 12 + header_len
    tensors = {}
    for entry in header["tensors"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = count * dt.itemsize
        if offset + nbytes > len(blob):
            raise CheckpointError(f"truncated payload for tensor {entry['name']!r}")
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=offset)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(entry["dtype"])
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError("trailing bytes after payload")
    return header["kind"], header["hyperparams"], tensors


def content_hash(blob):
    return hashlib.sha256(blob).hexdigest()


def write_blob(path, blob):
    with open(path, "wb") as fh:
        fh.write(blob)


def read_blob(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except FileNotFoundError as exc:
        raise CheckpointError(f"missing checkpoint: {path}") from exc
