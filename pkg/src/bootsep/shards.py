"""Dataset shard binary format.

Layout: magic b"BSSH", uint32 little-endian header length, JSON header,
then one little-endian blob per field in header-declared order. Arrays
restore bit-exactly. Float fields are stored as float32, labels as uint8.
"""

from __future__ import annotations

import json
import struct

import numpy as np

SHARD_MAGIC = b"BSSH"

_DTYPES = {"float32": "<f4", "uint8": "u1"}


class ShardError(ValueError):
    pass


def write_shard(path, mixture_id: str, fields: dict):
    """fields maps name -> ndarray; labels are uint8, everything else float32."""
    entries = []
    blobs = []
    for name, arr in fields.items():
        arr = np.asarray(arr)
        tag = "uint8" if name == "labels" else "float32"
        blob = arr.astype(_DTYPES[tag]).tobytes()
        entries.append({"name": name, "dtype": tag, "shape": list(arr.shape)})
        blobs.append(blob)
    header = {
        "format": "bootsep-shard-v1",
        "mixture_id": mixture_id,
        "fields": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(SHARD_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def read_shard(path):
    """Returns (mixture_id, {name: ndarray})."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != SHARD_MAGIC:
        raise ShardError(f"{path}: not a shard file")
    if len(raw) < 8:
        raise ShardError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    pos = 8 + hlen
    fields = {}
    for entry in header["fields"]:
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        end = pos + n * dtype.itemsize
        if end > len(raw):
            raise ShardError(f"{path}: truncated blob for field '{entry['name']}'")
        fields[entry["name"]] = np.frombuffer(raw[pos:end], dtype=dtype).reshape(
            entry["shape"]
        )
        pos = end
    if pos != len(raw):
        raise ShardError(f"{path}: trailing bytes after declared blobs")
    return header["mixture_id"], fields
