"""Checkpoint container.

Byte layout (all integers little-endian)::

    offset 0   8 bytes   magic b"EQCNPCKP"
    offset 8   uint32    format version (currently 1)
    offset 12  uint32    header length H in bytes
    offset 16  H bytes   UTF-8 JSON header, keys sorted, no whitespace:
                         {"config": {...}, "tensors": [{"name", "shape",
                          "offset", "nbytes"}, ...]}
    16 + H     payload   concatenated float64 ('<f8') C-order arrays;
                         tensor offsets are relative to the payload start

The same parameters and config always produce identical bytes.
"""
from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"EQCNPCKP"
FORMAT_VERSION = 1


def dumps(params: dict, config: dict | None = None) -> bytes:
    entries, blobs, offset = [], [], 0
    for name in sorted(params):
        arr = np.asarray(params[name], dtype="<f8")
        raw = arr.tobytes(order="C")
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"config": config or {}, "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + b"".join(blobs)


def loads(blob: bytes):
    if blob[:8] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    payload = memoryview(blob)[16 + hlen:]
    params = {}
    for e in header["tensors"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        params[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return params, header["config"]


def save_checkpoint(path, params: dict, config: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(params, config))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
