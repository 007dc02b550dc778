"""Binary checkpoints: a JSON header followed by little-endian float64 blobs.

Layout: 8-byte magic, uint64 header length (little-endian), UTF-8 JSON
header, then each array's raw ``<f8`` bytes in header order. The header
lists every array's name and shape; free-form metadata sits under ``meta``.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"TXFCKPT1"


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    for name, a in arrays.items():
        a = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
        entries.append({"name": name, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(arrays, meta)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + n])
    off = 16 + n
    arrays = {}
    for e in header["arrays"]:
        shape = tuple(e["shape"])
        count = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        arrays[e["name"]] = a.astype(float)
        off += 8 * count
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return arrays, header["meta"]
