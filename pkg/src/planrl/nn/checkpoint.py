"""Checkpoint container: a JSON manifest followed by raw float64 blobs.

Layout, all little-endian:

    bytes 0..3    magic b"PLRL"
    bytes 4..7    container version, uint32
    bytes 8..15   manifest length in bytes, uint64
    manifest      UTF-8 JSON
    blobs         concatenated C-order float64 arrays, manifest order

The manifest lists components (name, layer widths, parameter count) and
every tensor's name and shape, plus a free-form "extra" dict for scalar
run state. Arrays are written and read as '<f8', so a save/load round
trip is bit-exact regardless of host byte order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from planrl.errors import ConfigError

MAGIC = b"PLRL"
CONTAINER_VERSION = 1


def save_bundle(path, components, extra=None):
    """components: list of dicts {"name", "widths", "tensors": [(name, array)]}."""
    manifest = {
        "format_version": CONTAINER_VERSION,
        "byte_order": "little",
        "dtype": "float64",
        "components": [],
        "extra": extra or {},
    }
    order = []
    seen = set()
    for comp in components:
        entry = {"name": comp["name"], "widths": list(comp.get("widths", [])),
                 "param_count": 0, "tensors": []}
        for tname, arr in comp["tensors"]:
            if tname in seen:
                raise ConfigError(f"duplicate tensor name in checkpoint: {tname}")
            seen.add(tname)
            arr = np.asarray(arr, dtype=np.float64)
            entry["tensors"].append({"name": tname, "shape": list(arr.shape)})
            entry["param_count"] += arr.size
            order.append(arr)
        manifest["components"].append(entry)
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", CONTAINER_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for arr in order:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_bundle(path):
    """Returns (manifest, {tensor_name: array})."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CONTAINER_VERSION:
            raise ConfigError(f"{path}: unsupported container version {version}")
        (mlen,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(mlen).decode("utf-8"))
        tensors = {}
        for comp in manifest["components"]:
            for t in comp["tensors"]:
                shape = tuple(t["shape"])
                n = int(np.prod(shape)) if shape else 1
                raw = f.read(8 * n)
                if len(raw) != 8 * n:
                    raise ConfigError(f"{path}: truncated tensor {t['name']}")
                tensors[t["name"]] = np.frombuffer(raw, dtype="<f8").astype(
                    np.float64).reshape(shape)
    return manifest, tensors
