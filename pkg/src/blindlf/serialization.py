"""Deterministic flat-binary containers.

Two formats live here, both little-endian and byte-stable (saving the same
payload twice yields identical bytes, unlike pickle-based containers):

* the array-dict blob used for checkpoints::

    magic b"BLFBIN1\\n" | uint64 json_len | json manifest | raw array data

  The manifest is compact sorted-key JSON holding user metadata plus an
  ordered array table (name, dtype, shape, offset, nbytes).

* the noise-map file written by the estimation tools: a minimal header with
  the dimensions followed by row-major float32 data::

    magic b"NMAP" | uint32 version=1 | uint32 ndim | uint32 dims[ndim] | float32 data
"""

import json
import struct
from pathlib import Path

import numpy as np

BLOB_MAGIC = b"BLFBIN1\n"
NOISE_MAGIC = b"NMAP"


def save_blob(path, arrays, meta):
    """Write named arrays plus JSON-able metadata to a deterministic blob."""
    entries = []
    payload = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        raw = arr.tobytes(order="C")
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payload.append(raw)
        offset += len(raw)
    manifest = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True, separators=(",", ":"))
    blob = manifest.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BLOB_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in payload:
            fh.write(raw)
    return Path(path)


def load_blob(path):
    """Read back (arrays, meta) from a blob written by :func:`save_blob`."""
    with open(path, "rb") as fh:
        magic = fh.read(len(BLOB_MAGIC))
        if magic != BLOB_MAGIC:
            raise ValueError(f"{path}: not an array blob (bad magic {magic!r})")
        (json_len,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(json_len).decode("utf-8"))
        data = fh.read()
    arrays = {}
    for entry in manifest["arrays"]:
        raw = data[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(
            entry["shape"]
        ).copy()
    return arrays, manifest["meta"]


def save_noise_map(path, maps):
    """Write a noise-map array in the documented flat float32 format."""
    arr = np.ascontiguousarray(maps, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(NOISE_MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())
    return Path(path)


def load_noise_map(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(NOISE_MAGIC))
        if magic != NOISE_MAGIC:
            raise ValueError(f"{path}: not a noise-map file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != 1:
            raise ValueError(f"{path}: unsupported noise-map version {version}")
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype="<f4")
    return data.reshape(shape).astype(np.float64)
