"""Single-file parameter archive.

Layout::

    b"FBPARAMS"                 8-byte magic
    uint64 little-endian        byte length of the JSON manifest
    manifest (UTF-8 JSON)       {"version", "meta", "entries": [{name, shape, dtype, offset, nbytes}]}
    blob                        raw little-endian arrays; offsets are relative to the blob start
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..errors import DataError

MAGIC = b"FBPARAMS"
VERSION = "fusionbench-params-v1"


def save_arrays(path: str | Path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> None:
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": le.dtype.str, "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"version": VERSION, "meta": dict(meta or {}), "entries": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Return ``(arrays, meta)`` from an archive written by :func:`save_arrays`."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise DataError(f"{path}: not a fusionbench parameter archive")
    (hlen,) = struct.unpack("<Q", buf[8:16])
    header = json.loads(buf[16 : 16 + hlen])
    if header.get("version") != VERSION:
        raise DataError(f"{path}: unsupported archive version {header.get('version')!r}")
    blob = memoryview(buf)[16 + hlen :]
    arrays = {}
    for e in header["entries"]:
        raw = blob[e["offset"] : e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]
