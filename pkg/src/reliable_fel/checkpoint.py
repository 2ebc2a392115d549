"""Binary checkpoint container.

Layout::

    version (1 byte) | magic b"RFCK" | manifest length (uint64 LE) | manifest JSON
    | float64 LE payload

The manifest lists ``{"name", "shape", "offset"}`` per array, offsets in
bytes from the start of the payload, plus a free-form ``meta`` object.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .exceptions import CheckpointError

VERSION = 1
MAGIC = b"RFCK"
_HEADER = struct.Struct("<B4sQ")


def dumps(arrays, meta=None):
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8", order="C")  # keeps 0-d shapes
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps({"entries": entries, "meta": meta or {}},
                          sort_keys=True, separators=(",", ":")).encode()
    return _HEADER.pack(VERSION, MAGIC, len(manifest)) + manifest + b"".join(chunks)


def loads(blob):
    """Parse a container; returns ``(arrays, meta)`` or raises :class:`CheckpointError`."""
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"checkpoint truncated: {len(blob)} bytes is shorter than the header")
    version, magic, mlen = _HEADER.unpack_from(blob)
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {VERSION})")
    if magic != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    start = _HEADER.size + mlen
    if len(blob) < start:
        raise CheckpointError("checkpoint truncated inside the manifest")
    try:
        manifest = json.loads(blob[_HEADER.size:start])
        entries = manifest["entries"]
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {exc}") from exc
    payload = memoryview(blob)[start:]
    expected = sum(8 * int(np.prod(e["shape"], dtype=np.int64)) for e in entries)
    if len(payload) != expected:
        kind = "truncated" if len(payload) < expected else "has trailing bytes"
        raise CheckpointError(f"checkpoint payload {kind}: {len(payload)} bytes, expected {expected}")
    arrays = {}
    for e in entries:
        shape = tuple(e["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=e["offset"])
        arrays[e["name"]] = arr.reshape(shape).astype(np.float64)
    return arrays, manifest.get("meta", {})


def save_checkpoint(path, arrays, meta=None):
    """Write atomically: the file at ``path`` is either the old one or complete."""
    path = Path(path)
    data = dumps(arrays, meta)
    tmp = None
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        if tmp is not None:
            Path(tmp).unlink(missing_ok=True)
        raise CheckpointError(f"could not write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"could not read checkpoint {path}: {exc}") from exc
    return loads(blob)
