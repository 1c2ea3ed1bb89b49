"""Shared on-disk container: one JSON manifest line, then raw tensors.

Layout: a single line of compact JSON (no embedded newlines), a newline
byte, then the concatenated array payloads in manifest order. Arrays are
little-endian and limited to float32/int32. The manifest stores per-tensor
byte offsets relative to the payload start plus a CRC32 of the whole
payload, so truncation and corruption are both detected.
"""

from __future__ import annotations

import json
import zlib

import numpy as np

from .errors import ChecksumError

_DTYPES = {"float32": "<f4", "int32": "<i4"}


def write_container(path, meta: dict, tensors: list[tuple[str, np.ndarray]]):
    """Serialize metadata plus named arrays. Overwrites path."""
    entries = []
    blobs = []
    offset = 0
    names = set()
    for name, arr in tensors:
        if name in names:
            raise ValueError(f"duplicate tensor name {name!r}")
        names.add(name)
        arr = np.asarray(arr)
        if arr.dtype == np.float64 or arr.dtype == np.float32:
            dtype = "float32"
        elif arr.dtype in (np.int32, np.int64):
            dtype = "int32"
            if arr.size and (arr.min() < -(2**31) or arr.max() >= 2**31):
                raise ValueError(f"tensor {name!r} overflows int32")
        else:
            raise ValueError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        blob = np.ascontiguousarray(arr.astype(_DTYPES[dtype])).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": dtype,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    payload = b"".join(blobs)
    manifest = dict(meta)
    manifest["tensors"] = entries
    manifest["payload_crc32"] = zlib.crc32(payload)
    line = json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    if "\n" in line:
        raise ValueError("manifest metadata must not contain newlines")
    with open(path, "wb") as fh:
        fh.write(line.encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container; verifies the payload checksum before decoding."""
    with open(path, "rb") as fh:
        raw = fh.read()
    sep = raw.find(b"\n")
    if sep < 0:
        raise ChecksumError(f"{path}: missing manifest line")
    try:
        manifest = json.loads(raw[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumError(f"{path}: unreadable manifest: {exc}") from exc
    payload = raw[sep + 1 :]
    expected = manifest.get("payload_crc32")
    actual = zlib.crc32(payload)
    if expected != actual:
        raise ChecksumError(f"{path}: payload checksum mismatch ({actual} != {expected})")
    arrays = {}
    for entry in manifest.get("tensors", []):
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise ChecksumError(f"{path}: unsupported dtype {entry['dtype']!r}")
        start, nbytes = entry["offset"], entry["nbytes"]
        chunk = payload[start : start + nbytes]
        if len(chunk) != nbytes:
            raise ChecksumError(f"{path}: tensor {entry['name']!r} is truncated")
        arr = np.frombuffer(chunk, dtype=dtype).reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()  # writable, native-order copy
    return manifest, arrays
