"""Framed binary files: magic, JSON header, raw little-endian array payload.

Layout::

    magic (8 bytes) | header length (uint32 LE) | header (UTF-8 JSON) | payload

The header always carries ``blocks``: a list of ``{name, dtype, shape,
offset, nbytes}`` entries with offsets relative to the payload start.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError

_LEN = struct.Struct("<I")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def config_hash(obj) -> str:
    """Short SHA-256 of the canonical JSON form of ``obj``."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def layout_blocks(arrays: Mapping[str, np.ndarray], dtype: str) -> tuple[list[dict], list[bytes]]:
    """Convert arrays to ``dtype`` (little-endian) and compute contiguous offsets."""
    blocks, chunks = [], []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype=np.dtype(dtype))
        raw = data.tobytes()
        blocks.append(
            {"name": name, "dtype": dtype, "shape": list(data.shape), "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    return blocks, chunks


def write_framed(path, magic: bytes, header: dict, arrays: Mapping[str, np.ndarray], dtype: str = "<f4") -> None:
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    blocks, chunks = layout_blocks(arrays, dtype)
    header = dict(header)
    header["blocks"] = blocks
    hbytes = canonical_json(header).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(_LEN.pack(len(hbytes)))
        fh.write(hbytes)
        for chunk in chunks:
            fh.write(chunk)


def read_framed(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != magic:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}, expected {magic!r}")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header")
    (hlen,) = _LEN.unpack_from(raw, 8)
    start = 12 + hlen
    if start > len(raw):
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from exc
    arrays = decode_blocks(raw[start:], header.get("blocks", []), str(path))
    return header, arrays


def decode_blocks(payload: bytes, blocks: list[dict], where: str = "payload") -> dict[str, np.ndarray]:
    arrays = {}
    for blk in blocks:
        dtype = np.dtype(blk["dtype"])
        shape = tuple(int(s) for s in blk["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * dtype.itemsize
        off = int(blk["offset"])
        if nbytes != int(blk["nbytes"]):
            raise FormatError(f"{where}: block {blk['name']!r} dimension mismatch")
        if off < 0 or off + nbytes > len(payload):
            raise FormatError(f"{where}: block {blk['name']!r} is truncated")
        arrays[blk["name"]] = np.frombuffer(payload, dtype=dtype, count=count, offset=off).reshape(shape).copy()
    return arrays
