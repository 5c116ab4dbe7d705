"""GIROM1 model container.

Layout::

    GIROM1\\n
    <n_blocks>\\n
    <name> f8 <rows> <cols> <offset>\\n      (one line per block)
    <payload: little-endian float64, column-major per block>
    <CRC-32 of the payload, 4 bytes little-endian>

Offsets are byte offsets into the payload. All blocks are 2D; vectors are
stored as a single column and scalars as 1x1.
"""
from __future__ import annotations

import re
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, ModelFormatError, TruncatedFileError, UnsupportedVersionError

MAGIC = b"GIROM1"
_NAME = re.compile(r"^[A-Za-z0-9_.\-]+$")


def _as_2d(a):
    a = np.asarray(a, dtype="<f8")
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(-1, 1)
    if a.ndim == 2:
        return a
    raise ValueError(f"block with {a.ndim} dimensions; reshape to 2D first")


def encode(blocks: dict) -> bytes:
    header = [MAGIC + b"\n", f"{len(blocks)}\n".encode()]
    payload = []
    off = 0
    for name, arr in blocks.items():
        if not _NAME.match(name):
            raise ValueError(f"invalid block name {name!r}")
        a = _as_2d(arr)
        raw = np.asfortranarray(a).tobytes(order="F")
        header.append(f"{name} f8 {a.shape[0]} {a.shape[1]} {off}\n".encode())
        payload.append(raw)
        off += len(raw)
    body = b"".join(payload)
    return b"".join(header) + body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def write_container(path, blocks: dict):
    data = encode(blocks)
    p = Path(path)
    tmp = p.with_name(p.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(p)
    return p


def decode(data: bytes) -> dict:
    lines = data.split(b"\n", 2)
    if len(lines) < 3:
        raise TruncatedFileError("container header is truncated")
    magic = lines[0]
    if magic != MAGIC:
        if magic.startswith(b"GIROM"):
            raise UnsupportedVersionError(f"unsupported container version {magic.decode(errors='replace')!r}")
        raise ModelFormatError("not a GIROM container")
    try:
        n = int(lines[1])
    except ValueError as exc:
        raise ModelFormatError("bad block count") from exc
    rest = lines[2]
    table = []
    for _ in range(n):
        line, sep, rest = rest.partition(b"\n")
        if not sep:
            raise TruncatedFileError("block table is truncated")
        parts = line.decode().split()
        if len(parts) != 5 or parts[1] != "f8":
            raise ModelFormatError(f"bad block line {line!r}")
        table.append((parts[0], int(parts[2]), int(parts[3]), int(parts[4])))
    size = sum(8 * r * c for _, r, c, _ in table)
    if len(rest) < size + 4:
        raise TruncatedFileError(f"payload has {len(rest)} bytes, expected {size + 4}")
    body, crc = rest[:size], rest[size:size + 4]
    if struct.unpack("<I", crc)[0] != (zlib.crc32(body) & 0xFFFFFFFF):
        raise ChecksumError("payload checksum mismatch")
    out = {}
    for name, r, c, off in table:
        buf = body[off:off + 8 * r * c]
        out[name] = np.ascontiguousarray(np.frombuffer(buf, dtype="<f8").reshape((r, c), order="F"), dtype=float)
    return out


def read_container(path) -> dict:
    return decode(Path(path).read_bytes())
