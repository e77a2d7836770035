"""SFSV tensor container plus the artifact schemas stored in it.

Layout (all integers little-endian, no padding)::

    magic     4 bytes  b"SFSV"
    version   u32      1
    count     u32      number of sections
    section:  name_len u16 | name utf-8 | dtype u8 | ndim u8 | dims ndim*u64 | payload

dtype 0 = float64, 1 = int64, 2 = raw bytes (uint8). Payloads are row-major.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError

MAGIC = b"SFSV"
VERSION = 1

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8"), 2: np.dtype("u1")}


def _code_of(arr: np.ndarray) -> int:
    if arr.dtype.kind == "f":
        return 0
    if arr.dtype.kind in "iu" and arr.dtype != np.uint8:
        return 1
    if arr.dtype == np.uint8:
        return 2
    raise FormatError(f"unsupported dtype {arr.dtype}")


def raw(data: bytes | str) -> np.ndarray:
    """Wrap bytes (or UTF-8 text) as a raw-bytes section payload."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return np.frombuffer(data, dtype=np.uint8).copy()


def text(arr: np.ndarray) -> str:
    return bytes(np.asarray(arr, dtype=np.uint8)).decode("utf-8")


def encode_container(sections: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(sections))]
    for name, value in sections.items():
        arr = np.asarray(value)
        code = _code_of(arr)
        arr = np.asarray(arr, dtype=_DTYPES[code])
        bname = name.encode("utf-8")
        if len(bname) > 0xFFFF:
            raise FormatError(f"section name too long: {name[:40]}...")
        if arr.ndim > 255:
            raise FormatError(f"section {name} has too many dims")
        parts.append(struct.pack("<H", len(bname)))
        parts.append(bname)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def decode_container(buf: bytes) -> dict[str, np.ndarray]:
    n = len(buf)

    def need(pos: int, size: int, what: str) -> None:
        if pos + size > n:
            raise FormatError(f"truncated file: {what} needs {size} bytes at offset {pos}, file has {n}")

    need(0, 12, "header")
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        need(pos, 2, "name length")
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        need(pos, name_len, "name")
        try:
            name = buf[pos : pos + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"section name at offset {pos} is not UTF-8") from exc
        pos += name_len
        need(pos, 2, "dtype/ndim")
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        if code not in _DTYPES:
            raise FormatError(f"section {name!r}: unknown dtype code {code}")
        need(pos, 8 * ndim, "dims")
        dims = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        size = _DTYPES[code].itemsize
        for d in dims:
            size *= d
        need(pos, size, f"payload of {name!r}")
        if name in out:
            raise FormatError(f"duplicate section name {name!r}")
        out[name] = np.frombuffer(buf, dtype=_DTYPES[code], count=size // _DTYPES[code].itemsize, offset=pos).reshape(dims).copy()
        pos += size
    if pos != n:
        raise FormatError(f"{n - pos} trailing bytes after last section")
    return out


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_container(path, sections: Mapping[str, np.ndarray]) -> None:
    atomic_write_bytes(path, encode_container(sections))


def read_container(path) -> dict[str, np.ndarray]:
    return decode_container(Path(path).read_bytes())


# --------------------------------------------------------------- key = value


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    return str(v)


def write_kv(path, items: Mapping[str, object]) -> None:
    lines = [f"{k} = {format_value(v)}" for k, v in items.items()]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def parse_kv(textblob: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(textblob.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise FormatError(f"{source}:{lineno}: empty key")
        if k in out:
            raise FormatError(f"{source}:{lineno}: duplicate key {k!r}")
        out[k] = v
    return out


def write_json(path, doc) -> None:
    atomic_write_bytes(path, (json.dumps(doc, indent=2, default=_json_default) + "\n").encode("utf-8"))


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
