"""On-disk formats: EVT tensors and schema-tagged JSON lines.

EVT layout (little endian)::

    b"EVT1" | u8 dtype | u8 rank | 2 zero bytes | rank x u32 dims | payload

dtype 0 is float32, dtype 1 is uint16. Stacks are stored ``(C, H, W)``,
label maps ``(H, W)``. Payload is C-order.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

MAGIC = b"EVT1"
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<u2")}
_CODES = {np.dtype("<f4"): 0, np.dtype("<u2"): 1}
MAX_ELEMENTS = 1 << 34


class FormatError(ValueError):
    pass


def _atomic_write(path: Path, data: bytes) -> None:
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


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        arr = arr.astype("<f4")
    elif arr.dtype.kind in "ui":
        if arr.size and (arr.min() < 0 or arr.max() > 0xFFFF):
            raise FormatError("integer tensor values must fit in uint16")
        arr = arr.astype("<u2")
    elif arr.dtype.kind == "b":
        arr = arr.astype("<u2")
    else:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError(f"rank {arr.ndim} too large")
    if any(d > 0xFFFFFFFF for d in arr.shape):
        raise FormatError(f"dimension overflow in shape {arr.shape}")
    header = MAGIC + struct.pack("<BBxx", _CODES[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError("bad magic: not an EVT1 tensor")
    code, rank, p0, p1 = data[4], data[5], data[6], data[7]
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if p0 or p1:
        raise FormatError("non-zero header padding")
    end = 8 + 4 * rank
    if len(data) < end:
        raise FormatError("truncated header")
    shape = struct.unpack(f"<{rank}I", data[8:end])
    count = 1
    for d in shape:
        count *= d
        if count > MAX_ELEMENTS:
            raise FormatError(f"dimension overflow in shape {shape}")
    dtype = DTYPES[code]
    expected = end + count * dtype.itemsize
    if len(data) < expected:
        raise FormatError(f"truncated payload: {len(data)} bytes, expected {expected}")
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} trailing bytes after payload")
    return np.frombuffer(data, dtype=dtype, count=count, offset=end).reshape(shape).copy()


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    _atomic_write(Path(path), encode_tensor(arr))


def read_tensor(path: str | Path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    lines = []
    for rec in records:
        if "schema" not in rec:
            raise FormatError(f"record without schema field: {rec}")
        lines.append(dumps_record(rec) + "\n")
    _atomic_write(Path(path), "".join(lines).encode())


def read_jsonl(path: str | Path, schema: str | None = None) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict) or "schema" not in rec:
                raise FormatError(f"{path}:{lineno}: missing schema field")
            if schema is not None and rec["schema"] != schema:
                raise FormatError(f"{path}:{lineno}: expected schema {schema!r}, got {rec['schema']!r}")
            yield rec


def write_json(path: str | Path, obj) -> None:
    _atomic_write(Path(path), (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())
