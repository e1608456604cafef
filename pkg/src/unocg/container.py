"""Single-file container: length-prefixed JSON header plus raw arrays.

Layout::

    [u64 little-endian header length H][H bytes UTF-8 JSON][zero pad to 8][payload]

The header holds ``kind``, free-form metadata and an ``arrays`` directory of
``{name: {dtype, shape, offset, nbytes}}`` with offsets relative to the
payload start.  Arrays are C-ordered little-endian ``<f8`` (floats) or
``|i1`` (labels), each starting on an 8-byte boundary.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("microstructure", "dataset", "features", "weights", "symbol", "report")
_DTYPES = {"f8": np.dtype("<f8"), "i1": np.dtype("i1"), "i8": np.dtype("<i8")}
_MAGIC_KEY = "unocg_container"
_VERSION = 1


class ContainerError(ValueError):
    pass


@dataclass(eq=False)
class Container:
    kind: str
    meta: dict = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContainerError(f"unknown container kind {self.kind!r}")

    def payload_nbytes(self) -> int:
        return sum(np.asarray(a).nbytes for a in self.arrays.values())


def _tag(arr: np.ndarray) -> str:
    if arr.dtype.kind == "f":
        return "f8"
    if arr.dtype.kind in "iub" and arr.dtype.itemsize == 1:
        return "i1"
    if arr.dtype.kind in "iu":
        return "i8"
    raise ContainerError(f"unsupported array dtype {arr.dtype}")


def _pad(n: int) -> int:
    return (-n) % 8


def to_bytes(cont: Container) -> bytes:
    directory, chunks, offset = {}, [], 0
    for name in sorted(cont.arrays):
        arr = np.asarray(cont.arrays[name])
        tag = _tag(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        directory[name] = {"dtype": tag, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)}
        chunks.append(data + b"\0" * _pad(len(data)))
        offset += len(data) + _pad(len(data))
    header = {_MAGIC_KEY: _VERSION, "kind": cont.kind, "meta": cont.meta, "arrays": directory}
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    head = struct.pack("<Q", len(text)) + text
    return head + b"\0" * _pad(len(head)) + b"".join(chunks)


def from_bytes(buf: bytes, kind: str | None = None) -> Container:
    if len(buf) < 8:
        raise ContainerError("truncated container: missing header length")
    (hlen,) = struct.unpack("<Q", buf[:8])
    if 8 + hlen > len(buf):
        raise ContainerError("truncated container: header extends past end of file")
    try:
        header = json.loads(buf[8:8 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"malformed container header: {exc}") from None
    if not isinstance(header, dict) or header.get(_MAGIC_KEY) != _VERSION:
        raise ContainerError("not a container file (missing format marker)")
    got = header.get("kind")
    if kind is not None and got != kind:
        raise ContainerError(f"expected a {kind!r} container, found {got!r}")
    start = 8 + hlen + _pad(8 + hlen)
    arrays = {}
    for name, ent in header.get("arrays", {}).items():
        try:
            dt = _DTYPES[ent["dtype"]]
            shape = tuple(int(s) for s in ent["shape"])
            off, nbytes = int(ent["offset"]), int(ent["nbytes"])
        except (KeyError, TypeError, ValueError):
            raise ContainerError(f"malformed directory entry for array {name!r}") from None
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dt.itemsize or off < 0:
            raise ContainerError(f"array {name!r}: size does not match dtype and shape")
        if start + off + nbytes > len(buf):
            raise ContainerError(f"truncated container: array {name!r} is incomplete")
        arrays[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize,
                                     offset=start + off).reshape(shape).copy()
    return Container(got, header.get("meta", {}), arrays)


def write(path: str | os.PathLike, cont: Container) -> None:
    Path(path).write_bytes(to_bytes(cont))


def read(path: str | os.PathLike, kind: str | None = None) -> Container:
    return from_bytes(Path(path).read_bytes(), kind)
