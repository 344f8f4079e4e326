"""Self-describing tensor container used for checkpoints and the spectrogram cache.

Layout::

    b"HGSEP-TENSORS 1\\n"
    <header length in bytes, ASCII decimal>\\n
    <header: UTF-8 JSON with "meta" and a "tensors" table>
    <raw little-endian tensor bytes, concatenated in table order>

Each table row is ``{"name", "dtype", "shape", "offset", "nbytes"}`` with the
offset relative to the start of the data block. Writes go to a temporary file
that is renamed into place.
"""

from __future__ import annotations

import json
import os
from typing import Mapping

import numpy as np

MAGIC = b"HGSEP-TENSORS 1\n"
_DTYPES = {"f4": "<f4", "f8": "<f8", "c16": "<c16", "i8": "<i8"}


class ContainerError(ValueError):
    """The file is not a valid tensor container."""


def _code(arr: np.ndarray) -> str:
    for code, le in _DTYPES.items():
        if arr.dtype == np.dtype(le):
            return code
    raise TypeError(f"unsupported dtype {arr.dtype}")


def write_container(path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    table, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _code(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        table.append({"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": dict(meta or {}), "tensors": table}, indent=1, sort_keys=True).encode()
    tmp = f"{os.fspath(path)}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(b"%d\n" % len(header))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def read_header(path) -> tuple[dict, list, int]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ContainerError(f"{path}: not a tensor container")
        try:
            n = int(fh.readline())
            header = json.loads(fh.read(n))
        except ValueError as err:
            raise ContainerError(f"{path}: corrupt header ({err})") from err
        return header["meta"], header["tensors"], fh.tell()


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(meta, {name: array})``; arrays come back in native byte order."""
    meta, table, start = read_header(path)
    with open(path, "rb") as fh:
        fh.seek(start)
        data = fh.read()
    out = {}
    for row in table:
        end = row["offset"] + row["nbytes"]
        if end > len(data):
            raise ContainerError(f"{path}: truncated data for tensor {row['name']!r}")
        dtype = np.dtype(_DTYPES[row["dtype"]])
        arr = np.frombuffer(data, dtype=dtype, count=row["nbytes"] // dtype.itemsize, offset=row["offset"])
        out[row["name"]] = arr.reshape(row["shape"]).astype(dtype.newbyteorder("="))
    return meta, out
