"""Named parameter collections and their binary container format.

Container layout (version 1, all integers little-endian):

    magic   4 bytes  b"MPT1"
    version u32      1
    meta    u32 length + UTF-8 JSON blob (model/training metadata)
    count   u32      number of entries
    table   per entry: u16 name length, name bytes (UTF-8),
            u8 ndim, ndim * u32 dims
    data    per entry, in table order: raw float32 little-endian values

Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from ..errors import DataError, InvalidArgumentError
from .tensor import Tensor

MAGIC = b"MPT1"
FORMAT_VERSION = 1


class ParamStore:
    """Flat name -> Tensor mapping with unique hierarchical names."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise InvalidArgumentError(f"duplicate parameter name: {name}")
        t = Tensor(np.ascontiguousarray(value, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def subset(self, prefixes) -> dict[str, Tensor]:
        if isinstance(prefixes, str):
            prefixes = (prefixes,)
        return {
            name: t
            for name, t in self._params.items()
            if any(name.startswith(p) for p in prefixes)
        }

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def size(self) -> int:
        return sum(t.size for t in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for name, value in arrays.items():
            if name not in self._params:
                raise DataError(f"unknown parameter in checkpoint: {name}")
            t = self._params[name]
            if t.shape != value.shape:
                raise DataError(
                    f"shape mismatch for {name}: store {t.shape} vs file {value.shape}"
                )
            t.data = np.ascontiguousarray(value, dtype=self.dtype)


def save_container(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    """Write named float arrays plus a JSON metadata blob atomically."""
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    parts.append(struct.pack("<I", len(meta_blob)))
    parts.append(meta_blob)
    parts.append(struct.pack("<I", len(arrays)))
    payload = []
    for name, value in arrays.items():
        encoded = name.encode("utf-8")
        value = np.ascontiguousarray(value, dtype="<f4")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        payload.append(value.tobytes())
    blob = b"".join(parts) + b"".join(payload)

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container written by :func:`save_container`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: not a parameter container (bad magic)")
    offset = 4
    (version,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    (meta_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    meta = json.loads(blob[offset : offset + meta_len].decode("utf-8"))
    offset += meta_len
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    entries = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        entries.append((name, shape))
    arrays = {}
    for name, shape in entries:
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(
            blob, dtype="<f4", count=n, offset=offset
        ).reshape(shape).copy()
        offset += 4 * n
    return arrays, meta
