"""WLB1 binary container and run manifests.

A WLB1 file is a self-describing little-endian container: magic bytes,
a section table (name, dtype, shape, offset, size) and raw payloads.
Sections are written sorted by name so the same data always produces the
same bytes.  Layout is documented in docs/formats.md.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"WLB1"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f8"): 0,
    np.dtype("<f4"): 1,
    np.dtype("<i8"): 2,
    np.dtype("<i4"): 3,
    np.dtype("u1"): 4,
    np.dtype("bool"): 5,
}
_RAW_CODE = 6
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class ContainerError(ValueError):
    """Raised when a WLB1 file is malformed or a section is unserializable."""


def _canonical(array: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(array)
    if arr.dtype == np.dtype("bool"):
        return arr
    target = arr.dtype.newbyteorder("<")
    if target not in _DTYPE_CODES:
        raise ContainerError(f"unsupported dtype {arr.dtype}")
    return arr.astype(target, copy=False)


def write_container(path: str | Path, sections: dict[str, np.ndarray | bytes]) -> None:
    """Write sections to ``path``; keys sorted so output bytes are canonical."""
    entries = []
    payloads = []
    for name in sorted(sections):
        value = sections[name]
        name_bytes = name.encode("utf-8")
        if isinstance(value, bytes):
            entries.append((name_bytes, _RAW_CODE, (), len(value)))
            payloads.append(value)
        else:
            arr = _canonical(np.asarray(value))
            entries.append((name_bytes, _DTYPE_CODES[arr.dtype], arr.shape, arr.nbytes))
            payloads.append(arr.tobytes())

    table_size = sum(2 + len(nb) + 1 + 1 + 8 * len(shape) + 16 for nb, _, shape, _ in entries)
    offset = 12 + table_size
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(entries))
    for (name_bytes, code, shape, nbytes) in entries:
        blob += struct.pack("<H", len(name_bytes))
        blob += name_bytes
        blob += struct.pack("<BB", code, len(shape))
        for dim in shape:
            blob += struct.pack("<Q", dim)
        blob += struct.pack("<QQ", offset, nbytes)
        offset += nbytes
    for payload in payloads:
        blob += payload
    Path(path).write_bytes(bytes(blob))


def read_container(path: str | Path) -> dict[str, np.ndarray | bytes]:
    """Read every section of a WLB1 file into arrays (or bytes for raw)."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    pos = 12
    out: dict[str, np.ndarray | bytes] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from("<" + "Q" * ndim, data, pos)
        pos += 8 * ndim
        offset, nbytes = struct.unpack_from("<QQ", data, pos)
        pos += 16
        payload = data[offset : offset + nbytes]
        if len(payload) != nbytes:
            raise ContainerError(f"{path}: truncated section {name!r}")
        if code == _RAW_CODE:
            out[name] = payload
        else:
            dtype = _CODE_DTYPES.get(code)
            if dtype is None:
                raise ContainerError(f"{path}: unknown dtype code {code}")
            out[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return out


def write_manifest(path: str | Path, fields: dict[str, str]) -> None:
    """Write a ``key = value`` manifest, keys sorted. No timestamps: outputs
    must be byte-identical across reruns of the same command."""
    lines = [f"{key} = {fields[key]}" for key in sorted(fields)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> dict[str, str]:
    fields: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    return fields


def sha256_of(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
