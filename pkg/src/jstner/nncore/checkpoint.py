"""Binary checkpoint container.

Layout: magic ``JST1``, u32 little-endian header byte length, UTF-8 header
text, then each parameter's values as raw little-endian float32 in header
manifest order. The header is ``key=value`` lines followed by a ``[params]``
line and one ``name<TAB>dim,dim,...`` line per parameter.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"JST1"


class CorruptCheckpoint(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def save_checkpoint(path, header_fields: dict[str, str],
                    named_arrays: list[tuple[str, np.ndarray]]):
    lines = [f"{k}={v}" for k, v in header_fields.items()]
    lines.append("[params]")
    for name, arr in named_arrays:
        dims = ",".join(str(d) for d in arr.shape)
        lines.append(f"{name}\t{dims}")
    header = "\n".join(lines).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for _, arr in named_arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Returns (header key=value fields, name -> float32 array)."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CorruptCheckpoint(f"bad magic {blob[:4]!r}", 0)
    if len(blob) < 8:
        raise CorruptCheckpoint("truncated before header length", len(blob))
    (hlen,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + hlen:
        raise CorruptCheckpoint("truncated header", len(blob))
    header = blob[8:8 + hlen].decode("utf-8")
    fields: dict[str, str] = {}
    manifest: list[tuple[str, tuple[int, ...]]] = []
    in_params = False
    for line in header.splitlines():
        if line == "[params]":
            in_params = True
            continue
        if not in_params:
            key, _, value = line.partition("=")
            fields[key] = value
        else:
            name, _, dims = line.partition("\t")
            shape = tuple(int(d) for d in dims.split(",")) if dims else ()
            manifest.append((name, shape))
    arrays: dict[str, np.ndarray] = {}
    offset = 8 + hlen
    for name, shape in manifest:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if len(blob) < offset + nbytes:
            raise CorruptCheckpoint(f"truncated parameter {name}", offset)
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=count,
                                     offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise CorruptCheckpoint("trailing bytes after last parameter", offset)
    return fields, arrays
