"""Writer for the engine's .ueb embedding store format.

Layout (little-endian): magic ``UEBS`` | version u32=1 | dim u32 | count u64 |
dtype u8=1 (f32) | 7 zero bytes | count*dim f32 row-major | id table of count
entries, each u16 byte length + UTF-8 bytes.  Implemented here independently
of the engine so conformance tests exercise both sides of the format.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"UEBS"
VERSION = 1
DTYPE_F32 = 1
MAX_DIM = 65_535

_HEADER = struct.Struct("<4sIIQB7x")


class ExportError(Exception):
    pass


def write_ueb(ids: list[str], vectors: np.ndarray, path: str | Path) -> None:
    vectors = np.asarray(vectors, dtype=np.float32)
    if vectors.ndim != 2:
        raise ExportError("vectors must be a 2-D matrix")
    if len(ids) != vectors.shape[0]:
        raise ExportError(f"{len(ids)} ids but {vectors.shape[0]} rows")
    if len(set(ids)) != len(ids):
        raise ExportError("duplicate ids in export")
    if not 1 <= vectors.shape[1] <= MAX_DIM:
        raise ExportError(f"dim {vectors.shape[1]} out of range")
    if not np.isfinite(vectors).all():
        raise ExportError("non-finite feature values")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, vectors.shape[1], vectors.shape[0], DTYPE_F32))
        fh.write(np.ascontiguousarray(vectors, dtype="<f4").tobytes())
        for id_ in ids:
            raw = id_.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ExportError(f"id too long: {id_[:32]!r}...")
            fh.write(struct.pack("<H", len(raw)) + raw)
