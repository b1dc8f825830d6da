"""Binary instance files; the layout is described in docs/instance_format.md."""

from __future__ import annotations

import hashlib
import logging
import struct
from pathlib import Path

import numpy as np
from scipy import sparse

from solvers.linalg import Geometry, LinearSystemInstance

logger = logging.getLogger(__name__)

MAGIC = b"ISPINST\x00"
VERSION = 1
HEADER = struct.Struct("<8sHHBxxxQQQI")
DIGEST_SIZE = 32

FLAG_SPARSE = 0x1
FLAG_PLANTED = 0x2

GEOMETRY_CODES = {Geometry.IDENTITY: 0, Geometry.EQUAL_TO_A: 1, Geometry.GENERAL: 2}
GEOMETRY_BY_CODE = {code: geometry for geometry, code in GEOMETRY_CODES.items()}


class ContainerError(ValueError):
    pass


def _f8(values) -> bytes:
    return np.ascontiguousarray(values, dtype="<f8").tobytes()


def _i8(values) -> bytes:
    return np.ascontiguousarray(values, dtype="<i8").tobytes()


def export_instance(sys: LinearSystemInstance, path: str | Path) -> None:
    """Write ``sys`` to ``path``, replacing any existing file."""
    A_sparse = sparse.issparse(sys.A)
    flags = (FLAG_SPARSE if A_sparse else 0) | (FLAG_PLANTED if sys.planted_solution is not None else 0)
    label = sys.label.encode("utf-8")
    nnz = sys.A.nnz if A_sparse else 0

    parts = [HEADER.pack(MAGIC, VERSION, flags, GEOMETRY_CODES[sys.geometry], sys.m, sys.n, nnz, len(label)), label]
    if A_sparse:
        A = sparse.csr_array(sys.A)
        parts += [_i8(A.indptr), _i8(A.indices), _f8(A.data)]
    else:
        parts.append(_f8(sys.A))
    parts.append(_f8(sys.b))
    if sys.geometry is Geometry.GENERAL:
        parts.append(_f8(sys.B))
    if sys.planted_solution is not None:
        parts.append(_f8(sys.planted_solution))

    body = b"".join(parts)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())
    logger.debug("Exported %s (%d bytes) to %s", sys.label or "instance", len(body) + DIGEST_SIZE, path)


class _Reader:
    def __init__(self, body: bytes, offset: int):
        self.body = body
        self.offset = offset

    def take(self, count: int, dtype: str) -> np.ndarray:
        size = count * 8
        if self.offset + size > len(self.body):
            raise ContainerError("instance file is truncated")
        out = np.frombuffer(self.body, dtype=dtype, count=count, offset=self.offset).copy()
        self.offset += size
        return out


def import_instance(path: str | Path) -> LinearSystemInstance:
    """
    Read an instance written by :func:`export_instance`.

    Raises:
        ContainerError: wrong magic or version, truncated file, or checksum mismatch
    """
    data = Path(path).read_bytes()
    if len(data) < HEADER.size + DIGEST_SIZE:
        raise ContainerError("instance file is truncated")
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    magic, version, flags, geometry_code, m, n, nnz, label_len = HEADER.unpack_from(body)
    if magic != MAGIC:
        raise ContainerError(f"{path} is not an instance file")
    if version != VERSION:
        raise ContainerError(f"unsupported instance file version {version}, expected {VERSION}")
    if hashlib.sha256(body).digest() != digest:
        raise ContainerError(f"checksum mismatch in {path}")
    if geometry_code not in GEOMETRY_BY_CODE:
        raise ContainerError(f"unknown geometry code {geometry_code}")
    geometry = GEOMETRY_BY_CODE[geometry_code]

    offset = HEADER.size + label_len
    if offset > len(body):
        raise ContainerError("instance file is truncated")
    label = body[HEADER.size : offset].decode("utf-8")
    reader = _Reader(body, offset)

    if flags & FLAG_SPARSE:
        indptr = reader.take(m + 1, "<i8")
        indices = reader.take(nnz, "<i8")
        values = reader.take(nnz, "<f8")
        A = sparse.csr_array((values, indices, indptr), shape=(m, n))
    else:
        A = reader.take(m * n, "<f8").reshape(m, n)
    b = reader.take(m, "<f8")
    B = reader.take(n * n, "<f8").reshape(n, n) if geometry is Geometry.GENERAL else None
    planted = reader.take(n, "<f8") if flags & FLAG_PLANTED else None
    if reader.offset != len(body):
        raise ContainerError(f"{len(body) - reader.offset} unexpected trailing bytes in {path}")

    return LinearSystemInstance.create(
        A,
        b,
        B,
        geometry=geometry if geometry is not Geometry.IDENTITY else None,
        planted_solution=planted,
        label=label,
    )
