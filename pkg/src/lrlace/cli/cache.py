"""Binary cache of lattice fields.

Layout (little endian)::

    magic      4 bytes  b"LRLC"
    version    u32
    kind       u32      content tag, see KINDS
    d          u32
    M          u32
    flags      u32      bit 0: symmetric (orthant) storage
    count      u64      number of float64 payload elements
    key_hash   32 bytes sha256 of (params key, operation, format version)
    data_hash  32 bytes sha256 of the payload bytes
    payload    count * f64
"""

from __future__ import annotations

import hashlib
import logging
import os
import struct
import tempfile

import numpy as np

from ..lattice import BoxSpec, LatticeField

LOGGER = logging.getLogger(__name__)

MAGIC = b"LRLC"
FORMAT_VERSION = 1
KINDS = {"kernel": 1, "green": 2, "pi": 3, "effective_kernel": 4}
_HEADER = struct.Struct("<4sIIIIIQ32s32s")


class CacheError(Exception):
    pass


def key_hash(params_key: str, operation: str) -> bytes:
    return hashlib.sha256(f"{params_key}|{operation}|v{FORMAT_VERSION}".encode()).digest()


def encode(field_: LatticeField, kind: str, params_key: str, operation: str) -> bytes:
    payload = np.ascontiguousarray(field_.values, dtype="<f8").tobytes()
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, KINDS[kind], field_.box.d, field_.box.M,
                          int(bool(field_.symmetric)), field_.values.size,
                          key_hash(params_key, operation), hashlib.sha256(payload).digest())
    return header + payload


def decode(blob: bytes, kind: str, params_key: str, operation: str) -> LatticeField:
    if len(blob) < _HEADER.size:
        raise CacheError("truncated header")
    magic, version, tag, d, M, flags, count, khash, dhash = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CacheError("bad magic")
    if version != FORMAT_VERSION:
        raise CacheError(f"format version {version} != {FORMAT_VERSION}")
    if tag != KINDS[kind]:
        raise CacheError("content kind mismatch")
    if khash != key_hash(params_key, operation):
        raise CacheError("key hash mismatch")
    payload = blob[_HEADER.size:]
    if len(payload) != 8 * count:
        raise CacheError("payload length mismatch")
    if hashlib.sha256(payload).digest() != dhash:
        raise CacheError("payload checksum mismatch")
    symmetric = bool(flags & 1)
    box = BoxSpec(d, M)
    shape = box.orthant_shape if symmetric else box.shape
    if int(np.prod(shape)) != count:
        raise CacheError("element count does not match the box")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    return LatticeField(box, values, symmetric=symmetric, kind=kind, is_kernel=kind.endswith("kernel"))


class FieldCache:
    """Directory of cache entries addressed by their key hash."""

    def __init__(self, directory: str):
        self.directory = directory

    def path(self, params_key: str, operation: str) -> str:
        return os.path.join(self.directory, key_hash(params_key, operation).hex()[:24] + ".lrlc")

    def load(self, kind: str, params_key: str, operation: str) -> LatticeField | None:
        path = self.path(params_key, operation)
        if not os.path.exists(path):
            return None
        try:
            with open(path, "rb") as fh:
                return decode(fh.read(), kind, params_key, operation)
        except CacheError as exc:
            LOGGER.warning("discarding cache entry %s: %s", path, exc)
            return None

    def store(self, field_: LatticeField, kind: str, params_key: str, operation: str) -> str:
        os.makedirs(self.directory, exist_ok=True)
        path = self.path(params_key, operation)
        blob = encode(field_, kind, params_key, operation)
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(blob)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path
