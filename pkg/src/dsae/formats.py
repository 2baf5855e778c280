"""Binary artifact formats.

Three little-endian container formats, all magic-tagged and versioned:

  DSAF  feature/embedding matrix: "DSAF", u32 version=1, u32 rows, u32 cols,
        rows*cols float32 values, row-major.
  DSAN  normalization stats: "DSAN", u32 version=1, u32 dims, mean then std
        as float32, u64 frame_count.
  DSAC  checkpoint: "DSAC", u32 version=1, u32 digest length + digest bytes,
        u32 record count, then named records (u32 name length, UTF-8 name,
        u32 rank, u32 dims[rank], float64 values).

DSAC records hold float64 so that saving and restoring training state is
exact; DSAF/DSAN are interchange data and stay float32. Writers go through
a temp file and rename, so readers never observe partial files.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import FormatError

_MAGIC_FEATURES = b"DSAF"
_MAGIC_NORM = b"DSAN"
_MAGIC_CHECKPOINT = b"DSAC"
_VERSION = 1


def _atomic_write(path: str, payload: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated (needed {n} bytes at offset {self.pos})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def expect_magic(self, magic: bytes):
        got = self.take(4)
        if got != magic:
            raise FormatError(f"{self.path}: bad magic {got!r}, expected {magic!r}")
        version = self.u32()
        if version != _VERSION:
            raise FormatError(f"{self.path}: unsupported version {version}")

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.path}: {len(self.data) - self.pos} trailing bytes")


def _read_file(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as e:
        raise FormatError(f"{path}: {e}") from e


# DSAF -----------------------------------------------------------------------


def write_features(path: str, values: np.ndarray):
    values = np.asarray(values)
    if values.ndim != 2:
        raise FormatError(f"feature matrix must be 2-D, got shape {values.shape}")
    rows, cols = values.shape
    payload = _MAGIC_FEATURES + struct.pack("<III", _VERSION, rows, cols)
    payload += np.ascontiguousarray(values, dtype="<f4").tobytes()
    _atomic_write(path, payload)


def read_features(path: str) -> np.ndarray:
    r = _Reader(_read_file(path), path)
    r.expect_magic(_MAGIC_FEATURES)
    rows, cols = r.u32(), r.u32()
    raw = r.take(rows * cols * 4)
    r.done()
    out = np.frombuffer(raw, dtype="<f4").reshape(rows, cols)
    return out.astype(np.float64)


# DSAN -----------------------------------------------------------------------


def write_norm_stats(path: str, mean: np.ndarray, std: np.ndarray, frame_count: int):
    mean = np.asarray(mean, dtype=np.float64).ravel()
    std = np.asarray(std, dtype=np.float64).ravel()
    if mean.shape != std.shape:
        raise FormatError("mean/std dimension mismatch")
    payload = _MAGIC_NORM + struct.pack("<II", _VERSION, mean.size)
    payload += mean.astype("<f4").tobytes()
    payload += std.astype("<f4").tobytes()
    payload += struct.pack("<Q", frame_count)
    _atomic_write(path, payload)


def read_norm_stats(path: str):
    r = _Reader(_read_file(path), path)
    r.expect_magic(_MAGIC_NORM)
    dims = r.u32()
    mean = np.frombuffer(r.take(dims * 4), dtype="<f4").astype(np.float64)
    std = np.frombuffer(r.take(dims * 4), dtype="<f4").astype(np.float64)
    count = r.u64()
    r.done()
    return mean, std, count


# DSAC -----------------------------------------------------------------------


def write_checkpoint(path: str, digest: bytes, records: dict):
    """Write named float64 arrays plus a config digest."""
    out = [_MAGIC_CHECKPOINT, struct.pack("<I", _VERSION)]
    out.append(struct.pack("<I", len(digest)))
    out.append(bytes(digest))
    out.append(struct.pack("<I", len(records)))
    for name in records:
        values = np.asarray(records[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        out.append(struct.pack("<I", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<I", values.ndim))
        out.append(struct.pack(f"<{values.ndim}I", *values.shape))
        out.append(np.ascontiguousarray(values, dtype="<f8").tobytes())
    _atomic_write(path, b"".join(out))


def read_checkpoint(path: str):
    """Return (digest, records) from a checkpoint file."""
    r = _Reader(_read_file(path), path)
    r.expect_magic(_MAGIC_CHECKPOINT)
    digest = r.take(r.u32())
    count = r.u32()
    records = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = tuple(r.u32() for _ in range(rank))
        n = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(r.take(n * 8), dtype="<f8").reshape(dims).astype(np.float64)
        records[name] = values
    r.done()
    return digest, records
