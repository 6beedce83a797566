"""Little-endian binary archive helpers with a trailing CRC-32."""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ArchiveError, CorruptArchiveError, UnsupportedVersionError


class Writer:
    def __init__(self, magic: bytes):
        self.parts = [magic]

    def u8(self, v: int):
        self.parts.append(struct.pack("<B", v))

    def u32(self, v: int):
        self.parts.append(struct.pack("<I", v))

    def u64(self, v: int):
        self.parts.append(struct.pack("<Q", v))

    def text(self, s: str):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.parts.append(b)

    def f64(self, arr: np.ndarray):
        """Matrices are written column-major."""
        self.parts.append(np.asarray(arr, dtype="<f8").tobytes(order="F"))

    def payload(self) -> bytes:
        body = b"".join(self.parts)
        return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)

    def write(self, path) -> int:
        data = self.payload()
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp.write_bytes(data)
            os.replace(tmp, path)
        except OSError as exc:
            raise ArchiveError(f"cannot write {path}: {exc}") from exc
        return zlib.crc32(data) & 0xFFFFFFFF


class Reader:
    def __init__(self, data: bytes, magic: bytes, what: str):
        family = magic[:-2]
        if len(data) < len(magic) + 4:
            raise CorruptArchiveError(f"{what} archive truncated ({len(data)} bytes)")
        if data[:len(magic)] != magic:
            if data[:len(family)] == family:
                raise UnsupportedVersionError(
                    f"unsupported {what} archive version {data[:len(magic)]!r}, expected {magic!r}")
            raise CorruptArchiveError(f"not a {what} archive (bad magic {data[:len(magic)]!r})")
        body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
        if zlib.crc32(body) & 0xFFFFFFFF != crc:
            raise CorruptArchiveError(f"{what} archive CRC mismatch (truncated or corrupt)")
        self.buf, self.pos, self.what = body, len(magic), what

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptArchiveError(f"{self.what} archive shorter than its header declares")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def text(self) -> str:
        return self._take(self.u32()).decode("utf-8")

    def f64(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        arr = np.frombuffer(self._take(8 * count), dtype="<f8").astype(np.float64)
        return arr.reshape(shape, order="F")

    def done(self):
        if self.pos != len(self.buf):
            raise CorruptArchiveError(f"{self.what} archive has {len(self.buf) - self.pos} trailing bytes")


def read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ArchiveError(f"cannot read {path}: {exc}") from exc


def file_crc(path) -> int:
    return zlib.crc32(read_bytes(path)) & 0xFFFFFFFF
