"""Little-endian binary primitives shared by the on-disk containers."""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["FormatError", "Reader", "Writer"]

# Hard ceiling on any single length-prefixed string.
_STRING_CAP = 65535


class FormatError(ValueError):
    """Malformed, truncated, or unsupported binary container."""


class Reader:
    """Sequential reader over an in-memory buffer.

    Every read validates the remaining byte count first, so a corrupt
    length field can never trigger an allocation beyond the actual file
    size.
    """

    def __init__(self, data: bytes, name: str = "<bytes>"):
        self.data = data
        self.pos = 0
        self.name = name

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(
                f"{self.name}: truncated while reading {what}: need "
                f"{self.pos + n} bytes, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def f64(self, what: str) -> float:
        return struct.unpack("<d", self.take(8, what))[0]

    def string(self, what: str) -> str:
        n = self.u16(f"{what} length")
        if n > _STRING_CAP:
            raise FormatError(f"{self.name}: {what} length {n} exceeds cap")
        return self.take(n, what).decode("utf-8")

    def array(self, count: int, dtype: str, what: str,
              shape: tuple[int, ...] | None = None) -> np.ndarray:
        item = np.dtype(dtype).itemsize
        raw = self.take(count * item, what)
        arr = np.frombuffer(raw, dtype=dtype).copy()
        return arr.reshape(shape) if shape is not None else arr

    def expect_end(self) -> None:
        if self.remaining():
            raise FormatError(
                f"{self.name}: {self.remaining()} unexpected trailing bytes")


class Writer:
    """Mirror of :class:`Reader` building a byte buffer."""

    def __init__(self):
        self.buf = bytearray()

    def raw(self, data: bytes) -> None:
        self.buf += data

    def u8(self, v: int) -> None:
        self.buf.append(v)

    def u16(self, v: int) -> None:
        self.buf += struct.pack("<H", v)

    def u32(self, v: int) -> None:
        self.buf += struct.pack("<I", v)

    def u64(self, v: int) -> None:
        self.buf += struct.pack("<Q", v)

    def f64(self, v: float) -> None:
        self.buf += struct.pack("<d", v)

    def string(self, s: str) -> None:
        data = s.encode("utf-8")
        if len(data) > _STRING_CAP:
            raise ValueError(f"string of {len(data)} bytes exceeds format cap")
        self.u16(len(data))
        self.buf += data

    def array(self, arr: np.ndarray, dtype: str) -> None:
        self.buf += np.ascontiguousarray(arr, dtype=dtype).tobytes()

    def getvalue(self) -> bytes:
        return bytes(self.buf)
