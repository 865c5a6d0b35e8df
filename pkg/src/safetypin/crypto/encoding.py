"""Length-prefixed binary encoding shared by every wire and file format."""

import struct


class DecodeError(ValueError):
    pass


def u16(v: int) -> bytes:
    return struct.pack(">H", v)


def u32(v: int) -> bytes:
    return struct.pack(">I", v)


def u64(v: int) -> bytes:
    return struct.pack(">Q", v)


def lp(data: bytes) -> bytes:
    """4-byte big-endian length followed by ``data``."""
    return u32(len(data)) + bytes(data)


def lp_concat(*fields: bytes) -> bytes:
    return b"".join(lp(f) for f in fields)


class Reader:
    """Cursor over a byte string; every read raises DecodeError on truncation."""

    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError("truncated input")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def lp(self) -> bytes:
        return self.take(self.u32())

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def done(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError("trailing bytes")
