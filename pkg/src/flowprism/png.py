"""8-bit grayscale PNG encoding and decoding.

Rows are filtered with the adaptive heuristic used by common encoders: try
all five filter types and keep the one whose output has the smallest sum of
absolute values (bytes read as signed). The encoder works row by row so a
caller can filter rows as they fill and deflate once at the end.
"""

from __future__ import annotations

import struct
import zlib

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class PngError(ValueError):
    pass


def _chunk(kind: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(kind + data) & 0xFFFFFFFF)


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa = abs(p - a)
    pb = abs(p - b)
    pc = abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _cost(row) -> int:
    return sum(v if v < 128 else 256 - v for v in row)


def filter_row(row: bytes, prev: bytes | None) -> bytes:
    """Filter one scanline; returns filter-type byte followed by filtered data."""
    if prev is None:
        prev = bytes(len(row))
    left = b"\x00" + row[:-1]
    upleft = b"\x00" + prev[:-1]
    cands = (
        row,
        bytes((x - a) & 0xFF for x, a in zip(row, left)),
        bytes((x - b) & 0xFF for x, b in zip(row, prev)),
        bytes((x - ((a + b) >> 1)) & 0xFF for x, a, b in zip(row, left, prev)),
        bytes((x - _paeth(a, b, c)) & 0xFF for x, a, b, c in zip(row, left, prev, upleft)),
    )
    best = 0
    best_cost = _cost(cands[0])
    for i in range(1, 5):
        c = _cost(cands[i])
        if c < best_cost:
            best, best_cost = i, c
    return bytes((best,)) + cands[best]


def assemble(filtered: bytes, width: int, height: int, level: int = 6) -> bytes:
    """Wrap already-filtered scanlines into a complete PNG file."""
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 0, 0, 0, 0)
    return (PNG_SIGNATURE + _chunk(b"IHDR", ihdr)
            + _chunk(b"IDAT", zlib.compress(filtered, level)) + _chunk(b"IEND", b""))


def png_encode(buffer: bytes, width: int, height: int) -> bytes:
    if width <= 0 or height <= 0:
        raise PngError(f"invalid dimensions {width}x{height}")
    if len(buffer) != width * height:
        raise PngError(f"buffer has {len(buffer)} bytes, expected {width}x{height}={width * height}")
    buffer = bytes(buffer)
    out = bytearray()
    prev = None
    for y in range(height):
        row = buffer[y * width:(y + 1) * width]
        out += filter_row(row, prev)
        prev = row
    return assemble(bytes(out), width, height)


def png_decode(data: bytes) -> tuple[int, int, bytes]:
    """Decode an 8-bit grayscale non-interlaced PNG into (width, height, pixels)."""
    if not data.startswith(PNG_SIGNATURE):
        raise PngError("missing PNG signature")
    pos = len(PNG_SIGNATURE)
    width = height = None
    idat = bytearray()
    while pos + 8 <= len(data):
        length, kind = struct.unpack_from(">I4s", data, pos)
        body = data[pos + 8:pos + 8 + length]
        crc = struct.unpack_from(">I", data, pos + 8 + length)[0]
        if zlib.crc32(kind + body) & 0xFFFFFFFF != crc:
            raise PngError(f"bad CRC in {kind!r} chunk")
        pos += 12 + length
        if kind == b"IHDR":
            width, height, depth, ctype, _comp, _filt, interlace = struct.unpack(">IIBBBBB", body)
            if depth != 8 or ctype != 0 or interlace != 0:
                raise PngError("only 8-bit grayscale non-interlaced images are supported")
        elif kind == b"IDAT":
            idat += body
        elif kind == b"IEND":
            break
    if width is None:
        raise PngError("missing IHDR")
    raw = zlib.decompress(bytes(idat))
    stride = width + 1
    if len(raw) != stride * height:
        raise PngError("image data length mismatch")
    out = bytearray()
    prev = bytearray(width)
    for y in range(height):
        ftype = raw[y * stride]
        line = bytearray(raw[y * stride + 1:(y + 1) * stride])
        for x in range(width):
            a = line[x - 1] if x else 0
            b = prev[x]
            c = prev[x - 1] if x else 0
            if ftype == 1:
                line[x] = (line[x] + a) & 0xFF
            elif ftype == 2:
                line[x] = (line[x] + b) & 0xFF
            elif ftype == 3:
                line[x] = (line[x] + ((a + b) >> 1)) & 0xFF
            elif ftype == 4:
                line[x] = (line[x] + _paeth(a, b, c)) & 0xFF
            elif ftype != 0:
                raise PngError(f"unknown filter type {ftype}")
        out += line
        prev = line
    return width, height, bytes(out)
