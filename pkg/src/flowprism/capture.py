"""Capture sources: pcap/pcapng replay and live AF_PACKET capture.

Every source yields ``(timestamp_ns, frame, wire_length)`` tuples. Live
sources may also yield ``None`` when a read times out so the caller can run
its timers.
"""

from __future__ import annotations

import logging
import os
import socket
import struct
import time
from typing import BinaryIO, Iterable, Iterator, Optional

log = logging.getLogger(__name__)

LINKTYPE_ETHERNET = 1

_PCAP_MAGICS = {
    b"\xd4\xc3\xb2\xa1": ("<", 1000),
    b"\xa1\xb2\xc3\xd4": (">", 1000),
    b"\x4d\x3c\xb2\xa1": ("<", 1),
    b"\xa1\xb2\x3c\x4d": (">", 1),
}
_PCAPNG_SHB = 0x0A0D0D0A

Record = tuple[int, bytes, int]


class CaptureError(Exception):
    pass


def read_capture(path: str | os.PathLike) -> Iterator[Record]:
    """Iterate records of a pcap or pcapng file with nanosecond timestamps."""
    fh = open(path, "rb")
    try:
        magic = fh.read(4)
        if len(magic) < 4:
            if not magic:
                return
            raise CaptureError(f"{path}: truncated file header")
        if magic in _PCAP_MAGICS:
            yield from _read_pcap(fh, magic)
        elif struct.unpack("<I", magic)[0] == _PCAPNG_SHB:
            yield from _read_pcapng(fh)
        else:
            raise CaptureError(f"{path}: not a pcap or pcapng file")
    finally:
        fh.close()


def _read_pcap(fh: BinaryIO, magic: bytes) -> Iterator[Record]:
    endian, ns_mult = _PCAP_MAGICS[magic]
    hdr = fh.read(20)
    if len(hdr) < 20:
        raise CaptureError("truncated pcap global header")
    linktype = struct.unpack(endian + "HHiIII", hdr)[5] & 0x0FFFFFFF
    if linktype != LINKTYPE_ETHERNET:
        raise CaptureError(f"unsupported link type {linktype}")
    rec = struct.Struct(endian + "IIII")
    read = fh.read
    while True:
        h = read(16)
        if len(h) < 16:
            if h:
                log.warning("truncated pcap record header at EOF")
            return
        sec, frac, caplen, origlen = rec.unpack(h)
        data = read(caplen)
        if len(data) < caplen:
            log.warning("truncated pcap record at EOF")
            return
        yield sec * 1_000_000_000 + frac * ns_mult, data, origlen


def _read_pcapng(fh: BinaryIO) -> Iterator[Record]:
    # the section header's block type has already been consumed
    endian = "<"
    interfaces: list[tuple[int, int, int]] = []  # (linktype, units/sec, offset sec)
    btype_raw = struct.pack("<I", _PCAPNG_SHB)
    while True:
        blen_raw = fh.read(4)
        if len(blen_raw) < 4:
            return
        if btype_raw == b"\x0a\x0d\x0d\x0a":
            bom = fh.read(4)
            endian = "<" if bom == b"\x4d\x3c\x2b\x1a" else ">"
            interfaces = []
            blen = struct.unpack(endian + "I", blen_raw)[0]
            body = bom + fh.read(blen - 12)
        else:
            blen = struct.unpack(endian + "I", blen_raw)[0]
            body = fh.read(blen - 8)
        if blen < 12 or len(body) < blen - 8:
            log.warning("truncated pcapng block at EOF")
            return
        btype = struct.unpack(endian + "I", btype_raw)[0]
        body = body[:-4]  # trailing copy of the block length
        if btype == 1:  # interface description
            linktype = struct.unpack_from(endian + "H", body, 0)[0]
            units, offset = _idb_options(body[8:], endian)
            interfaces.append((linktype, units, offset))
        elif btype == 6:  # enhanced packet
            ifid, hi, lo, caplen, origlen = struct.unpack_from(endian + "IIIII", body, 0)
            yield _pcapng_ts(interfaces, ifid, (hi << 32) | lo), bytes(body[20:20 + caplen]), origlen
        elif btype == 3:  # simple packet, carries no timestamp
            origlen = struct.unpack_from(endian + "I", body, 0)[0]
            _check_link(interfaces, 0)
            yield 0, bytes(body[4:4 + origlen]), origlen
        elif btype == 2:  # obsolete packet block
            ifid, _drops, hi, lo, caplen, origlen = struct.unpack_from(endian + "HHIIII", body, 0)
            yield _pcapng_ts(interfaces, ifid, (hi << 32) | lo), bytes(body[20:20 + caplen]), origlen
        btype_raw = fh.read(4)
        if len(btype_raw) < 4:
            return


def _check_link(interfaces, ifid):
    if ifid >= len(interfaces):
        raise CaptureError(f"packet references unknown interface {ifid}")
    if interfaces[ifid][0] != LINKTYPE_ETHERNET:
        raise CaptureError(f"unsupported link type {interfaces[ifid][0]}")


def _pcapng_ts(interfaces, ifid, raw: int) -> int:
    _check_link(interfaces, ifid)
    _, units, offset = interfaces[ifid]
    ns = raw * 1_000_000_000 // units if units != 1_000_000_000 else raw
    return ns + offset * 1_000_000_000


def _idb_options(buf: bytes, endian: str) -> tuple[int, int]:
    units, offset = 1_000_000, 0
    pos = 0
    while pos + 4 <= len(buf):
        code, length = struct.unpack_from(endian + "HH", buf, pos)
        pos += 4
        val = buf[pos:pos + length]
        pos += (length + 3) & ~3
        if code == 0:
            break
        if code == 9 and length >= 1:  # if_tsresol
            r = val[0]
            units = 2 ** (r & 0x7F) if r & 0x80 else 10 ** r
        elif code == 14 and length == 8:  # if_tsoffset
            offset = struct.unpack(endian + "q", val)[0]
    return units, offset


class PcapWriter:
    """Minimal nanosecond-resolution pcap writer (Ethernet link type)."""

    def __init__(self, path: str | os.PathLike, snaplen: int = 262144):
        self._fh = open(path, "wb")
        self._fh.write(struct.pack("<IHHiIII", 0xA1B23C4D, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))
        self._rec = struct.Struct("<IIII")

    def write(self, ts_ns: int, frame: bytes, wire_length: int | None = None) -> None:
        sec, ns = divmod(ts_ns, 1_000_000_000)
        self._fh.write(self._rec.pack(sec, ns, len(frame), wire_length or len(frame)))
        self._fh.write(frame)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class CaptureSource:
    """Narrow interface for packet sources: iterate records, then close."""

    live = False

    def __iter__(self) -> Iterator[Optional[Record]]:
        raise NotImplementedError

    def close(self) -> None:
        pass


class PcapFileSource(CaptureSource):
    def __init__(self, path):
        self.path = path
        if not os.access(path, os.R_OK):
            raise CaptureError(f"cannot read capture file {path}")

    def __iter__(self):
        return read_capture(self.path)


class FrameFeedSource(CaptureSource):
    """Live-style source over an in-memory iterable of frames.

    Timestamps come from ``clock`` at delivery time unless the items already
    carry one. Used by the loopback test harness and for fault injection.
    """

    live = True

    def __init__(self, frames: Iterable, clock=time.time_ns, pace: float = 0.0, idle_tail: float = 0.0):
        self._frames = frames
        self._clock = clock
        self._pace = pace
        self._idle_tail = idle_tail

    def __iter__(self):
        for item in self._frames:
            if self._pace:
                time.sleep(self._pace)
            if item is None:
                yield None
                continue
            if isinstance(item, tuple):
                yield item
            else:
                yield self._clock(), item, len(item)
        deadline = time.monotonic() + self._idle_tail
        while time.monotonic() < deadline:
            time.sleep(0.01)
            yield None


class AfPacketSource(CaptureSource):
    """Linux raw-socket capture on one interface (needs CAP_NET_RAW)."""

    live = True
    ETH_P_ALL = 0x0003

    def __init__(self, iface: str, timeout: float = 0.1, bufsize: int = 65535):
        if not hasattr(socket, "AF_PACKET"):
            raise CaptureError("live capture needs AF_PACKET (Linux)")
        try:
            self._sock = socket.socket(socket.AF_PACKET, socket.SOCK_RAW, socket.htons(self.ETH_P_ALL))
            self._sock.bind((iface, 0))
        except OSError as exc:
            raise CaptureError(f"cannot open {iface}: {exc}") from exc
        self._sock.settimeout(timeout)
        self._bufsize = bufsize
        self._closed = False

    def __iter__(self):
        recv = self._sock.recv
        while not self._closed:
            try:
                frame = recv(self._bufsize)
            except socket.timeout:
                yield None
                continue
            except OSError:
                if self._closed:
                    return
                raise
            yield time.time_ns(), frame, len(frame)

    def close(self) -> None:
        self._closed = True
        self._sock.close()
