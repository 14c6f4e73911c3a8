"""Frame decoding into a normalized packet view, and flow keys.

Addresses are kept as integers (plus an IP version) so flow keys hash
deterministically across processes and compare cheaply.
"""

from __future__ import annotations

import enum
import ipaddress
import socket
import struct
from typing import Iterable, NamedTuple

ETH_HLEN = 14
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_VLAN = (0x8100, 0x88A8, 0x9100)

PROTO_TCP = 6
PROTO_UDP = 17

_IPV6_EXT = {0, 43, 60, 51}
_IPV6_FRAG = 44

_U16 = struct.Struct("!H")
_IPV4 = struct.Struct("!BBHHHBBH4s4s")
_IPV6 = struct.Struct("!IHBB16s16s")
_TCP = struct.Struct("!HHIIBBH")
_UDP = struct.Struct("!HHH")


class Direction(enum.Enum):
    IN = "in"
    OUT = "out"

    __hash__ = object.__hash__  # members are singletons; skips Enum's Python-level hash on the hot path


class TCPFlags(enum.IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20


class DecodeError(Exception):
    """A frame that could not be turned into a DecodedPacket.

    ``category`` is one of ``truncated``, ``unsupported-layer``,
    ``ambiguous-direction``. Ambiguous packets still carry the decoded
    ``packet`` (with ``direction=None``) so DNS between two local hosts can be
    ingested.
    """

    def __init__(self, category: str, detail: str = "", packet=None):
        self.category = category
        self.packet = packet
        super().__init__(f"{category}: {detail}" if detail else category)


class LocalNetworks:
    """Membership test against the configured local prefixes."""

    def __init__(self, prefixes: Iterable):
        v4, v6 = [], []
        for p in prefixes:
            net = p if isinstance(p, (ipaddress.IPv4Network, ipaddress.IPv6Network)) else ipaddress.ip_network(p, strict=False)
            entry = (int(net.network_address), int(net.netmask))
            (v4 if net.version == 4 else v6).append(entry)
        self._v4 = tuple(v4)
        self._v6 = tuple(v6)

    def contains(self, version: int, addr: int) -> bool:
        for net, mask in self._v4 if version == 4 else self._v6:
            if addr & mask == net:
                return True
        return False


def ip_to_str(version: int, addr: int) -> str:
    if version == 4:
        return socket.inet_ntop(socket.AF_INET, addr.to_bytes(4, "big"))
    return socket.inet_ntop(socket.AF_INET6, addr.to_bytes(16, "big"))


def ip_from_any(value) -> tuple[int, int]:
    """(version, int) for an address given as str, bytes or ipaddress object."""
    if isinstance(value, tuple):
        return value
    if isinstance(value, (bytes, bytearray)):
        return (4 if len(value) == 4 else 6), int.from_bytes(value, "big")
    ip = value if isinstance(value, (ipaddress.IPv4Address, ipaddress.IPv6Address)) else ipaddress.ip_address(value)
    return ip.version, int(ip)


class DecodedPacket:
    __slots__ = (
        "timestamp", "direction", "is_tcp", "protocol", "version",
        "src_addr", "dst_addr", "src_port", "dst_port",
        "wire_length", "data_length",
        "tcp_seq", "tcp_ack", "tcp_flags", "tcp_window",
        "frame", "link_length", "payload_start", "payload_end", "is_fragment",
    )

    def __init__(self, timestamp, direction, is_tcp, protocol, version,
                 src_addr, dst_addr, src_port, dst_port, wire_length, data_length,
                 tcp_seq=None, tcp_ack=None, tcp_flags=None, tcp_window=None,
                 frame=b"", link_length=ETH_HLEN, payload_start=0, payload_end=0,
                 is_fragment=False):
        self.timestamp = timestamp
        self.direction = direction
        self.is_tcp = is_tcp
        self.protocol = protocol
        self.version = version
        self.src_addr = src_addr
        self.dst_addr = dst_addr
        self.src_port = src_port
        self.dst_port = dst_port
        self.wire_length = wire_length
        self.data_length = data_length
        self.tcp_seq = tcp_seq
        self.tcp_ack = tcp_ack
        self.tcp_flags = tcp_flags
        self.tcp_window = tcp_window
        self.frame = frame
        self.link_length = link_length
        self.payload_start = payload_start
        self.payload_end = payload_end
        self.is_fragment = is_fragment

    @property
    def src_ip(self):
        return ipaddress.ip_address(self.src_addr) if self.version == 4 else ipaddress.IPv6Address(self.src_addr)

    @property
    def dst_ip(self):
        return ipaddress.ip_address(self.dst_addr) if self.version == 4 else ipaddress.IPv6Address(self.dst_addr)

    @property
    def header_bytes(self) -> bytes:
        """Network plus transport headers."""
        return self.frame[self.link_length:self.payload_start]

    @property
    def payload_bytes(self) -> bytes:
        return self.frame[self.payload_start:self.payload_end]

    @property
    def remote(self) -> tuple[int, int]:
        if self.direction is Direction.OUT:
            return self.version, self.dst_addr
        return self.version, self.src_addr

    @property
    def local(self) -> tuple[int, int]:
        if self.direction is Direction.OUT:
            return self.version, self.src_addr
        return self.version, self.dst_addr

    def has_flag(self, flag: int) -> bool:
        return bool(self.tcp_flags and self.tcp_flags & flag)

    def __repr__(self) -> str:
        return (
            f"DecodedPacket(ts={self.timestamp}, dir={self.direction and self.direction.value}, "
            f"{ip_to_str(self.version, self.src_addr)}:{self.src_port} -> "
            f"{ip_to_str(self.version, self.dst_addr)}:{self.dst_port}, "
            f"proto={self.protocol}, len={self.wire_length}, data={self.data_length})"
        )


def decode(frame: bytes, ts: int, local_prefixes, wire_length: int | None = None) -> DecodedPacket:
    """Decode an Ethernet frame captured at ``ts`` (nanoseconds).

    ``local_prefixes`` is a LocalNetworks or an iterable of CIDR strings.
    Raises DecodeError; never reads past the captured bytes.
    """
    if not isinstance(local_prefixes, LocalNetworks):
        local_prefixes = LocalNetworks(local_prefixes)
    caplen = len(frame)
    if wire_length is None:
        wire_length = caplen
    if caplen < ETH_HLEN:
        raise DecodeError("truncated", f"{caplen}-byte frame")
    off = 12
    ethertype = _U16.unpack_from(frame, off)[0]
    off = ETH_HLEN
    while ethertype in ETHERTYPE_VLAN:
        if caplen < off + 4:
            raise DecodeError("truncated", "VLAN tag")
        ethertype = _U16.unpack_from(frame, off + 2)[0]
        off += 4
    link_length = off
    is_fragment = False

    if ethertype == ETHERTYPE_IPV4:
        if caplen < off + 20:
            raise DecodeError("truncated", "IPv4 header")
        vihl, _tos, total_len, _ident, frag, _ttl, proto, _csum, src, dst = _IPV4.unpack_from(frame, off)
        if vihl >> 4 != 4:
            raise DecodeError("unsupported-layer", "bad IPv4 version")
        ihl = (vihl & 0x0F) * 4
        if ihl < 20 or caplen < off + ihl:
            raise DecodeError("truncated", "IPv4 options")
        version = 4
        src_addr = int.from_bytes(src, "big")
        dst_addr = int.from_bytes(dst, "big")
        ip_end = off + total_len if total_len >= ihl else caplen
        is_fragment = (frag & 0x1FFF) != 0
        off += ihl
    elif ethertype == ETHERTYPE_IPV6:
        if caplen < off + 40:
            raise DecodeError("truncated", "IPv6 header")
        _vtf, plen, proto, _hop, src, dst = _IPV6.unpack_from(frame, off)
        version = 6
        src_addr = int.from_bytes(src, "big")
        dst_addr = int.from_bytes(dst, "big")
        ip_end = off + 40 + plen
        off += 40
        while proto in _IPV6_EXT or proto == _IPV6_FRAG:
            if caplen < off + 8:
                raise DecodeError("truncated", "IPv6 extension header")
            nxt = frame[off]
            if proto == _IPV6_FRAG:
                if _U16.unpack_from(frame, off + 2)[0] & 0xFFF8:
                    is_fragment = True
                ext_len = 8
            elif proto == 51:
                ext_len = (frame[off + 1] + 2) * 4
            else:
                ext_len = (frame[off + 1] + 1) * 8
            proto = nxt
            off += ext_len
            if is_fragment:
                break
    else:
        raise DecodeError("unsupported-layer", f"ethertype 0x{ethertype:04x}")

    ip_end = min(ip_end, caplen)
    if ip_end < off:
        raise DecodeError("truncated", "IP length shorter than headers")

    direction = _direction(local_prefixes, version, src_addr, dst_addr)

    if is_fragment:
        if proto not in (PROTO_TCP, PROTO_UDP):
            raise DecodeError("unsupported-layer", f"IP protocol {proto}")
        pkt = DecodedPacket(ts, direction, False, proto, version, src_addr, dst_addr, 0, 0,
                            wire_length, 0, frame=frame, link_length=link_length,
                            payload_start=ip_end, payload_end=ip_end, is_fragment=True)
        return _check_direction(pkt)

    if proto == PROTO_TCP:
        if ip_end < off + 20:
            raise DecodeError("truncated", "TCP header")
        sport, dport, seq, ack, doff, flags, window = _TCP.unpack_from(frame, off)
        thl = (doff >> 4) * 4
        if thl < 20 or ip_end < off + thl:
            raise DecodeError("truncated", "TCP options")
        payload_start = off + thl
        pkt = DecodedPacket(ts, direction, True, proto, version, src_addr, dst_addr, sport, dport,
                            wire_length, ip_end - payload_start, seq, ack, flags & 0x3F, window,
                            frame, link_length, payload_start, ip_end)
    elif proto == PROTO_UDP:
        if ip_end < off + 8:
            raise DecodeError("truncated", "UDP header")
        sport, dport, ulen = _UDP.unpack_from(frame, off)
        payload_start = off + 8
        payload_end = min(ip_end, off + ulen) if ulen >= 8 else ip_end
        pkt = DecodedPacket(ts, direction, False, proto, version, src_addr, dst_addr, sport, dport,
                            wire_length, payload_end - payload_start,
                            frame=frame, link_length=link_length,
                            payload_start=payload_start, payload_end=payload_end)
    else:
        raise DecodeError("unsupported-layer", f"IP protocol {proto}")
    return _check_direction(pkt)


def _direction(local: LocalNetworks, version: int, src: int, dst: int):
    src_local = local.contains(version, src)
    dst_local = local.contains(version, dst)
    if src_local and not dst_local:
        return Direction.OUT
    if dst_local and not src_local:
        return Direction.IN
    return None


def _check_direction(pkt: DecodedPacket) -> DecodedPacket:
    if pkt.direction is None:
        raise DecodeError("ambiguous-direction", "neither or both endpoints local", packet=pkt)
    return pkt


class FlowKey(NamedTuple):
    """Direction-independent flow identity.

    Endpoints are ordered so that (addr_lo, port_lo) <= (addr_hi, port_hi).
    """

    protocol: int
    addr_lo: int
    addr_hi: int
    port_lo: int
    port_hi: int
    version: int = 4

    @property
    def protocol_name(self) -> str:
        return {PROTO_TCP: "TCP", PROTO_UDP: "UDP"}.get(self.protocol, str(self.protocol))

    def as_dict(self) -> dict:
        return {
            "proto": self.protocol_name,
            "addr_lo": ip_to_str(self.version, self.addr_lo),
            "port_lo": self.port_lo,
            "addr_hi": ip_to_str(self.version, self.addr_hi),
            "port_hi": self.port_hi,
        }


def flow_key(pkt: DecodedPacket) -> FlowKey:
    if pkt.is_fragment:
        # non-first fragments carry no ports: one bucket per source
        return FlowKey(pkt.protocol, pkt.src_addr, pkt.src_addr, 0, 0, pkt.version)
    a, pa, b, pb = pkt.src_addr, pkt.src_port, pkt.dst_addr, pkt.dst_port
    if (a, pa) <= (b, pb):
        return FlowKey(pkt.protocol, a, b, pa, pb, pkt.version)
    return FlowKey(pkt.protocol, b, a, pb, pa, pkt.version)
