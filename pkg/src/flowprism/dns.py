"""Minimal DNS message parser: questions and A/AAAA/CNAME answers."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

TYPE_A = 1
TYPE_CNAME = 5
TYPE_AAAA = 28

_HDR = struct.Struct("!HHHHHH")
_RR = struct.Struct("!HHIH")


class DnsParseError(ValueError):
    pass


@dataclass
class DnsRecord:
    name: str
    rtype: int
    ttl: int
    value: object  # bytes for A/AAAA, str for CNAME, raw rdata otherwise


@dataclass
class DnsMessage:
    ident: int
    is_response: bool
    rcode: int
    questions: list[str] = field(default_factory=list)
    answers: list[DnsRecord] = field(default_factory=list)
    truncated: bool = False


def _read_name(buf: bytes, pos: int) -> tuple[str, int]:
    labels = []
    end = None
    hops = 0
    n = len(buf)
    while True:
        if pos >= n:
            raise DnsParseError("name runs past end of message")
        length = buf[pos]
        if length & 0xC0 == 0xC0:
            if pos + 1 >= n:
                raise DnsParseError("truncated compression pointer")
            if end is None:
                end = pos + 2
            pos = ((length & 0x3F) << 8) | buf[pos + 1]
            hops += 1
            if hops > 64:
                raise DnsParseError("compression loop")
            continue
        if length & 0xC0:
            raise DnsParseError("unsupported label type")
        pos += 1
        if length == 0:
            break
        if pos + length > n:
            raise DnsParseError("label runs past end of message")
        labels.append(buf[pos:pos + length].decode("ascii", "replace").lower())
        pos += length
    return ".".join(labels), (end if end is not None else pos)


def parse_message(buf: bytes) -> DnsMessage:
    """Parse a DNS message.

    Raises DnsParseError if the header or question section is unusable. A
    malformed answer section yields the records parsed so far with
    ``truncated=True``.
    """
    if len(buf) < 12:
        raise DnsParseError("message shorter than header")
    ident, flags, qd, an, _ns, _ar = _HDR.unpack_from(buf, 0)
    msg = DnsMessage(ident=ident, is_response=bool(flags & 0x8000), rcode=flags & 0x000F)
    if flags & 0x0200:
        msg.truncated = True
    pos = 12
    for _ in range(qd):
        name, pos = _read_name(buf, pos)
        if pos + 4 > len(buf):
            raise DnsParseError("truncated question")
        pos += 4
        msg.questions.append(name)
    for _ in range(an):
        try:
            name, pos = _read_name(buf, pos)
            if pos + 10 > len(buf):
                raise DnsParseError("truncated resource record")
            rtype, _cls, ttl, rdlen = _RR.unpack_from(buf, pos)
            pos += 10
            if pos + rdlen > len(buf):
                raise DnsParseError("truncated rdata")
            rdata = buf[pos:pos + rdlen]
            if rtype == TYPE_A:
                if rdlen != 4:
                    raise DnsParseError("bad A record length")
                value = bytes(rdata)
            elif rtype == TYPE_AAAA:
                if rdlen != 16:
                    raise DnsParseError("bad AAAA record length")
                value = bytes(rdata)
            elif rtype == TYPE_CNAME:
                value, _ = _read_name(buf, pos)
            else:
                value = bytes(rdata)
            pos += rdlen
        except DnsParseError:
            msg.truncated = True
            break
        msg.answers.append(DnsRecord(name, rtype, ttl, value))
    return msg


def answer_chains(msg: DnsMessage) -> list[tuple[list[str], list[DnsRecord]]]:
    """Group address answers by the CNAME chain that leads to them.

    Each entry is (names along the chain starting at the query name, A/AAAA
    records owned by the final names). Address records not reachable from a
    question are grouped under their own owner name.
    """
    cnames: dict[str, str] = {}
    addrs: dict[str, list[DnsRecord]] = {}
    for rr in msg.answers:
        if rr.rtype == TYPE_CNAME:
            cnames.setdefault(rr.name, rr.value)
        elif rr.rtype in (TYPE_A, TYPE_AAAA):
            addrs.setdefault(rr.name, []).append(rr)
    chains = []
    reached: set[str] = set()
    for q in msg.questions:
        names = [q]
        seen = {q}
        while names[-1] in cnames and cnames[names[-1]] not in seen:
            nxt = cnames[names[-1]]
            names.append(nxt)
            seen.add(nxt)
        records = [rr for n in names for rr in addrs.get(n, [])]
        reached.update(names)
        chains.append((names, records))
    parents = {v: k for k, v in cnames.items()}
    for owner, records in addrs.items():
        if owner not in reached:
            names = [owner]
            while names[0] in parents and parents[names[0]] not in names:
                names.insert(0, parents[names[0]])
            chains.append((names, records))
    return chains
